//! LSTM cell with ReLU candidate and cell-output activations, a dense readout
//! on the final hidden state, and backpropagation through time.
//!
//! Per step, with `z = W·x + U·h_prev + b` split into gate blocks:
//!
//! ```text
//! i = σ(z_i)   f = σ(z_f)   o = σ(z_o)   g = relu(z_g)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ relu(c)
//! ```
//!
//! The ReLU derivative at exactly zero is taken to be zero.

use super::params::{Dims, LstmParams, ParamsView, Real};
use super::NnError;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// `out += Σ_j x[j] · w[j]` over source-major rows of length `out.len()`.
/// Zero sources are skipped, so sparse (mostly black) images are cheap.
#[inline]
fn accumulate_rows<T: Real>(w: &[T], x: &[T], out: &mut [T]) {
    let width = out.len();
    for (row, &xj) in w.chunks_exact(width).zip(x) {
        if xj != T::zero() {
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += xj * wv;
            }
        }
    }
}

/// `w[j] += x[j] · delta` for every source row `j`.
#[inline]
fn accumulate_outer<T: Real>(w: &mut [T], x: &[T], delta: &[T]) {
    let width = delta.len();
    for (row, &xj) in w.chunks_exact_mut(width).zip(x) {
        if xj != T::zero() {
            for (wv, &d) in row.iter_mut().zip(delta) {
                *wv += xj * d;
            }
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Intermediate values of one step, kept for BPTT.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache<T> {
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Activated gates `[i, f, o, g]`, `4H` values.
    pub gates: Vec<T>,
    pub c: Vec<T>,
    pub h: Vec<T>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    dims: Dims,
    /// Distinct consecutive inputs; runs of identical steps share one entry.
    inputs: Vec<Vec<T>>,
    input_of_step: Vec<usize>,
    steps: Vec<StepCache<T>>,
}

impl<T> ForwardCache<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[StepCache<T>] {
        &self.steps
    }

    pub fn final_hidden(&self) -> &[T] {
        &self.steps[self.steps.len() - 1].h
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), NnError> {
    if expected == found {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch {
            what,
            expected,
            found,
        })
    }
}

fn project_input<T: Real>(p: &ParamsView<'_, T>, x: &[T], out: &mut [T]) {
    out.fill(T::zero());
    accumulate_rows(p.w_input, x, out);
}

/// Gate pre-activations `b + W·x + U·h_prev`, with `W·x` supplied.
fn preactivations<T: Real>(p: &ParamsView<'_, T>, projection: &[T], h_prev: &[T], z: &mut [T]) {
    z.copy_from_slice(p.b_gates);
    for (zv, &pv) in z.iter_mut().zip(projection) {
        *zv += pv;
    }
    accumulate_rows(p.w_recurrent, h_prev, z);
}

/// Activates `z` in place and advances the state.
fn activate<T: Real>(hidden: usize, z: &mut [T], c_prev: &[T], c: &mut [T], h: &mut [T]) {
    for u in 0..hidden {
        let i = sigmoid(z[u]);
        let f = sigmoid(z[hidden + u]);
        let o = sigmoid(z[2 * hidden + u]);
        let g = relu(z[3 * hidden + u]);
        z[u] = i;
        z[hidden + u] = f;
        z[2 * hidden + u] = o;
        z[3 * hidden + u] = g;
        c[u] = f * c_prev[u] + i * g;
        h[u] = o * relu(c[u]);
    }
}

fn step_from_projection<T: Real>(
    p: &ParamsView<'_, T>,
    hidden: usize,
    projection: &[T],
    h_prev: &[T],
    c_prev: &[T],
) -> StepCache<T> {
    let mut gates = vec![T::zero(); projection.len()];
    let mut c = vec![T::zero(); hidden];
    let mut h = vec![T::zero(); hidden];
    preactivations(p, projection, h_prev, &mut gates);
    activate(hidden, &mut gates, c_prev, &mut c, &mut h);
    StepCache {
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        h,
    }
}

fn dense<T: Real>(p: &ParamsView<'_, T>, h: &[T], logits: &mut [T]) {
    for (k, (l, &b)) in logits.iter_mut().zip(p.b_dense).enumerate() {
        let row = &p.w_dense[k * h.len()..(k + 1) * h.len()];
        *l = b + row.iter().zip(h).map(|(&w, &x)| w * x).sum::<T>();
    }
}

/// New hidden state, new cell state and the step's cache.
pub type StepOutput<T> = (Vec<T>, Vec<T>, StepCache<T>);

/// One LSTM step. Returns `(h, c, cache)`.
pub fn lstm_step<T: Real>(
    params: &LstmParams<T>,
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
) -> Result<StepOutput<T>, NnError> {
    let dims = params.dims();
    check_len("input vector", dims.input, x.len())?;
    check_len("previous hidden state", dims.hidden, h_prev.len())?;
    check_len("previous cell state", dims.hidden, c_prev.len())?;
    let p = params.view();
    let mut projection = vec![T::zero(); dims.gate_width()];
    project_input(&p, x, &mut projection);
    let cache = step_from_projection(&p, dims.hidden, &projection, h_prev, c_prev);
    Ok((cache.h.clone(), cache.c.clone(), cache))
}

fn check_sequence<T>(dims: Dims, inputs: &[&[T]]) -> Result<(), NnError> {
    if inputs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    inputs
        .iter()
        .try_for_each(|x| check_len("input vector", dims.input, x.len()))
}

/// Runs the cell over `inputs` from a zero state and reads out logits from
/// the final hidden state.
pub fn forward<T: Real>(
    params: &LstmParams<T>,
    inputs: &[&[T]],
) -> Result<(Vec<T>, ForwardCache<T>), NnError> {
    let dims = params.dims();
    check_sequence(dims, inputs)?;
    let p = params.view();

    let mut cache = ForwardCache {
        dims,
        inputs: Vec::new(),
        input_of_step: Vec::with_capacity(inputs.len()),
        steps: Vec::with_capacity(inputs.len()),
    };
    let mut projection = vec![T::zero(); dims.gate_width()];
    let zeros = vec![T::zero(); dims.hidden];
    for (t, &x) in inputs.iter().enumerate() {
        // W·x is shared by runs of identical inputs
        if t == 0 || x != inputs[t - 1] {
            project_input(&p, x, &mut projection);
            cache.inputs.push(x.to_vec());
        }
        cache.input_of_step.push(cache.inputs.len() - 1);
        let step = match cache.steps.last() {
            Some(prev) => step_from_projection(&p, dims.hidden, &projection, &prev.h, &prev.c),
            None => step_from_projection(&p, dims.hidden, &projection, &zeros, &zeros),
        };
        cache.steps.push(step);
    }
    let mut logits = vec![T::zero(); dims.classes];
    dense(&p, cache.final_hidden(), &mut logits);
    Ok((logits, cache))
}

/// Reusable buffers for cache-free inference.
#[derive(Debug, Clone)]
pub struct Scratch<T> {
    projection: Vec<T>,
    z: Vec<T>,
    h: Vec<T>,
    c: Vec<T>,
    c_prev: Vec<T>,
    h_prev: Vec<T>,
    logits: Vec<T>,
}

impl<T: Real> Scratch<T> {
    pub fn new(dims: Dims) -> Self {
        Self {
            projection: vec![T::zero(); dims.gate_width()],
            z: vec![T::zero(); dims.gate_width()],
            h: vec![T::zero(); dims.hidden],
            c: vec![T::zero(); dims.hidden],
            c_prev: vec![T::zero(); dims.hidden],
            h_prev: vec![T::zero(); dims.hidden],
            logits: vec![T::zero(); dims.classes],
        }
    }
}

/// Same arithmetic as [`forward`] without retaining the cache.
pub fn infer<'s, T: Real>(
    params: &LstmParams<T>,
    inputs: &[&[T]],
    scratch: &'s mut Scratch<T>,
) -> Result<&'s [T], NnError> {
    let dims = params.dims();
    check_sequence(dims, inputs)?;
    check_len("scratch width", dims.gate_width(), scratch.z.len())?;
    check_len("scratch classes", dims.classes, scratch.logits.len())?;
    let p = params.view();
    scratch.h.fill(T::zero());
    scratch.c.fill(T::zero());
    for (t, &x) in inputs.iter().enumerate() {
        if t == 0 || x != inputs[t - 1] {
            project_input(&p, x, &mut scratch.projection);
        }
        std::mem::swap(&mut scratch.h, &mut scratch.h_prev);
        std::mem::swap(&mut scratch.c, &mut scratch.c_prev);
        preactivations(&p, &scratch.projection, &scratch.h_prev, &mut scratch.z);
        activate(
            dims.hidden,
            &mut scratch.z,
            &scratch.c_prev,
            &mut scratch.c,
            &mut scratch.h,
        );
    }
    dense(&p, &scratch.h, &mut scratch.logits);
    Ok(&scratch.logits)
}

/// Predicted class (argmax of final-step logits, lowest index on ties).
pub fn predict<T: Real>(
    params: &LstmParams<T>,
    inputs: &[&[T]],
    scratch: &mut Scratch<T>,
) -> Result<usize, NnError> {
    infer(params, inputs, scratch).map(argmax)
}

/// Exact gradients of the loss whose logit gradient is `dlogits`.
pub fn backward<T: Real>(
    params: &LstmParams<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T],
) -> Result<LstmParams<T>, NnError> {
    let mut grads = LstmParams::zeros(params.dims());
    accumulate_gradients(params, cache, dlogits, &mut grads)?;
    Ok(grads)
}

/// Adds this example's gradients into `grads`.
pub fn accumulate_gradients<T: Real>(
    params: &LstmParams<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T],
    grads: &mut LstmParams<T>,
) -> Result<(), NnError> {
    let dims = params.dims();
    if cache.dims != dims || grads.dims() != dims || cache.is_empty() {
        return Err(NnError::CacheMismatch);
    }
    check_len("logit gradient", dims.classes, dlogits.len())?;
    let hidden = dims.hidden;
    let p = params.view();
    let g = grads.view_mut();

    let h_last = cache.final_hidden();
    let mut dh = vec![T::zero(); hidden];
    for (k, &dl) in dlogits.iter().enumerate() {
        g.b_dense[k] += dl;
        let row = k * hidden..(k + 1) * hidden;
        for ((gw, &w), (&hv, dhv)) in g.w_dense[row.clone()]
            .iter_mut()
            .zip(&p.w_dense[row])
            .zip(h_last.iter().zip(dh.iter_mut()))
        {
            *gw += dl * hv;
            *dhv += dl * w;
        }
    }

    let mut dc = vec![T::zero(); hidden];
    let mut dz = vec![T::zero(); dims.gate_width()];
    let mut pending = vec![T::zero(); dims.gate_width()];
    for t in (0..cache.len()).rev() {
        let s = &cache.steps[t];
        for u in 0..hidden {
            let (i, f, o, gv) = (
                s.gates[u],
                s.gates[hidden + u],
                s.gates[2 * hidden + u],
                s.gates[3 * hidden + u],
            );
            let d_o = dh[u] * relu(s.c[u]);
            let mut dct = dc[u];
            if s.c[u] > T::zero() {
                dct += dh[u] * o;
            }
            let one = T::one();
            dz[u] = dct * gv * i * (one - i);
            dz[hidden + u] = dct * s.c_prev[u] * f * (one - f);
            dz[2 * hidden + u] = d_o * o * (one - o);
            dz[3 * hidden + u] = if gv > T::zero() { dct * i } else { T::zero() };
            dc[u] = dct * f;
        }
        for (b, &d) in g.b_gates.iter_mut().zip(&dz) {
            *b += d;
        }
        accumulate_outer(g.w_recurrent, &s.h_prev, &dz);
        for (acc, &d) in pending.iter_mut().zip(&dz) {
            *acc += d;
        }
        let slot = cache.input_of_step[t];
        if t == 0 || cache.input_of_step[t - 1] != slot {
            accumulate_outer(g.w_input, &cache.inputs[slot], &pending);
            pending.fill(T::zero());
        }
        for (dhv, row) in dh.iter_mut().zip(p.w_recurrent.chunks_exact(dz.len())) {
            *dhv = row.iter().zip(&dz).map(|(&w, &d)| w * d).sum();
        }
    }
    Ok(())
}
