use num_traits::{Float, FromPrimitive};
use rand::Rng;
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use super::NnError;

/// Scalar type the network is generic over (`f32` for training, `f64` for checks).
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub const HIDDEN_UNITS: usize = 20;
pub const GATES: usize = 4;

/// Gate blocks in their storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub hidden: usize,
    pub input: usize,
    pub classes: usize,
}

impl Dims {
    pub const fn new(hidden: usize, input: usize, classes: usize) -> Self {
        Self {
            hidden,
            input,
            classes,
        }
    }

    /// 20 hidden units over a flattened 28x28 image.
    pub const fn mnist(classes: usize) -> Self {
        Self::new(HIDDEN_UNITS, crate::data::IMAGE_PIXELS, classes)
    }

    pub const fn gate_width(&self) -> usize {
        GATES * self.hidden
    }

    pub const fn param_count(&self) -> usize {
        let g = self.gate_width();
        self.input * g + self.hidden * g + g + self.classes * self.hidden + self.classes
    }

    fn offsets(&self) -> [usize; 5] {
        let g = self.gate_width();
        let w_rec = self.input * g;
        let b_gates = w_rec + self.hidden * g;
        let w_dense = b_gates + g;
        let b_dense = w_dense + self.classes * self.hidden;
        [0, w_rec, b_gates, w_dense, b_dense]
    }
}

/// Borrowed parameter blocks.
///
/// Input and recurrent weights are stored source-major: row `j` holds the
/// `4H` gate weights fed by input (or hidden) unit `j`, in gate order
/// `[i, f, o, g]`. The dense matrix is class-major, `[K][H]`.
#[derive(Debug, Clone, Copy)]
pub struct ParamsView<'a, T> {
    pub w_input: &'a [T],
    pub w_recurrent: &'a [T],
    pub b_gates: &'a [T],
    pub w_dense: &'a [T],
    pub b_dense: &'a [T],
}

#[derive(Debug)]
pub struct ParamsViewMut<'a, T> {
    pub w_input: &'a mut [T],
    pub w_recurrent: &'a mut [T],
    pub b_gates: &'a mut [T],
    pub w_dense: &'a mut [T],
    pub b_dense: &'a mut [T],
}

/// All trainable weights of the LSTM cell and its dense readout, in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.param_count()],
        }
    }

    pub fn from_flat(dims: Dims, data: Vec<T>) -> Result<Self, NnError> {
        if data.len() != dims.param_count() {
            return Err(NnError::ShapeMismatch {
                what: "parameter buffer",
                expected: dims.param_count(),
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    /// Uniform `[-s, s]` weights with `s = 1/sqrt(fan_in)` per matrix, zero
    /// biases except the forget gate, which starts at 1.
    pub fn init<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let mut params = Self::zeros(dims);
        let h = dims.hidden;
        let fill = |buf: &mut [T], fan_in: usize, rng: &mut R| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for w in buf {
                *w = T::of(rng.random_range(-s..=s));
            }
        };
        let p = params.view_mut();
        fill(p.w_input, dims.input, rng);
        fill(p.w_recurrent, h, rng);
        fill(p.w_dense, h, rng);
        p.b_gates[h..2 * h].fill(T::one());
        params
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn view(&self) -> ParamsView<'_, T> {
        let [_, a, b, c, d] = self.dims.offsets();
        let (w_input, rest) = self.data.split_at(a);
        let (w_recurrent, rest) = rest.split_at(b - a);
        let (b_gates, rest) = rest.split_at(c - b);
        let (w_dense, b_dense) = rest.split_at(d - c);
        ParamsView {
            w_input,
            w_recurrent,
            b_gates,
            w_dense,
            b_dense,
        }
    }

    pub fn view_mut(&mut self) -> ParamsViewMut<'_, T> {
        let [_, a, b, c, d] = self.dims.offsets();
        let (w_input, rest) = self.data.split_at_mut(a);
        let (w_recurrent, rest) = rest.split_at_mut(b - a);
        let (b_gates, rest) = rest.split_at_mut(c - b);
        let (w_dense, b_dense) = rest.split_at_mut(d - c);
        ParamsViewMut {
            w_input,
            w_recurrent,
            b_gates,
            w_dense,
            b_dense,
        }
    }

    /// Weight from input unit `source` to hidden unit `unit` of `gate`.
    pub fn input_weight(&self, gate: Gate, unit: usize, source: usize) -> T {
        self.data[self.input_index(gate, unit, source)]
    }

    pub fn input_index(&self, gate: Gate, unit: usize, source: usize) -> usize {
        source * self.dims.gate_width() + gate as usize * self.dims.hidden + unit
    }

    /// Weight from previous hidden unit `source` to hidden unit `unit` of `gate`.
    pub fn recurrent_weight(&self, gate: Gate, unit: usize, source: usize) -> T {
        self.data[self.recurrent_index(gate, unit, source)]
    }

    pub fn recurrent_index(&self, gate: Gate, unit: usize, source: usize) -> usize {
        self.dims.offsets()[1]
            + source * self.dims.gate_width()
            + gate as usize * self.dims.hidden
            + unit
    }

    pub fn gate_bias(&self, gate: Gate) -> &[T] {
        let h = self.dims.hidden;
        &self.view().b_gates[gate as usize * h..(gate as usize + 1) * h]
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [T] {
        let h = self.dims.hidden;
        &mut self.view_mut().b_gates[gate as usize * h..(gate as usize + 1) * h]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    pub fn scale(&mut self, factor: T) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        LstmParams {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|x| U::of(x.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}
