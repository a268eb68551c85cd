use super::params::{LstmParams, Real};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &LstmParams<T>, config: AdamConfig) -> Self {
        let n = params.as_slice().len();
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam step.
    pub fn update(
        &mut self,
        params: &mut LstmParams<T>,
        grads: &LstmParams<T>,
    ) -> Result<(), NnError> {
        let n = self.m.len();
        for found in [params.as_slice().len(), grads.as_slice().len()] {
            if found != n {
                return Err(NnError::ShapeMismatch {
                    what: "optimizer state",
                    expected: n,
                    found,
                });
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let beta1 = T::of(c.beta1);
        let beta2 = T::of(c.beta2);
        let one = T::one();
        let correction1 = T::of(1.0 - c.beta1.powi(t));
        let correction2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (one - beta1) * g;
            *v = beta2 * *v + (one - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
