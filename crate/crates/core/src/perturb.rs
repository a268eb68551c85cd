//! Contrast reduction and additive noise applied at evaluation time.
//!
//! A stimulus is first multiplied by the thresholding factor `t`, then each
//! sequence step receives an independently drawn non-negative noise field and
//! the result is clamped to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("thresholding factor {0} outside [0, 1]")]
    OutOfRangeFactor(f32),
    #[error("noise level {0} must be non-negative and finite")]
    NegativeLevel(f32),
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("unknown noise kind {0:?} (expected none, uniform or gaussian)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    /// `U[0, level)`
    Uniform,
    /// `max(0, N(0, level²))`
    Gaussian,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseKind::None),
            "uniform" => Ok(NoiseKind::Uniform),
            "gaussian" => Ok(NoiseKind::Gaussian),
            other => Err(PerturbError::UnknownKind(other.to_string())),
        }
    }
}

/// One evaluation setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub t_factor: f32,
    pub noise_kind: NoiseKind,
    pub noise_level: f32,
    pub seq_len: usize,
}

impl Condition {
    pub fn new(
        t_factor: f32,
        noise_kind: NoiseKind,
        noise_level: f32,
        seq_len: usize,
    ) -> Result<Self, PerturbError> {
        let cond = Self {
            t_factor,
            noise_kind,
            noise_level,
            seq_len,
        };
        cond.validate()?;
        Ok(cond)
    }

    /// Original images, no noise.
    pub fn clean(seq_len: usize) -> Self {
        Self {
            t_factor: 1.0,
            noise_kind: NoiseKind::None,
            noise_level: 0.0,
            seq_len,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if !(0.0..=1.0).contains(&self.t_factor) {
            return Err(PerturbError::OutOfRangeFactor(self.t_factor));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(PerturbError::NegativeLevel(self.noise_level));
        }
        if self.seq_len == 0 {
            return Err(PerturbError::ZeroLength);
        }
        Ok(())
    }

    /// Noise level actually applied; `none` always means zero.
    pub fn effective_level(&self) -> f32 {
        match self.noise_kind {
            NoiseKind::None => 0.0,
            _ => self.noise_level,
        }
    }

    pub fn is_noisy(&self) -> bool {
        self.effective_level() > 0.0
    }

    /// Stable identifier used to derive this condition's noise streams.
    pub fn key(&self) -> u64 {
        let kind = match self.noise_kind {
            NoiseKind::None => 0,
            NoiseKind::Uniform => 1,
            NoiseKind::Gaussian => 2,
        };
        derive_seed(&[
            u64::from(self.t_factor.to_bits()),
            kind,
            u64::from(self.effective_level().to_bits()),
            self.seq_len as u64,
        ])
    }
}

pub fn apply_contrast(image: &[f32], t: f32) -> Result<Vec<f32>, PerturbError> {
    let mut out = image.to_vec();
    apply_contrast_in_place(&mut out, t)?;
    Ok(out)
}

pub fn apply_contrast_in_place(image: &mut [f32], t: f32) -> Result<(), PerturbError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(PerturbError::OutOfRangeFactor(t));
    }
    for p in image {
        *p *= t;
    }
    Ok(())
}

/// Fills `out` with i.i.d. noise of the given kind.
pub fn sample_noise_into<R: Rng + ?Sized>(
    kind: NoiseKind,
    level: f32,
    rng: &mut R,
    out: &mut [f32],
) -> Result<(), PerturbError> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(PerturbError::NegativeLevel(level));
    }
    if kind == NoiseKind::None || level == 0.0 {
        out.fill(0.0);
        return Ok(());
    }
    match kind {
        NoiseKind::Uniform => {
            let dist = Uniform::new(0.0f32, level).expect("level > 0");
            for v in out {
                *v = dist.sample(rng);
            }
        }
        NoiseKind::Gaussian => {
            for v in out {
                let z: f32 = StandardNormal.sample(rng);
                *v = (level * z).max(0.0);
            }
        }
        NoiseKind::None => unreachable!(),
    }
    Ok(())
}

pub fn sample_noise<R: Rng + ?Sized>(
    kind: NoiseKind,
    level: f32,
    rng: &mut R,
) -> Result<Vec<f32>, PerturbError> {
    let mut out = vec![0.0; crate::data::IMAGE_PIXELS];
    sample_noise_into(kind, level, rng, &mut out)?;
    Ok(out)
}

/// `out = clamp(base + noise, 0, 1)` with freshly drawn noise.
pub fn noisy_step_into<R: Rng + ?Sized>(
    base: &[f32],
    cond: &Condition,
    rng: &mut R,
    out: &mut [f32],
) -> Result<(), PerturbError> {
    sample_noise_into(cond.noise_kind, cond.effective_level(), rng, out)?;
    for (o, &b) in out.iter_mut().zip(base) {
        *o = (b + *o).clamp(0.0, 1.0);
    }
    Ok(())
}

/// `seq_len` images: the contrasted stimulus plus noise redrawn at every step.
pub fn perturbed_sequence<R: Rng + ?Sized>(
    image: &[f32],
    cond: &Condition,
    rng: &mut R,
) -> Result<Vec<Vec<f32>>, PerturbError> {
    cond.validate()?;
    let base = apply_contrast(image, cond.t_factor)?;
    (0..cond.seq_len)
        .map(|_| {
            let mut step = vec![0.0; base.len()];
            noisy_step_into(&base, cond, rng, &mut step)?;
            Ok(step)
        })
        .collect()
}
