//! Cosine-scheduled forward diffusion used to perturb discriminator inputs.
//!
//! `β_t = β_0 + ½(β_T − β_0)(1 + cos(π(T − t)/T))` for `t = 1..T`,
//! `α_t = 1 − β_t`, `ᾱ_t = Π_{i≤t} α_i`. Steps are 1-based.

use ndarray::{Array, Dimension};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule range: {0}")]
    InvalidRange(String),
    #[error("diffusion step {step} outside 1..={max}")]
    StepOutOfRange { step: usize, max: usize },
    #[error("noise shape {noise:?} differs from sample shape {sample:?}")]
    ShapeMismatch { sample: Vec<usize>, noise: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Precomputed schedule arrays; index `t − 1` holds step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub params: ScheduleParams,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule, ScheduleError> {
    if steps == 0 {
        return Err(ScheduleError::InvalidRange("steps must be >= 1".into()));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(ScheduleError::InvalidRange(format!(
            "need 0 < beta_start ({beta_start}) < beta_end ({beta_end}) < 1"
        )));
    }
    let total = steps as f64;
    let beta: Vec<f64> = (1..=steps)
        .map(|t| {
            let phase = std::f64::consts::PI * (total - t as f64) / total;
            beta_start + 0.5 * (beta_end - beta_start) * (1.0 + phase.cos())
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(DiffusionSchedule {
        params: ScheduleParams {
            steps,
            beta_start,
            beta_end,
        },
        beta,
        alpha,
        alpha_bar,
    })
}

impl DiffusionSchedule {
    pub fn from_params(p: ScheduleParams) -> Result<Self, ScheduleError> {
        make_schedule(p.steps, p.beta_start, p.beta_end)
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_at(&self, t: usize) -> Result<f64, ScheduleError> {
        self.check(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64, ScheduleError> {
        self.check(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    fn check(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.steps() {
            return Err(ScheduleError::StepOutOfRange {
                step: t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `(√ᾱ_t, √(1 − ᾱ_t))`.
    pub fn coefficients(&self, t: usize) -> Result<(f64, f64), ScheduleError> {
        let ab = self.alpha_bar_at(t)?;
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }

    /// `√ᾱ_t·x + √(1 − ᾱ_t)·noise`.
    pub fn add_noise<D: Dimension>(
        &self,
        x: &Array<f64, D>,
        t: usize,
        noise: &Array<f64, D>,
    ) -> Result<Array<f64, D>, ScheduleError> {
        let (signal, spread) = self.coefficients(t)?;
        if x.shape() != noise.shape() {
            return Err(ScheduleError::ShapeMismatch {
                sample: x.shape().to_vec(),
                noise: noise.shape().to_vec(),
            });
        }
        Ok(x * signal + noise * spread)
    }
}

/// Uniform diffusion step in `1..=steps`.
pub fn sample_step(rng: &mut impl Rng, steps: usize) -> usize {
    rng.random_range(1..=steps.max(1))
}
