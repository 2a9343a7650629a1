//! Reversible instance normalization.
//!
//! Statistics come from observed (finite) entries only; NaN entries pass
//! through both directions untouched. Variance uses the population divisor.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Tape, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum RevinError {
    #[error("no observed values to compute statistics from")]
    EmptySequence,
    #[error("shape mismatch: state has {expected} channels, input has {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("gamma is zero for channel {0}; normalization is not invertible")]
    ZeroGamma(usize),
}

/// Mean and population variance of a sequence of observations.
pub fn compute_stats(values: &[f64]) -> Result<(f64, f64), RevinError> {
    if values.is_empty() {
        return Err(RevinError::EmptySequence);
    }
    let m = values.len() as f64;
    let mu = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
    Ok((mu, var))
}

/// Per-channel statistics plus the learnable affine pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevinState {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl RevinState {
    /// Fresh state: γ = 1, β = 0.
    pub fn new(mu: Vec<f64>, var: Vec<f64>, eps: f64) -> Self {
        assert_eq!(mu.len(), var.len());
        assert!(eps > 0.0, "eps must be positive");
        assert!(var.iter().all(|&v| v >= 0.0), "variance must be non-negative");
        let n = mu.len();
        Self {
            mu,
            var,
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            eps,
        }
    }

    /// Statistics of each column of `x` over its finite entries.
    pub fn fit(x: &Array2<f64>, eps: f64) -> Result<Self, RevinError> {
        let mut mu = Vec::with_capacity(x.ncols());
        let mut var = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let observed: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
            let (m, v) = compute_stats(&observed)?;
            mu.push(m);
            var.push(v);
        }
        Ok(Self::new(mu, var, eps))
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    /// `√σ² + ε` per channel.
    pub fn scale(&self, channel: usize) -> f64 {
        self.var[channel].sqrt() + self.eps
    }

    fn check(&self, cols: usize) -> Result<(), RevinError> {
        if cols != self.channels() {
            return Err(RevinError::ShapeMismatch {
                expected: self.channels(),
                found: cols,
            });
        }
        Ok(())
    }

    /// `γ·(x − μ)/(√σ² + ε) + β` per column.
    pub fn normalize(&self, x: &Array2<f64>) -> Result<Array2<f64>, RevinError> {
        self.check(x.ncols())?;
        let mut out = x.clone();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, s, g, b) = (self.mu[c], self.scale(c), self.gamma[c], self.beta[c]);
            col.mapv_inplace(|v| if v.is_finite() { g * ((v - mu) / s) + b } else { v });
        }
        Ok(out)
    }

    /// Exact inverse of [`RevinState::normalize`].
    pub fn denormalize(&self, y: &Array2<f64>) -> Result<Array2<f64>, RevinError> {
        self.check(y.ncols())?;
        if let Some(c) = self.gamma.iter().position(|&g| g == 0.0) {
            return Err(RevinError::ZeroGamma(c));
        }
        let mut out = y.clone();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, s, g, b) = (self.mu[c], self.scale(c), self.gamma[c], self.beta[c]);
            col.mapv_inplace(|v| if v.is_finite() { (v - b) / g * s + mu } else { v });
        }
        Ok(out)
    }

    /// `(x − μ)/(√σ² + ε)`: the affine-free part, which carries no
    /// trainable parameters.
    pub fn standardize(&self, x: &Array2<f64>) -> Result<Array2<f64>, RevinError> {
        self.check(x.ncols())?;
        let mut out = x.clone();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, s) = (self.mu[c], self.scale(c));
            col.mapv_inplace(|v| (v - mu) / s);
        }
        Ok(out)
    }

    pub fn gamma_row(&self) -> Array2<f64> {
        Array2::from_shape_vec((1, self.channels()), self.gamma.clone()).unwrap()
    }

    pub fn beta_row(&self) -> Array2<f64> {
        Array2::from_shape_vec((1, self.channels()), self.beta.clone()).unwrap()
    }
}

/// Differentiable normalization: `x` is constant, `gamma`/`beta` are `1×d`
/// nodes (normally trainable leaves).
pub fn normalize_on_tape(
    tape: &mut Tape,
    state: &RevinState,
    x: &Array2<f64>,
    gamma: Var,
    beta: Var,
) -> Result<Var, RevinError> {
    let z = tape.constant(state.standardize(x)?);
    let scaled = tape.mul_row(z, gamma);
    Ok(tape.add_row(scaled, beta))
}

/// Differentiable inverse for one channel: `(y − β)/γ·(√σ² + ε) + μ`.
pub fn denormalize_on_tape(tape: &mut Tape, state: &RevinState, channel: usize, y: Var, gamma: Var, beta: Var) -> Var {
    let shifted = tape.sub_row(y, beta);
    let unscaled = tape.div_row(shifted, gamma);
    let scaled = tape.scale(unscaled, state.scale(channel));
    tape.add_scalar(scaled, state.mu[channel])
}
