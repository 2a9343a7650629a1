//! Discriminator and generator objectives.
//!
//! `L_D = ½(BCE(D(x̂_fake), 0) + BCE(D(x̂_real), 1))`
//! `L_G = (1/N)Σ(sᵢ − ŝᵢ)² + (1/M)Σⱼ|f̄_real,j − f̄_fake,j| [+ w·BCE(D(x̂_fake), 1)]`
//! where `f̄` are batch means of the tapped discriminator activations.

use ndarray::Array2;

use super::DanError;
use crate::nn::{bce_mean, Tape, Var};

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

pub fn d_loss(real_probs: &[f64], fake_probs: &[f64]) -> f64 {
    let real = bce_mean(&column(real_probs), &Array2::ones((real_probs.len(), 1)));
    let fake = bce_mean(&column(fake_probs), &Array2::zeros((fake_probs.len(), 1)));
    0.5 * (fake + real)
}

/// `f_real`/`f_fake` are `batch×M`; a single row is a plain feature vector.
pub fn g_loss(s_true: &[f64], s_hat: &[f64], f_real: &Array2<f64>, f_fake: &Array2<f64>) -> Result<f64, DanError> {
    if s_true.len() != s_hat.len() || s_true.is_empty() {
        return Err(DanError::ShapeMismatch(format!(
            "{} targets vs {} predictions",
            s_true.len(),
            s_hat.len()
        )));
    }
    if f_real.ncols() != f_fake.ncols() || f_real.nrows() == 0 || f_fake.nrows() == 0 {
        return Err(DanError::ShapeMismatch(format!(
            "feature widths {} vs {}",
            f_real.ncols(),
            f_fake.ncols()
        )));
    }
    let mse = s_true.iter().zip(s_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / s_true.len() as f64;
    let mr = f_real.mean_axis(ndarray::Axis(0)).expect("rows");
    let mf = f_fake.mean_axis(ndarray::Axis(0)).expect("rows");
    let fm = mr.iter().zip(mf.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / mr.len() as f64;
    Ok(mse + fm)
}

pub fn d_loss_tape(tape: &mut Tape, real_probs: Var, fake_probs: Var) -> Var {
    let n_real = tape.value(real_probs).nrows();
    let n_fake = tape.value(fake_probs).nrows();
    let real = tape.bce_mean(real_probs, Array2::ones((n_real, 1)));
    let fake = tape.bce_mean(fake_probs, Array2::zeros((n_fake, 1)));
    let both = tape.add(real, fake);
    tape.scale(both, 0.5)
}

#[derive(Debug, Clone, Copy)]
pub struct GLossParts {
    pub total: Var,
    pub mse: Var,
    pub feature_matching: Option<Var>,
    pub adversarial: Option<Var>,
}

pub fn mse_tape(tape: &mut Tape, s_true: Var, s_hat: Var) -> Var {
    let diff = tape.sub(s_true, s_hat);
    let sq = tape.square(diff);
    tape.mean(sq)
}

pub fn feature_matching_tape(tape: &mut Tape, f_real: Var, f_fake: Var) -> Var {
    let mr = tape.mean_rows(f_real);
    let mf = tape.mean_rows(f_fake);
    let diff = tape.sub(mr, mf);
    let a = tape.abs(diff);
    tape.mean(a)
}

/// Assemble the generator objective from its optional parts.
pub fn g_loss_tape(
    tape: &mut Tape,
    s_true: Var,
    s_hat: Var,
    features: Option<(Var, Var)>,
    adversarial: Option<(Var, f64)>,
) -> GLossParts {
    let mse = mse_tape(tape, s_true, s_hat);
    let mut total = mse;
    let feature_matching = features.map(|(fr, ff)| {
        let fm = feature_matching_tape(tape, fr, ff);
        total = tape.add(total, fm);
        fm
    });
    let adversarial = adversarial.filter(|(_, w)| *w != 0.0).map(|(fake_probs, w)| {
        let n = tape.value(fake_probs).nrows();
        let adv = tape.bce_mean(fake_probs, Array2::ones((n, 1)));
        let weighted = tape.scale(adv, w);
        total = tape.add(total, weighted);
        adv
    });
    GLossParts {
        total,
        mse,
        feature_matching,
        adversarial,
    }
}
