//! Global dependency capturing: sinusoidal positional encoding followed by
//! multi-head scaled dot-product self-attention with a residual connection
//! and layer normalization.
//!
//! The plain `ndarray` functions here are the reference path used for
//! inspection and tests; [`AttentionBlock::forward`] is the differentiable
//! path used in training. Both compute the same thing.

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{softmax_rows_plain, uniform, ParamStore, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum GdcError {
    #[error("positional encoding needs an even width >= 2, got {0}")]
    OddDimension(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("n_heads = {n_heads} does not divide d_model = {d_model}")]
    HeadsDoNotDivide { d_model: usize, n_heads: usize },
    #[error("non-finite attention logits")]
    NonFiniteLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4 }
    }
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize) -> Result<Self, GdcError> {
        let cfg = Self { d_model, n_heads };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GdcError> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(GdcError::HeadsDoNotDivide {
                d_model: self.d_model,
                n_heads: self.n_heads,
            });
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// `PE(p, 2i) = sin(p / 10000^{2i/d})`, `PE(p, 2i+1) = cos(·)`.
pub fn positional_encoding(n: usize, d_model: usize) -> Result<Array2<f64>, GdcError> {
    if d_model < 2 || d_model % 2 != 0 {
        return Err(GdcError::OddDimension(d_model));
    }
    Ok(Array2::from_shape_fn((n, d_model), |(p, j)| {
        let i = j / 2;
        let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Add `pe` (`N×d`) to every sequence of a `(batch, N, d)` array.
pub fn add_pe(x: &Array3<f64>, pe: &Array2<f64>) -> Result<Array3<f64>, GdcError> {
    let (_, n, d) = x.dim();
    if pe.dim() != (n, d) {
        return Err(GdcError::ShapeMismatch(format!("pe is {:?}, sequences are {n}×{d}", pe.dim())));
    }
    let mut out = x.clone();
    for mut seq in out.axis_iter_mut(Axis(0)) {
        seq += pe;
    }
    Ok(out)
}

/// Per-head query/key/value slices, each `N×d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProjections {
    pub q: Vec<Array2<f64>>,
    pub k: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

/// `Q = xW_Q`, `K = xW_K`, `V = xW_V`, split column-wise into heads.
pub fn project_qkv(
    x: &Array2<f64>,
    w_q: &Array2<f64>,
    w_k: &Array2<f64>,
    w_v: &Array2<f64>,
    cfg: AttentionConfig,
) -> Result<HeadProjections, GdcError> {
    cfg.validate()?;
    let d = cfg.d_model;
    if x.ncols() != d {
        return Err(GdcError::ShapeMismatch(format!("input width {} != d_model {d}", x.ncols())));
    }
    for w in [w_q, w_k, w_v] {
        if w.dim() != (d, d) {
            return Err(GdcError::ShapeMismatch(format!("weight is {:?}, expected {d}×{d}", w.dim())));
        }
    }
    let split = |m: Array2<f64>| -> Vec<Array2<f64>> {
        (0..cfg.n_heads)
            .map(|h| m.slice(s![.., h * cfg.d_k()..(h + 1) * cfg.d_k()]).to_owned())
            .collect()
    };
    Ok(HeadProjections {
        q: split(x.dot(w_q)),
        k: split(x.dot(w_k)),
        v: split(x.dot(w_v)),
    })
}

/// Scaled dot-product attention for every head: `A = softmax(QKᵀ/√d_k)`,
/// `out_i = Σ_j A_ij V_j`. Returns the heads concatenated (`N×d_model`)
/// and the per-head weight matrices.
pub fn attention(heads: &HeadProjections) -> Result<(Array2<f64>, Vec<Array2<f64>>), GdcError> {
    if heads.q.is_empty() || heads.q.len() != heads.k.len() || heads.k.len() != heads.v.len() {
        return Err(GdcError::ShapeMismatch("head counts differ".into()));
    }
    let mut outs = Vec::with_capacity(heads.q.len());
    let mut weights = Vec::with_capacity(heads.q.len());
    for ((q, k), v) in heads.q.iter().zip(&heads.k).zip(&heads.v) {
        if q.dim() != k.dim() || k.nrows() != v.nrows() {
            return Err(GdcError::ShapeMismatch(format!("q {:?}, k {:?}, v {:?}", q.dim(), k.dim(), v.dim())));
        }
        let logits = q.dot(&k.t()) / (q.ncols() as f64).sqrt();
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(GdcError::NonFiniteLogits);
        }
        let a = softmax_rows_plain(&logits);
        outs.push(a.dot(v));
        weights.push(a);
    }
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    let concat = ndarray::concatenate(Axis(1), &views).expect("heads share N");
    Ok((concat, weights))
}

/// Row-wise layer normalization without affine part.
pub fn layer_norm_plain(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    let d = x.ncols() as f64;
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

/// Trainable attention block: projections, output projection and the
/// layer-norm gain/bias, stored in a caller-owned [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub cfg: AttentionConfig,
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_o: usize,
    pub ln_gain: usize,
    pub ln_bias: usize,
}

/// Plain forward result.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: Array2<f64>,
    pub weights: Vec<Array2<f64>>,
}

impl AttentionBlock {
    /// Weights uniform in `[−1/√d_model, 1/√d_model]`; gain 1, bias 0.
    pub fn init(store: &mut ParamStore, cfg: AttentionConfig, rng: &mut impl Rng) -> Result<Self, GdcError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        let w_q = store.insert("attn.w_q", uniform(rng, d, d, bound));
        let w_k = store.insert("attn.w_k", uniform(rng, d, d, bound));
        let w_v = store.insert("attn.w_v", uniform(rng, d, d, bound));
        let w_o = store.insert("attn.w_o", uniform(rng, d, d, bound));
        let ln_gain = store.insert("attn.ln_gain", Array2::ones((1, d)));
        let ln_bias = store.insert("attn.ln_bias", Array2::zeros((1, d)));
        Ok(Self {
            cfg,
            w_q,
            w_k,
            w_v,
            w_o,
            ln_gain,
            ln_bias,
        })
    }

    /// Reference forward for one sequence `x` (`N×d_model`).
    pub fn forward_plain(&self, store: &ParamStore, x: &Array2<f64>) -> Result<BlockOutput, GdcError> {
        let heads = project_qkv(x, store.get(self.w_q), store.get(self.w_k), store.get(self.w_v), self.cfg)?;
        let (concat, weights) = attention(&heads)?;
        let projected = concat.dot(store.get(self.w_o));
        let normed = layer_norm_plain(&(x + &projected));
        let output = normed * store.get(self.ln_gain) + store.get(self.ln_bias);
        Ok(BlockOutput { output, weights })
    }

    /// Differentiable forward for one sequence node (`N×d_model`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let d_k = self.cfg.d_k();
        let w_q = store.var(tape, self.w_q);
        let w_k = store.var(tape, self.w_k);
        let w_v = store.var(tape, self.w_v);
        let w_o = store.var(tape, self.w_o);
        let q = tape.matmul(x, w_q);
        let k = tape.matmul(x, w_k);
        let v = tape.matmul(x, w_v);
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let (a, b) = (h * d_k, (h + 1) * d_k);
            let qh = tape.slice_cols(q, a, b);
            let kh = tape.slice_cols(k, a, b);
            let vh = tape.slice_cols(v, a, b);
            let logits = tape.matmul_t(qh, kh);
            let scaled = tape.scale(logits, 1.0 / (d_k as f64).sqrt());
            let weights = tape.softmax_rows(scaled);
            heads.push(tape.matmul(weights, vh));
        }
        let concat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let projected = tape.matmul(concat, w_o);
        let residual = tape.add(x, projected);
        let normed = tape.layer_norm(residual, LAYER_NORM_EPS);
        let gain = store.var(tape, self.ln_gain);
        let bias = store.var(tape, self.ln_bias);
        let scaled = tape.mul_row(normed, gain);
        tape.add_row(scaled, bias)
    }
}
