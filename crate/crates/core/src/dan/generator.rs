//! `ŝ = denorm(head(Attn(PE + FE(norm(x)))))`.

use std::ops::Range;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{trajectory_windows, FeatureSpec};
use super::DanError;
use crate::gdc::{positional_encoding, AttentionBlock, AttentionConfig};
use crate::nn::{Activation, Dense, ParamStore, Tape, Var};
use crate::par::{map_slice, Exec};
use crate::revin::{denormalize_on_tape, normalize_on_tape, RevinState};
use crate::tensorize::TrajectorySet;

pub const GENERATOR_GROUP: u16 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Hidden widths of the feature extractor; its last layer has width `d_model`.
    pub hidden: Vec<usize>,
    pub d_model: usize,
    pub n_heads: usize,
    pub leaky_slope: f64,
    /// Tokens per attention sequence.
    pub window: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            d_model: 64,
            n_heads: 4,
            leaky_slope: 0.2,
            window: 32,
        }
    }
}

/// Statistics for input features and the salinity target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub features: RevinState,
    pub target: RevinState,
}

impl Scaler {
    pub fn fit(x: &Array2<f64>, s: &[f64], eps: f64) -> Result<Self, DanError> {
        let target = Array2::from_shape_vec((s.len(), 1), s.to_vec()).expect("column");
        Ok(Self {
            features: RevinState::fit(x, eps)?,
            target: RevinState::fit(&target, eps)?,
        })
    }

    /// `(s − μ)/(√σ² + ε)` for the salinity channel.
    pub fn standardize_target(&self, s: f64) -> f64 {
        (s - self.target.mu[0]) / self.target.scale(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub use_norm: bool,
    pub use_gdc: bool,
    pub features: FeatureSpec,
    pub scaler: Scaler,
    pub store: ParamStore,
    pub feat_gamma: usize,
    pub feat_beta: usize,
    pub tgt_gamma: usize,
    pub tgt_beta: usize,
    pub fe: Vec<Dense>,
    pub attn: AttentionBlock,
    pub head: Dense,
}

impl Generator {
    pub fn new(
        config: GeneratorConfig,
        use_norm: bool,
        use_gdc: bool,
        features: FeatureSpec,
        scaler: Scaler,
        rng: &mut impl Rng,
    ) -> Result<Self, DanError> {
        let dim = features.dim();
        if scaler.features.channels() != dim || scaler.target.channels() != 1 {
            return Err(DanError::ShapeMismatch(format!(
                "scaler has {} feature channels, spec has {dim}",
                scaler.features.channels()
            )));
        }
        let attn_cfg = AttentionConfig::new(config.d_model, config.n_heads)?;
        if config.d_model % 2 != 0 {
            return Err(DanError::InvalidConfig("d_model must be even".into()));
        }
        let mut store = ParamStore::new(GENERATOR_GROUP);
        let feat_gamma = store.insert("revin.features.gamma", scaler.features.gamma_row());
        let feat_beta = store.insert("revin.features.beta", scaler.features.beta_row());
        let tgt_gamma = store.insert("revin.target.gamma", scaler.target.gamma_row());
        let tgt_beta = store.insert("revin.target.beta", scaler.target.beta_row());
        let act = Activation::LeakyRelu(config.leaky_slope);
        let mut widths = vec![dim];
        widths.extend(&config.hidden);
        widths.push(config.d_model);
        let fe = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(&mut store, &format!("fe.{i}"), w[0], w[1], act, rng))
            .collect();
        let attn = AttentionBlock::init(&mut store, attn_cfg, rng)?;
        let head = Dense::init(&mut store, "head", config.d_model, 1, Activation::Identity, rng);
        Ok(Self {
            config,
            use_norm,
            use_gdc,
            features,
            scaler,
            store,
            feat_gamma,
            feat_beta,
            tgt_gamma,
            tgt_beta,
            fe,
            attn,
            head,
        })
    }

    /// Current RevIN states with the learned affine parameters filled in.
    pub fn revin_states(&self) -> Scaler {
        let mut s = self.scaler.clone();
        s.features.gamma = self.store.get(self.feat_gamma).iter().copied().collect();
        s.features.beta = self.store.get(self.feat_beta).iter().copied().collect();
        s.target.gamma = self.store.get(self.tgt_gamma).iter().copied().collect();
        s.target.beta = self.store.get(self.tgt_beta).iter().copied().collect();
        s
    }

    /// Differentiable forward over `x` (`n×dim`, raw features) where
    /// `windows` partitions `0..n` into token sequences. Returns `n×1` psu.
    pub fn forward(&self, tape: &mut Tape, x: &Array2<f64>, windows: &[Range<usize>]) -> Result<Var, DanError> {
        if x.ncols() != self.features.dim() {
            return Err(DanError::ShapeMismatch(format!(
                "expected {} feature columns, got {}",
                self.features.dim(),
                x.ncols()
            )));
        }
        let covered: usize = windows.iter().map(|w| w.len()).sum();
        if covered != x.nrows() || windows.iter().any(|w| w.is_empty()) {
            return Err(DanError::ShapeMismatch("windows must partition the batch".into()));
        }
        let mut h = if self.use_norm {
            let g = self.store.var(tape, self.feat_gamma);
            let b = self.store.var(tape, self.feat_beta);
            normalize_on_tape(tape, &self.scaler.features, x, g, b)?
        } else {
            tape.constant(x.clone())
        };
        for layer in &self.fe {
            h = layer.forward(tape, &self.store, h);
        }
        if self.use_gdc {
            let longest = windows.iter().map(|w| w.len()).max().unwrap_or(1);
            let pe = positional_encoding(longest, self.config.d_model)?;
            let mut parts = Vec::with_capacity(windows.len());
            for w in windows {
                let tokens = tape.slice_rows(h, w.start, w.end);
                let pos = tape.constant(pe.slice(ndarray::s![..w.len(), ..]).to_owned());
                let with_pos = tape.add(tokens, pos);
                parts.push(self.attn.forward(tape, &self.store, with_pos));
            }
            h = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts) };
        }
        let y = self.head.forward(tape, &self.store, h);
        Ok(if self.use_norm {
            let g = self.store.var(tape, self.tgt_gamma);
            let b = self.store.var(tape, self.tgt_beta);
            denormalize_on_tape(tape, &self.scaler.target, 0, y, g, b)
        } else {
            y
        })
    }

    /// Salinity for each row of `x`, one token sequence per window.
    pub fn predict(&self, x: &Array2<f64>, windows: &[Range<usize>], exec: Exec) -> Result<Vec<f64>, DanError> {
        let per_window = map_slice(exec, windows, |w| {
            let mut tape = Tape::new();
            let xs = x.slice(ndarray::s![w.clone(), ..]).to_owned();
            let out = self.forward(&mut tape, &xs, &[0..w.len()])?;
            Ok::<_, DanError>(tape.value(out).column(0).to_vec())
        });
        let mut out = Vec::with_capacity(x.nrows());
        for part in per_window {
            out.extend(part?);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DanError::NonFiniteOutput);
        }
        Ok(out)
    }

    /// Salinity at every record of `set`, windowing each trajectory in time order.
    pub fn predict_set(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, DanError> {
        if set.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.features.matrix(&set.records)?;
        self.predict(&x, &trajectory_windows(set, self.config.window), exec)
    }

    /// Independent single-token predictions, as used for point queries.
    pub fn predict_points(&self, x: &Array2<f64>, exec: Exec) -> Result<Vec<f64>, DanError> {
        let windows: Vec<_> = (0..x.nrows()).map(|i| i..i + 1).collect();
        self.predict(x, &windows, exec)
    }
}
