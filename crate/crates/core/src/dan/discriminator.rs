use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DanError;
use crate::nn::{Activation, Dense, ParamStore, Tape, Var};

pub const DISCRIMINATOR_GROUP: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub hidden: Vec<usize>,
    /// Index into `hidden` whose activations are exposed as features.
    pub tap: usize,
    pub leaky_slope: f64,
    /// Append the conditioning features to the salinity sample.
    pub conditional: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            tap: 1,
            leaky_slope: 0.2,
            conditional: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub input_dim: usize,
    pub store: ParamStore,
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

/// Probabilities (`n×1`) and tap activations (`n×width`).
#[derive(Debug, Clone, Copy)]
pub struct DiscOutput {
    pub prob: Var,
    pub features: Var,
}

impl Discriminator {
    /// `cond_dim` conditioning columns follow the one salinity column.
    pub fn new(config: DiscriminatorConfig, cond_dim: usize, rng: &mut impl Rng) -> Result<Self, DanError> {
        if config.hidden.is_empty() || config.tap >= config.hidden.len() || config.hidden.contains(&0) {
            return Err(DanError::InvalidConfig(format!(
                "discriminator needs non-empty hidden widths and tap < {}",
                config.hidden.len()
            )));
        }
        let input_dim = 1 + if config.conditional { cond_dim } else { 0 };
        let mut store = ParamStore::new(DISCRIMINATOR_GROUP);
        let act = Activation::LeakyRelu(config.leaky_slope);
        let mut prev = input_dim;
        let hidden = config
            .hidden
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let d = Dense::init(&mut store, &format!("disc.{i}"), prev, w, act, rng);
                prev = w;
                d
            })
            .collect();
        let out = Dense::init(&mut store, "disc.out", prev, 1, Activation::Identity, rng);
        Ok(Self {
            config,
            input_dim,
            store,
            hidden,
            out,
        })
    }

    pub fn tap_width(&self) -> usize {
        self.config.hidden[self.config.tap]
    }

    /// Zero the output layer so every probability is exactly ½.
    pub fn zero_output(&mut self) {
        self.out.zero(&mut self.store);
    }

    /// Assemble `[sample | conditioning]` on the tape.
    pub fn input(&self, tape: &mut Tape, sample: Var, cond: &Array2<f64>) -> Var {
        if self.config.conditional {
            let c = tape.constant(cond.clone());
            tape.concat_cols(&[sample, c])
        } else {
            sample
        }
    }

    pub fn forward(&self, tape: &mut Tape, input: Var) -> DiscOutput {
        let mut h = input;
        let mut features = input;
        for (i, layer) in self.hidden.iter().enumerate() {
            h = layer.forward(tape, &self.store, h);
            if i == self.config.tap {
                features = h;
            }
        }
        let logits = self.out.forward(tape, &self.store, h);
        DiscOutput {
            prob: tape.sigmoid(logits),
            features,
        }
    }

    /// Plain evaluation of `input` (`n×input_dim`).
    pub fn forward_plain(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>), DanError> {
        if input.ncols() != self.input_dim {
            return Err(DanError::ShapeMismatch(format!(
                "discriminator expects {} columns, got {}",
                self.input_dim,
                input.ncols()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(DanError::NonFiniteInput);
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, x);
        Ok((tape.value(out.prob).clone(), tape.value(out.features).clone()))
    }
}
