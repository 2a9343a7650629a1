//! Minimal neural-network machinery shared by the generator, discriminator
//! and the neural baselines: a parameter store, dense layers and Adam.

pub mod tape;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use tape::{bce_mean, sigmoid, softmax_rows as softmax_rows_plain, Grads, ParamKey, Tape, Var};

/// Named trainable tensors belonging to one model (one `group`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    group: u16,
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new(group: u16) -> Self {
        Self {
            group,
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn group(&self) -> u16 {
        self.group
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn key(&self, index: usize) -> ParamKey {
        ParamKey {
            group: self.group,
            index: index as u32,
        }
    }

    pub fn get(&self, index: usize) -> &Array2<f64> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Array2<f64> {
        &mut self.tensors[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Put the tensor on the tape as a trainable leaf.
    pub fn var(&self, tape: &mut Tape, index: usize) -> Var {
        tape.param(self.key(index), &self.tensors[index])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => tape.leaky_relu(x, slope),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// `y = act(x·W + b)` with weight `in×out` and bias `1×out` held in a store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub activation: Activation,
}

impl Dense {
    /// Uniform init in `[−1/√fan_in, 1/√fan_in]`, zero bias.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = uniform(rng, fan_in, fan_out, bound);
        let weight = store.insert(format!("{name}.weight"), w);
        let bias = store.insert(format!("{name}.bias"), Array2::zeros((1, fan_out)));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn fan_in(&self, store: &ParamStore) -> usize {
        store.get(self.weight).nrows()
    }

    pub fn fan_out(&self, store: &ParamStore) -> usize {
        store.get(self.weight).ncols()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = store.var(tape, self.weight);
        let b = store.var(tape, self.bias);
        let xw = tape.matmul(x, w);
        let z = tape.add_row(xw, b);
        self.activation.apply(tape, z)
    }

    /// Zero both weight and bias.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).fill(0.0);
        store.get_mut(self.bias).fill(0.0);
    }
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

/// Adaptive moment estimation over one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<_> = (0..store.len())
            .map(|i| Array2::zeros(store.get(i).dim()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update; tensors without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..store.len() {
            let Some(g) = grads.get(store.key(i)) else { continue };
            let (b1, b2) = (self.beta1, self.beta2);
            self.m[i].zip_mut_with(g, |m, &gi| *m = b1 * *m + (1.0 - b1) * gi);
            self.v[i].zip_mut_with(g, |v, &gi| *v = b2 * *v + (1.0 - b2) * gi * gi);
            let lr = self.lr;
            let eps = self.eps;
            let param = store.get_mut(i);
            ndarray::Zip::from(param)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_fits_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new(0);
        let layer = Dense::init(&mut store, "lin", 1, 1, Activation::Identity, &mut rng);
        let x = Array2::from_shape_fn((16, 1), |(i, _)| i as f64 / 8.0 - 1.0);
        let y = x.mapv(|v| 3.0 * v - 0.5);
        let mut adam = Adam::new(&store, 0.05);
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let pred = layer.forward(&mut tape, &store, xv);
            let diff = tape.sub(pred, yv);
            let sq = tape.square(diff);
            let loss = tape.mean(sq);
            let grads = tape.backward(loss);
            adam.step(&mut store, &grads);
        }
        assert!((store.get(layer.weight)[[0, 0]] - 3.0).abs() < 1e-3);
        assert!((store.get(layer.bias)[[0, 0]] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn dense_init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new(3);
        let d = Dense::init(&mut store, "d", 16, 8, Activation::Tanh, &mut rng);
        assert!(store.get(d.weight).iter().all(|w| w.abs() <= 0.25));
        assert_eq!(store.key(d.bias), ParamKey { group: 3, index: 1 });
        assert_eq!(store.name(d.weight), "d.weight");
    }
}
