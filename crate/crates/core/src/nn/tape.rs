//! A small reverse-mode autodiff tape over row-major matrices.
//!
//! Every value is an `Array2<f64>`; vectors are `1×d` or `n×1` matrices and
//! scalars are `1×1`. Nodes are appended in evaluation order, so the reverse
//! sweep in [`Tape::backward`] is a plain reverse iteration.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a trainable tensor: which store it lives in and its slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub group: u16,
    pub index: u32,
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamKey),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    /// Row-wise standardisation; caches the normalised input and 1/σ per row.
    LayerNorm {
        x: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Square(Var),
    Abs(Var),
    Mean(Var),
    Sum(Var),
    MeanRows(Var),
    Bce {
        p: Var,
        targets: Array2<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Probability clamp used by [`Tape::bce_mean`]; keeps `ln` finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Gradients of a scalar with respect to every parameter it touched.
#[derive(Debug, Default, Clone)]
pub struct Grads {
    map: HashMap<ParamKey, Array2<f64>>,
}

impl Grads {
    pub fn get(&self, key: ParamKey) -> Option<&Array2<f64>> {
        self.map.get(&key)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// True when every recorded gradient entry is finite.
    pub fn all_finite(&self) -> bool {
        self.map.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
}

fn row_sums(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// Leaf for a trainable tensor. Repeated calls with the same key share
    /// one node, so gradients accumulate in one place.
    pub fn param(&mut self, key: ParamKey, value: &Array2<f64>) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(key));
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// `a + row`, broadcasting a `1×d` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) - self.value(row);
        self.push(value, Op::SubRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row))
    }

    pub fn div_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) / self.value(row);
        self.push(value, Op::DivRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise `(x − mean)/√(var + eps)` with no affine part.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let input = self.value(x);
        let (n, d) = input.dim();
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in input.rows().into_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = xhat.clone();
        self.push(value, Op::LayerNorm { x, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start, end))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: col counts differ");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        self.push(value, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::abs);
        self.push(value, Op::Abs(a))
    }

    /// Mean over all entries, as a `1×1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a))
    }

    /// Column means, `n×d → 1×d`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).nrows().max(1) as f64;
        let value = row_sums(self.value(a)) / n;
        self.push(value, Op::MeanRows(a))
    }

    /// Mean binary cross-entropy of probabilities `p` against `targets`,
    /// with `p` clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub fn bce_mean(&mut self, p: Var, targets: Array2<f64>) -> Var {
        let probs = self.value(p);
        assert_eq!(probs.dim(), targets.dim(), "bce_mean: shape mismatch");
        let loss = bce_mean(probs, &targets);
        self.push(Array2::from_elem((1, 1), loss), Op::Bce { p, targets })
    }

    /// Reverse sweep from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Grads::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, delta: Array2<f64>| match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Const => {}
                Op::Param(key) => {
                    out.map
                        .entry(*key)
                        .and_modify(|e| *e += &g)
                        .or_insert_with(|| g.clone());
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.dot(self.value(*b)));
                    acc(*b, g.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * self.value(*b));
                    acc(*b, &g * self.value(*a));
                }
                Op::AddRow(a, r) => {
                    acc(*r, row_sums(&g));
                    acc(*a, g);
                }
                Op::SubRow(a, r) => {
                    acc(*r, -row_sums(&g));
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    acc(*r, row_sums(&(&g * self.value(*a))));
                    acc(*a, &g * self.value(*r));
                }
                Op::DivRow(a, r) => {
                    let rv = self.value(*r);
                    let d_r = -(&g * self.value(*a)) / &(rv * rv);
                    acc(*r, row_sums(&d_r));
                    acc(*a, &g / rv);
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::AddScalar(a) => acc(*a, g),
                Op::LeakyRelu(a, slope) => {
                    let mut d = g;
                    d.zip_mut_with(self.value(*a), |gi, &x| {
                        if x <= 0.0 {
                            *gi *= *slope
                        }
                    });
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &g * &y.mapv(|p| p * (1.0 - p)));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = g.row(i).dot(&y.row(i));
                        for j in 0..y.ncols() {
                            d[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    let (n, dcols) = xhat.dim();
                    let mut d = Array2::zeros((n, dcols));
                    for i in 0..n {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        let mean_g = gr.sum() / dcols as f64;
                        let mean_gx = gr.dot(&xr) / dcols as f64;
                        for j in 0..dcols {
                            d[[i, j]] = inv_std[i] * (gr[j] - mean_g - xr[j] * mean_gx);
                        }
                    }
                    acc(*x, d);
                }
                Op::SliceCols(a, start, end) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(*a, d);
                }
                Op::SliceRows(a, start, end) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*end, ..]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(*a, d);
                }
                Op::Square(a) => acc(*a, &g * &(self.value(*a) * 2.0)),
                Op::Abs(a) => {
                    let sign = self.value(*a).mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(*a, &g * &sign);
                }
                Op::Mean(a) => {
                    let dim = self.value(*a).dim();
                    let n = (dim.0 * dim.1).max(1) as f64;
                    acc(*a, Array2::from_elem(dim, g[[0, 0]] / n));
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    acc(*a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::MeanRows(a) => {
                    let dim = self.value(*a).dim();
                    let n = dim.0.max(1) as f64;
                    let row = &g / n;
                    let d = Array2::from_shape_fn(dim, |(_, j)| row[[0, j]]);
                    acc(*a, d);
                }
                Op::Bce { p, targets } => {
                    let probs = self.value(*p);
                    let n = probs.len().max(1) as f64;
                    let scale = g[[0, 0]] / n;
                    let mut d = Array2::zeros(probs.dim());
                    ndarray::Zip::from(&mut d).and(probs).and(targets).for_each(|di, &pr, &y| {
                        if pr > PROB_CLAMP && pr < 1.0 - PROB_CLAMP {
                            *di = scale * (-y / pr + (1.0 - y) / (1.0 - pr));
                        }
                    });
                    acc(*p, d);
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Mean clamped binary cross-entropy.
pub fn bce_mean(probs: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(targets.iter())
        .map(|(&p, &y)| {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
        })
        .sum::<f64>()
        / n
}
