//! MLP and LSTM regressors on the same per-point features as the
//! diffusion-adversarial model, trained on MSE alone.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dan::{
    feature_spec_for, pack, trajectory_windows, usable_records, DanError, FeatureSpec, Generator, Scaler, TrainConfig,
};
use crate::nn::{uniform, Activation, Adam, Dense, ParamStore, Tape, Var};
use crate::par::{map_slice, Exec};
use crate::tensorize::TrajectorySet;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuralHistory {
    /// Mean training MSE per epoch, psu².
    pub train_mse: Vec<f64>,
    pub val_mae: Vec<Option<f64>>,
    pub best_epoch: usize,
    pub best_val_mae: Option<f64>,
}

impl NeuralHistory {
    fn record(&mut self, epoch: usize, mse: f64, val: Option<f64>) -> bool {
        self.train_mse.push(mse);
        self.val_mae.push(val);
        match val {
            Some(v) if self.best_val_mae.is_none_or(|b| v < b) => {
                self.best_val_mae = Some(v);
                self.best_epoch = epoch;
                true
            }
            None => {
                self.best_epoch = epoch;
                true
            }
            _ => false,
        }
    }
}

struct Prepared {
    spec: FeatureSpec,
    train: TrajectorySet,
    x: Array2<f64>,
    s: Vec<f64>,
    scaler: Scaler,
    val: TrajectorySet,
    val_x: Option<Array2<f64>>,
}

fn prepare(train: &TrajectorySet, val: &TrajectorySet, cfg: &TrainConfig) -> Result<Prepared, DanError> {
    cfg.validate()?;
    let spec = feature_spec_for(train, cfg.use_tide)?;
    let train = usable_records(train, &spec);
    if train.is_empty() {
        return Err(DanError::EmptyTrainingSet);
    }
    let val = usable_records(val, &spec);
    let x = spec.matrix(&train.records)?;
    let s: Vec<f64> = train.records.iter().map(|r| r.salinity.expect("usable")).collect();
    let scaler = Scaler::fit(&x, &s, cfg.revin_eps)?;
    let val_x = if val.is_empty() { None } else { Some(spec.matrix(&val.records)?) };
    Ok(Prepared {
        spec,
        train,
        x,
        s,
        scaler,
        val,
        val_x,
    })
}

fn mae(pred: &[f64], set: &TrajectorySet) -> f64 {
    pred.iter()
        .zip(&set.records)
        .map(|(p, r)| (p - r.salinity.expect("usable")).abs())
        .sum::<f64>()
        / pred.len() as f64
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// Feature extractor and head only; attention is bypassed.
    pub generator: Generator,
    pub history: NeuralHistory,
}

impl MlpModel {
    pub fn predict_set(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, DanError> {
        self.generator.predict_set(set, exec)
    }
}

pub fn fit_mlp(train: &TrajectorySet, val: &TrajectorySet, cfg: &TrainConfig, exec: Exec) -> Result<MlpModel, DanError> {
    let data = prepare(train, val, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = Generator::new(
        cfg.generator.clone(),
        cfg.use_norm,
        false,
        data.spec.clone(),
        data.scaler.clone(),
        &mut rng,
    )?;
    let mut adam = Adam::new(&generator.store, cfg.lr_g);
    let inv = 1.0 / data.scaler.target.scale(0);
    let val_windows = trajectory_windows(&data.val, cfg.generator.window);
    let mut history = NeuralHistory::default();
    let mut best = generator.store.clone();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, rows) in batches.iter().enumerate() {
            let xb = data.x.select(Axis(0), rows);
            let sb: Vec<f64> = rows.iter().map(|&i| data.s[i]).collect();
            let mut tape = Tape::new();
            let pred = generator.forward(&mut tape, &xb, &[0..rows.len()])?;
            let target = tape.constant(column(&sb));
            let diff = tape.sub(pred, target);
            let z = tape.scale(diff, inv);
            let sq = tape.square(z);
            let loss = tape.mean(sq);
            let lv = tape.scalar(loss);
            let grads = tape.backward(loss);
            if !lv.is_finite() || !grads.all_finite() {
                return Err(DanError::DivergedLoss {
                    epoch,
                    batch: b,
                    d_loss: 0.0,
                    g_loss: lv,
                });
            }
            adam.step(&mut generator.store, &grads);
            sum += lv / (inv * inv);
        }
        let val_mae = match &data.val_x {
            Some(vx) => Some(mae(&generator.predict(vx, &val_windows, exec)?, &data.val)),
            None => None,
        };
        if history.record(epoch, sum / batches.len() as f64, val_mae) {
            best = generator.store.clone();
        }
    }
    generator.store = best;
    Ok(MlpModel { generator, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub hidden: usize,
    /// Time steps per sequence.
    pub window: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self { hidden: 32, window: 32 }
    }
}

/// Single-layer LSTM over trajectory windows with a linear head; gate order `(i, f, g, o)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub features: FeatureSpec,
    pub scaler: Scaler,
    pub store: ParamStore,
    pub w_x: usize,
    pub w_h: usize,
    pub bias: usize,
    pub head: Dense,
    pub history: NeuralHistory,
}

impl LstmModel {
    fn new(config: LstmConfig, features: FeatureSpec, scaler: Scaler, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden;
        let dim = features.dim();
        let mut store = ParamStore::new(2);
        let w_x = store.insert("lstm.w_x", uniform(rng, dim, 4 * h, 1.0 / (dim as f64).sqrt()));
        let w_h = store.insert("lstm.w_h", uniform(rng, h, 4 * h, 1.0 / (h as f64).sqrt()));
        let mut b = Array2::zeros((1, 4 * h));
        b.slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
        let bias = store.insert("lstm.bias", b);
        let head = Dense::init(&mut store, "head", h, 1, Activation::Identity, rng);
        Self {
            config,
            features,
            scaler,
            store,
            w_x,
            w_h,
            bias,
            head,
            history: NeuralHistory::default(),
        }
    }

    /// Standardized outputs for every row covered by `windows` of the
    /// standardized inputs `x`, plus the row each output belongs to.
    fn forward(&self, tape: &mut Tape, x: &Array2<f64>, windows: &[Range<usize>]) -> (Var, Vec<usize>) {
        let h = self.config.hidden;
        let xv = tape.constant(x.clone());
        let wx = self.store.var(tape, self.w_x);
        let wh = self.store.var(tape, self.w_h);
        let bias = self.store.var(tape, self.bias);
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for w in windows {
            groups.entry(w.len()).or_default().push(w.start);
        }
        let mut outs = Vec::new();
        let mut order = Vec::new();
        for (len, starts) in groups {
            let mut hs = tape.constant(Array2::zeros((starts.len(), h)));
            let mut cs = tape.constant(Array2::zeros((starts.len(), h)));
            for k in 0..len {
                let rows: Vec<usize> = starts.iter().map(|s| s + k).collect();
                let xk = tape.gather_rows(xv, &rows);
                let a = tape.matmul(xk, wx);
                let r = tape.matmul(hs, wh);
                let z = tape.add(a, r);
                let z = tape.add_row(z, bias);
                let i = tape.slice_cols(z, 0, h);
                let i = tape.sigmoid(i);
                let f = tape.slice_cols(z, h, 2 * h);
                let f = tape.sigmoid(f);
                let g = tape.slice_cols(z, 2 * h, 3 * h);
                let g = tape.tanh(g);
                let o = tape.slice_cols(z, 3 * h, 4 * h);
                let o = tape.sigmoid(o);
                let keep = tape.mul(f, cs);
                let write = tape.mul(i, g);
                cs = tape.add(keep, write);
                let tc = tape.tanh(cs);
                hs = tape.mul(o, tc);
                outs.push(hs);
                order.extend(rows);
            }
        }
        let all = if outs.len() == 1 { outs[0] } else { tape.concat_rows(&outs) };
        (self.head.forward(tape, &self.store, all), order)
    }

    /// Salinity for each row of raw features `x`, one sequence per window.
    pub fn predict(&self, x: &Array2<f64>, windows: &[Range<usize>], exec: Exec) -> Result<Vec<f64>, DanError> {
        if x.ncols() != self.features.dim() {
            return Err(DanError::ShapeMismatch(format!(
                "expected {} feature columns, got {}",
                self.features.dim(),
                x.ncols()
            )));
        }
        let xs = self.scaler.features.standardize(x)?;
        let (mu, sd) = (self.scaler.target.mu[0], self.scaler.target.scale(0));
        let parts = map_slice(exec, windows, |w| {
            let mut tape = Tape::new();
            let (y, order) = self.forward(&mut tape, &xs, std::slice::from_ref(w));
            order
                .into_iter()
                .zip(tape.value(y).column(0).iter().map(|v| v * sd + mu).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        });
        let mut out = vec![f64::NAN; x.nrows()];
        for (row, v) in parts.into_iter().flatten() {
            out[row] = v;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DanError::NonFiniteOutput);
        }
        Ok(out)
    }

    pub fn predict_set(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, DanError> {
        if set.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.features.matrix(&set.records)?;
        self.predict(&x, &trajectory_windows(set, self.config.window), exec)
    }
}

pub fn fit_lstm(
    train: &TrajectorySet,
    val: &TrajectorySet,
    cfg: &TrainConfig,
    lstm: LstmConfig,
    exec: Exec,
) -> Result<LstmModel, DanError> {
    if lstm.hidden == 0 || lstm.window == 0 {
        return Err(DanError::InvalidConfig("LSTM hidden width and window must be positive".into()));
    }
    let data = prepare(train, val, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LstmModel::new(lstm, data.spec.clone(), data.scaler.clone(), &mut rng);
    let xs = data.scaler.features.standardize(&data.x)?;
    let z: Vec<f64> = data.s.iter().map(|&s| data.scaler.standardize_target(s)).collect();
    let inv = 1.0 / data.scaler.target.scale(0);
    let mut adam = Adam::new(&model.store, cfg.lr_g);
    let mut windows = trajectory_windows(&data.train, lstm.window);
    let val_windows = trajectory_windows(&data.val, lstm.window);
    let mut history = NeuralHistory::default();
    let mut best = model.store.clone();
    for epoch in 1..=cfg.epochs {
        windows.shuffle(&mut rng);
        let batches = pack(&windows, cfg.batch_size);
        let mut sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let (y, order) = model.forward(&mut tape, &xs, batch);
            let target: Vec<f64> = order.iter().map(|&i| z[i]).collect();
            let t = tape.constant(column(&target));
            let diff = tape.sub(y, t);
            let sq = tape.square(diff);
            let loss = tape.mean(sq);
            let lv = tape.scalar(loss);
            let grads = tape.backward(loss);
            if !lv.is_finite() || !grads.all_finite() {
                return Err(DanError::DivergedLoss {
                    epoch,
                    batch: b,
                    d_loss: 0.0,
                    g_loss: lv,
                });
            }
            adam.step(&mut model.store, &grads);
            sum += lv / (inv * inv);
        }
        let val_mae = match &data.val_x {
            Some(vx) => Some(mae(&model.predict(vx, &val_windows, exec)?, &data.val)),
            None => None,
        };
        if history.record(epoch, sum / batches.len() as f64, val_mae) {
            best = model.store.clone();
        }
    }
    model.store = best;
    model.history = history;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dan::GeneratorConfig;
    use crate::tensorize::DrifterRecord;
    use chrono::{Duration, TimeZone, Utc};

    pub(crate) fn linear_set(n_traj: usize, len: usize) -> TrajectorySet {
        let t0 = Utc.with_ymd_and_hms(2016, 6, 16, 0, 0, 0).unwrap();
        let mut records = Vec::new();
        for k in 0..n_traj {
            for i in 0..len {
                let lat = 28.0 + 0.01 * i as f64 + 0.1 * k as f64;
                let lon = -89.0 + 0.02 * i as f64 - 0.05 * k as f64;
                records.push(DrifterRecord {
                    trajectory_id: format!("d{k}"),
                    timestamp: t0 + Duration::minutes(30 * i as i64),
                    lat,
                    lon,
                    salinity: Some(30.0 + 2.0 * (lat - 28.0) - 1.5 * (lon + 89.0)),
                    covariates: Default::default(),
                });
            }
        }
        TrajectorySet::from_records(records)
    }

    fn small(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            generator: GeneratorConfig {
                hidden: vec![16],
                d_model: 16,
                n_heads: 2,
                window: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn mlp_fits_linear_data() {
        let set = linear_set(4, 25);
        let m = fit_mlp(&set, &TrajectorySet::default(), &small(500), Exec::Sequential).unwrap();
        let pred = m.predict_set(&set, Exec::Sequential).unwrap();
        let mse = pred
            .iter()
            .zip(&set.records)
            .map(|(p, r)| (p - r.salinity.unwrap()).powi(2))
            .sum::<f64>()
            / pred.len() as f64;
        assert!(mse < 1e-3, "train MSE {mse}");
        assert_eq!(m.history.train_mse.len(), 500);
        assert!(!m.generator.use_gdc);
    }

    #[test]
    fn lstm_shapes_and_determinism() {
        let set = linear_set(3, 11);
        let lstm = LstmConfig { hidden: 6, window: 4 };
        let m = fit_lstm(&set, &set, &small(3), lstm, Exec::Sequential).unwrap();
        let a = m.predict_set(&set, Exec::Sequential).unwrap();
        assert_eq!(a.len(), set.len());
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(m.history.train_mse.len(), 3);
        let again = fit_lstm(&set, &set, &small(3), lstm, Exec::Parallel).unwrap();
        assert_eq!(again.predict_set(&set, Exec::Parallel).unwrap(), a);
    }

    #[test]
    fn lstm_is_causal_within_a_window() {
        let set = linear_set(1, 6);
        let m = fit_lstm(&set, &TrajectorySet::default(), &small(1), LstmConfig { hidden: 4, window: 6 }, Exec::Sequential)
            .unwrap();
        let x = m.features.matrix(&set.records).unwrap();
        let full = m.predict(&x, &[0..6], Exec::Sequential).unwrap();
        let head = m.predict(&x.slice(ndarray::s![0..3, ..]).to_owned(), &[0..3], Exec::Sequential).unwrap();
        assert_eq!(&full[..3], &head[..]);
    }

    #[test]
    fn lstm_learns() {
        let set = linear_set(4, 25);
        let m = fit_lstm(&set, &TrajectorySet::default(), &small(60), LstmConfig { hidden: 16, window: 8 }, Exec::Sequential)
            .unwrap();
        let h = &m.history.train_mse;
        assert!(h[h.len() - 1] < 0.5 * h[0], "{h:?}");
    }
}
