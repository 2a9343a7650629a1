//! Alternating optimization: per batch, draw a diffusion step, perturb real
//! and generated salinity, take one discriminator step on `L_D`, then one
//! generator step on `L_G` through the updated discriminator.

use std::ops::Range;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::features::{trajectory_windows, usable_records, FeatureSpec};
use super::generator::{Generator, GeneratorConfig, Scaler};
use super::loss::{d_loss_tape, g_loss_tape};
use super::DanError;
use crate::nn::{Adam, Tape};
use crate::par::Exec;
use crate::revin::DEFAULT_EPS;
use crate::scheduler::{sample_step, DiffusionSchedule, ScheduleParams};
use crate::tensorize::{TrajectorySet, TIDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Points per batch; whole windows are packed until this is reached.
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
    pub use_norm: bool,
    pub use_gdc: bool,
    pub use_sd: bool,
    /// Feed the `tide` covariate when the data carries it.
    pub use_tide: bool,
    /// Perturb real samples as well as generated ones.
    pub noise_reals: bool,
    pub feature_matching: bool,
    /// Weight of `BCE(D(fake), 1)` in the generator objective.
    pub adversarial_weight: f64,
    /// Draw one diffusion step per sample instead of per batch.
    pub per_sample_step: bool,
    pub zero_init_disc_output: bool,
    /// Cut trajectories into windows of random length in `1..=window` each
    /// epoch instead of fixed-length chunks.
    pub random_window_lengths: bool,
    pub revin_eps: f64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub schedule: ScheduleParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr_g: 1e-3,
            lr_d: 1e-3,
            seed: 42,
            use_norm: true,
            use_gdc: true,
            use_sd: true,
            use_tide: true,
            noise_reals: true,
            feature_matching: true,
            adversarial_weight: 0.0,
            per_sample_step: false,
            zero_init_disc_output: false,
            random_window_lengths: true,
            revin_eps: DEFAULT_EPS,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            schedule: ScheduleParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Norm,
    Gdc,
    Sd,
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "norm" => Ok(Ablation::Norm),
            "gdc" => Ok(Ablation::Gdc),
            "sd" => Ok(Ablation::Sd),
            other => Err(format!("unknown ablation `{other}` (norm|gdc|sd)")),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DanError> {
        let bad = |m: String| Err(DanError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 || self.generator.window == 0 {
            return bad("epochs, batch_size and window must be positive".into());
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad(format!("learning rates must be positive ({}, {})", self.lr_g, self.lr_d));
        }
        if !(self.revin_eps > 0.0) {
            return bad("revin_eps must be positive".into());
        }
        if !(self.adversarial_weight >= 0.0) {
            return bad("adversarial_weight must be >= 0".into());
        }
        Ok(())
    }

    pub fn ablated(&self, which: Ablation) -> Self {
        let mut c = self.clone();
        match which {
            Ablation::Norm => c.use_norm = false,
            Ablation::Gdc => c.use_gdc = false,
            Ablation::Sd => c.use_sd = false,
        }
        c
    }

    /// Plain adversarial network: no normalization, attention, diffusion or
    /// feature matching; MSE plus the adversarial term.
    pub fn vanilla_gan(&self) -> Self {
        Self {
            use_norm: false,
            use_gdc: false,
            use_sd: false,
            feature_matching: false,
            adversarial_weight: 1.0,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub mse: f64,
    pub feature_matching: f64,
    pub adversarial: f64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// `L_D` of the very first batch, before any update.
    pub first_d_loss: f64,
    /// 1-based epoch whose generator was kept.
    pub best_epoch: usize,
    pub best_val_mae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: History,
    pub config: TrainConfig,
}

/// Feature layout for a training set: every covariate it carries, minus
/// `tide` when disabled. Time is measured from the first record's midnight.
pub fn feature_spec_for(set: &TrajectorySet, use_tide: bool) -> Result<FeatureSpec, DanError> {
    let first = set
        .records
        .iter()
        .map(|r| r.timestamp)
        .min()
        .ok_or(DanError::EmptyTrainingSet)?;
    let origin = first.date_naive().and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let covariates = set
        .covariate_names()
        .into_iter()
        .filter(|c| use_tide || c != TIDE)
        .collect();
    Ok(FeatureSpec::new(origin, covariates))
}

/// One diffusion perturbation per row: `x̂ = √ᾱ_t·x + √(1 − ᾱ_t)·ε`.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub signal: Array2<f64>,
    pub spread: Array2<f64>,
    pub noise: Array2<f64>,
}

impl NoiseDraw {
    pub fn sample(schedule: &DiffusionSchedule, n: usize, per_sample: bool, rng: &mut impl Rng) -> Self {
        let shared = sample_step(rng, schedule.steps());
        let mut signal = Array2::zeros((n, 1));
        let mut spread = Array2::zeros((n, 1));
        for i in 0..n {
            let t = if per_sample { sample_step(rng, schedule.steps()) } else { shared };
            let (a, b) = schedule.coefficients(t).expect("step in range");
            signal[[i, 0]] = a;
            spread[[i, 0]] = b;
        }
        let noise = standard_normal(n, rng);
        Self { signal, spread, noise }
    }

    /// Same steps, fresh noise.
    pub fn renoise(&self, rng: &mut impl Rng) -> Self {
        Self {
            noise: standard_normal(self.noise.nrows(), rng),
            ..self.clone()
        }
    }

    pub fn spread_noise(&self) -> Array2<f64> {
        &self.spread * &self.noise
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.signal + &self.spread_noise()
    }
}

/// Standardized salinity as the discriminator sees it: both samples
/// perturbed by `draw` (reals only when `noise_reals`), or untouched.
pub fn discriminator_inputs(
    draw: Option<&NoiseDraw>,
    noise_reals: bool,
    real_z: &Array2<f64>,
    fake_z: Array2<f64>,
    rng: &mut impl Rng,
) -> (Array2<f64>, Array2<f64>) {
    match draw {
        Some(d) => {
            let fake = d.apply(&fake_z);
            let real = if noise_reals { d.renoise(rng).apply(real_z) } else { real_z.clone() };
            (real, fake)
        }
        None => (real_z.clone(), fake_z),
    }
}

fn standard_normal(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 1), || rng.sample(StandardNormal))
}

fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

pub fn train(train_set: &TrajectorySet, val_set: &TrajectorySet, cfg: &TrainConfig) -> Result<TrainedModel, DanError> {
    train_with(train_set, val_set, cfg, Exec::default())
}

pub fn train_with(
    train_set: &TrajectorySet,
    val_set: &TrajectorySet,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainedModel, DanError> {
    cfg.validate()?;
    let spec = feature_spec_for(train_set, cfg.use_tide)?;
    let train_set = usable_records(train_set, &spec);
    if train_set.is_empty() {
        return Err(DanError::EmptyTrainingSet);
    }
    let val_set = usable_records(val_set, &spec);
    let schedule = DiffusionSchedule::from_params(cfg.schedule)?;

    let x_all = spec.matrix(&train_set.records)?;
    let s_all: Array2<f64> = Array2::from_shape_fn((train_set.len(), 1), |(i, _)| {
        train_set.records[i].salinity.expect("usable")
    });
    let scaler = Scaler::fit(&x_all, s_all.column(0).as_slice().expect("contiguous"), cfg.revin_eps)?;
    let cond_all = scaler.features.standardize(&x_all)?;
    let z_all = s_all.mapv(|s| scaler.standardize_target(s));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = Generator::new(
        cfg.generator.clone(),
        cfg.use_norm,
        cfg.use_gdc,
        spec.clone(),
        scaler.clone(),
        &mut rng,
    )?;
    let mut discriminator = Discriminator::new(cfg.discriminator.clone(), spec.dim(), &mut rng)?;
    if cfg.zero_init_disc_output {
        discriminator.zero_output();
    }
    let mut adam_g = Adam::new(&generator.store, cfg.lr_g);
    let mut adam_d = Adam::new(&discriminator.store, cfg.lr_d);

    let val_x = if val_set.is_empty() { None } else { Some(spec.matrix(&val_set.records)?) };
    let val_windows = trajectory_windows(&val_set, cfg.generator.window);
    let val_y: Vec<f64> = val_set.records.iter().map(|r| r.salinity.expect("usable")).collect();

    let fixed_windows = trajectory_windows(&train_set, cfg.generator.window);
    let whole = trajectory_windows(&train_set, usize::MAX);
    let mut history = History::default();
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;
    let (mu_t, inv_scale_t) = (scaler.target.mu[0], 1.0 / scaler.target.scale(0));

    for epoch in 1..=cfg.epochs {
        let mut windows = if cfg.random_window_lengths {
            random_windows(&whole, cfg.generator.window, &mut rng)
        } else {
            fixed_windows.clone()
        };
        windows.shuffle(&mut rng);
        let batches = pack(&windows, cfg.batch_size);
        let mut sums = [0.0f64; 5];
        for (b, batch) in batches.iter().enumerate() {
            let mut rows = Vec::new();
            let mut local = Vec::with_capacity(batch.len());
            for w in batch {
                let start = rows.len();
                rows.extend(w.clone());
                local.push(start..rows.len());
            }
            let xb = gather(&x_all, &rows);
            let sb = gather(&s_all, &rows);
            let cb = gather(&cond_all, &rows);
            let zb = gather(&z_all, &rows);
            let n = rows.len();

            let mut tape = Tape::new();
            let s_hat = generator.forward(&mut tape, &xb, &local)?;
            let fake_z = tape.value(s_hat).mapv(|v| (v - mu_t) * inv_scale_t);
            let draw = cfg.use_sd.then(|| NoiseDraw::sample(&schedule, n, cfg.per_sample_step, &mut rng));
            let (real_in, fake_in) = discriminator_inputs(draw.as_ref(), cfg.noise_reals, &zb, fake_z, &mut rng);

            // discriminator step on detached samples
            let mut dt = Tape::new();
            let r = dt.constant(real_in.clone());
            let r = discriminator.input(&mut dt, r, &cb);
            let f = dt.constant(fake_in);
            let f = discriminator.input(&mut dt, f, &cb);
            let ro = discriminator.forward(&mut dt, r);
            let fo = discriminator.forward(&mut dt, f);
            let ld = d_loss_tape(&mut dt, ro.prob, fo.prob);
            let ld_val = dt.scalar(ld);
            if epoch == 1 && b == 0 {
                history.first_d_loss = ld_val;
            }
            let gd = dt.backward(ld);
            if !ld_val.is_finite() || !gd.all_finite() {
                return Err(DanError::DivergedLoss {
                    epoch,
                    batch: b,
                    d_loss: ld_val,
                    g_loss: f64::NAN,
                });
            }
            adam_d.step(&mut discriminator.store, &gd);

            // generator step through the updated discriminator
            let shifted = tape.add_scalar(s_hat, -mu_t);
            let fz = tape.scale(shifted, inv_scale_t);
            let fake_node = match &draw {
                Some(d) => {
                    let sig = tape.constant(d.signal.clone());
                    let scaled = tape.mul(fz, sig);
                    let noise = tape.constant(d.spread_noise());
                    tape.add(scaled, noise)
                }
                None => fz,
            };
            let fi = discriminator.input(&mut tape, fake_node, &cb);
            let fo = discriminator.forward(&mut tape, fi);
            let feats = if cfg.feature_matching {
                let r = tape.constant(real_in);
                let ri = discriminator.input(&mut tape, r, &cb);
                let ro = discriminator.forward(&mut tape, ri);
                Some((ro.features, fo.features))
            } else {
                None
            };
            let s_true = tape.constant(sb);
            let parts = g_loss_tape(&mut tape, s_true, s_hat, feats, Some((fo.prob, cfg.adversarial_weight)));
            let lg_val = tape.scalar(parts.total);
            let gg = tape.backward(parts.total);
            if !lg_val.is_finite() || !gg.all_finite() {
                return Err(DanError::DivergedLoss {
                    epoch,
                    batch: b,
                    d_loss: ld_val,
                    g_loss: lg_val,
                });
            }
            adam_g.step(&mut generator.store, &gg);

            sums[0] += ld_val;
            sums[1] += lg_val;
            sums[2] += tape.scalar(parts.mse);
            sums[3] += parts.feature_matching.map_or(0.0, |v| tape.scalar(v));
            sums[4] += parts.adversarial.map_or(0.0, |v| tape.scalar(v));
        }
        let nb = batches.len() as f64;
        let val_mae = match &val_x {
            Some(vx) => {
                let pred = generator.predict(vx, &val_windows, exec)?;
                Some(pred.iter().zip(&val_y).map(|(p, y)| (p - y).abs()).sum::<f64>() / val_y.len() as f64)
            }
            None => None,
        };
        history.epochs.push(EpochStats {
            epoch,
            d_loss: sums[0] / nb,
            g_loss: sums[1] / nb,
            mse: sums[2] / nb,
            feature_matching: sums[3] / nb,
            adversarial: sums[4] / nb,
            val_mae,
        });
        tracing::debug!(epoch, d_loss = sums[0] / nb, g_loss = sums[1] / nb, ?val_mae, "epoch");
        if let Some(mae) = val_mae {
            if best.as_ref().is_none_or(|(m, _, _)| mae < *m) {
                best = Some((mae, epoch, generator.store.clone()));
            }
        }
    }

    match best {
        Some((mae, epoch, store)) => {
            generator.store = store;
            history.best_epoch = epoch;
            history.best_val_mae = Some(mae);
        }
        None => history.best_epoch = cfg.epochs,
    }
    Ok(TrainedModel {
        generator,
        discriminator,
        history,
        config: cfg.clone(),
    })
}

/// Cut each range into consecutive pieces of uniform random length in `1..=max`.
fn random_windows(ranges: &[Range<usize>], max: usize, rng: &mut impl Rng) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for r in ranges {
        let mut start = r.start;
        while start < r.end {
            let len = rng.random_range(1..=max.max(1)).min(r.end - start);
            out.push(start..start + len);
            start += len;
        }
    }
    out
}

/// Group windows into batches of at least `batch_size` points (the last
/// batch may be smaller).
pub(crate) fn pack(windows: &[Range<usize>], batch_size: usize) -> Vec<Vec<Range<usize>>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut count = 0;
    for w in windows {
        count += w.len();
        cur.push(w.clone());
        if count >= batch_size {
            out.push(std::mem::take(&mut cur));
            count = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorize::{generate_synthetic, SyntheticConfig};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 8,
            generator: GeneratorConfig {
                hidden: vec![8],
                d_model: 8,
                n_heads: 2,
                window: 4,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                hidden: vec![8, 4],
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn data(n_traj: usize, steps: usize) -> TrajectorySet {
        generate_synthetic(&SyntheticConfig {
            n_trajectories: n_traj,
            steps_per_trajectory: steps,
            ..Default::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn one_epoch_bookkeeping() {
        let set = data(2, 5);
        assert_eq!(set.len(), 10);
        let m = train(&set, &TrajectorySet::default(), &small_cfg()).unwrap();
        assert_eq!(m.history.epochs.len(), 1);
        let e = &m.history.epochs[0];
        assert!(e.d_loss.is_finite() && e.g_loss.is_finite());
        assert!(e.d_loss >= 0.0 && e.g_loss >= 0.0);
        assert_eq!(m.history.best_epoch, 1);
        assert!(e.val_mae.is_none());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let set = data(4, 12);
        let val = data(1, 6);
        let cfg = TrainConfig { epochs: 3, ..small_cfg() };
        let a = train_with(&set, &val, &cfg, Exec::Sequential).unwrap();
        let b = train_with(&set, &val, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.generator, b.generator);
    }

    #[test]
    fn zero_output_discriminator_starts_at_ln2() {
        let set = data(3, 10);
        for cfg in [small_cfg(), small_cfg().vanilla_gan()] {
            let cfg = TrainConfig {
                zero_init_disc_output: true,
                ..cfg
            };
            let m = train(&set, &TrajectorySet::default(), &cfg).unwrap();
            assert!((m.history.first_d_loss - std::f64::consts::LN_2).abs() <= 1e-6);
        }
    }

    #[test]
    fn empty_and_invalid() {
        assert!(matches!(
            train(&TrajectorySet::default(), &TrajectorySet::default(), &small_cfg()),
            Err(DanError::EmptyTrainingSet)
        ));
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        assert!(matches!(train(&data(2, 3), &TrajectorySet::default(), &cfg), Err(DanError::InvalidConfig(_))));
    }

    #[test]
    fn diffusion_wiring() {
        let schedule = DiffusionSchedule::from_params(ScheduleParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Array2::from_shape_fn((5, 1), |(i, _)| i as f64 - 2.0);
        let f = z.mapv(|v| v * 0.5 + 0.1);
        let (r, fk) = discriminator_inputs(None, true, &z, f.clone(), &mut rng);
        assert_eq!(r, z);
        assert_eq!(fk, f);

        let d = NoiseDraw::sample(&schedule, 5, false, &mut rng);
        assert!(d.signal.iter().all(|&s| s == d.signal[[0, 0]]));
        let t = (1..=schedule.steps())
            .find(|&t| schedule.coefficients(t).unwrap().0 == d.signal[[0, 0]])
            .unwrap();
        let via_schedule = schedule.add_noise(&f, t, &d.noise).unwrap();
        assert!((&d.apply(&f) - &via_schedule).iter().all(|v| v.abs() < 1e-15));

        let (r, _) = discriminator_inputs(Some(&d), false, &z, f.clone(), &mut rng);
        assert_eq!(r, z);
        let (r, _) = discriminator_inputs(Some(&d), true, &z, f, &mut rng);
        assert_ne!(r, z);

        let ps = NoiseDraw::sample(&schedule, 200, true, &mut rng);
        assert!(ps.signal.iter().any(|&s| s != ps.signal[[0, 0]]));
    }

    /// Generator objective (MSE + feature matching through a conditional
    /// discriminator) as a function of the generator parameters.
    fn objective(g: &Generator, d: &Discriminator, x: &Array2<f64>, s: &Array2<f64>, tape: &mut Tape) -> crate::nn::Var {
        let cond = g.scaler.features.standardize(x).unwrap();
        let s_hat = g.forward(tape, x, &[0..x.nrows()]).unwrap();
        let shifted = tape.add_scalar(s_hat, -g.scaler.target.mu[0]);
        let z = tape.scale(shifted, 1.0 / g.scaler.target.scale(0));
        let fi = d.input(tape, z, &cond);
        let fo = d.forward(tape, fi);
        let real = tape.constant(s.mapv(|v| g.scaler.standardize_target(v)));
        let ri = d.input(tape, real, &cond);
        let ro = d.forward(tape, ri);
        let st = tape.constant(s.clone());
        let parts = g_loss_tape(tape, st, s_hat, Some((ro.features, fo.features)), None);
        parts.total
    }

    #[test]
    fn g_loss_gradient_matches_finite_differences() {
        let set = data(1, 4);
        let spec = feature_spec_for(&set, true).unwrap();
        let x = spec.matrix(&set.records).unwrap();
        let s = Array2::from_shape_fn((4, 1), |(i, _)| set.records[i].salinity.unwrap());
        let scaler = Scaler::fit(&x, s.column(0).as_slice().unwrap(), 1e-5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gcfg = GeneratorConfig {
            hidden: vec![],
            d_model: 8,
            n_heads: 2,
            window: 4,
            ..Default::default()
        };
        let g = Generator::new(gcfg, true, false, spec.clone(), scaler, &mut rng).unwrap();
        assert_eq!(g.fe.len() + 1, 2, "feature layer plus head");
        let d = Discriminator::new(
            DiscriminatorConfig {
                hidden: vec![6, 4],
                ..Default::default()
            },
            spec.dim(),
            &mut rng,
        )
        .unwrap();
        let mut tape = Tape::new();
        let loss = objective(&g, &d, &x, &s, &mut tape);
        let grads = tape.backward(loss);
        let h = 1e-5;
        let mut checked = 0;
        for idx in [g.fe[0].weight, g.fe[0].bias, g.head.weight, g.feat_gamma, g.tgt_beta] {
            let analytic = grads.get(g.store.key(idx)).unwrap().clone();
            for (pos, &a) in analytic.indexed_iter().step_by(3) {
                let eval = |delta: f64| {
                    let mut gp = g.clone();
                    gp.store.get_mut(idx)[pos] += delta;
                    let mut t = Tape::new();
                    let l = objective(&gp, &d, &x, &s, &mut t);
                    t.scalar(l)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom <= 1e-3,
                    "{} {:?}: analytic {a} vs fd {fd}",
                    g.store.name(idx),
                    pos
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
