use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{metrics, MetricReport};
use super::EvalError;
use crate::baselines::{BaselineConfig, BaselineKind, BaselineModel, FittedBaseline};
use crate::dan::{train_with, Checkpoint, Generator, Region, TrainConfig, TrainedModel};
use crate::par::{map_slice, Exec};
use crate::tensorize::{
    generate_synthetic, parse_trajectories, split_trajectories, ColumnSchema, SplitRatios, SyntheticConfig,
    SyntheticField, TrajectorySet,
};

/// Anything that can impute salinity at every record of a set.
pub trait Imputer: Sync {
    fn impute(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, EvalError>;
}

impl Imputer for Generator {
    fn impute(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, EvalError> {
        Ok(self.predict_set(set, exec)?)
    }
}

impl Imputer for TrainedModel {
    fn impute(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, EvalError> {
        self.generator.impute(set, exec)
    }
}

impl Imputer for BaselineModel {
    fn impute(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, EvalError> {
        Ok(self.predict(set, exec)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelName {
    Oasis,
    Baseline(BaselineKind),
}

impl ModelName {
    pub const ALL: [ModelName; 6] = [
        ModelName::Oasis,
        ModelName::Baseline(BaselineKind::Kriging),
        ModelName::Baseline(BaselineKind::Gwr),
        ModelName::Baseline(BaselineKind::Mlp),
        ModelName::Baseline(BaselineKind::Lstm),
        ModelName::Baseline(BaselineKind::Gan),
    ];

    /// Display label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelName::Oasis => "OASIS",
            ModelName::Baseline(BaselineKind::Kriging) => "Kriging",
            ModelName::Baseline(BaselineKind::Gwr) => "GWR",
            ModelName::Baseline(BaselineKind::Mlp) => "MLP",
            ModelName::Baseline(BaselineKind::Lstm) => "LSTM",
            ModelName::Baseline(BaselineKind::Gan) => "GAN",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelName::Oasis => f.write_str("oasis"),
            ModelName::Baseline(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for ModelName {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("oasis") {
            return Ok(ModelName::Oasis);
        }
        s.parse::<BaselineKind>()
            .map(ModelName::Baseline)
            .map_err(|_| EvalError::InvalidConfig(format!("unknown model `{s}`")))
    }
}

impl TryFrom<String> for ModelName {
    type Error = EvalError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelName> for String {
    fn from(m: ModelName) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        #[serde(default)]
        config: SyntheticConfig,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: ColumnSchema,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            config: SyntheticConfig::default(),
        }
    }
}

/// Records plus, for synthetic data, the noiseless field they came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub set: TrajectorySet,
    pub field: Option<SyntheticField>,
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, EvalError> {
        match self {
            DatasetSource::Synthetic { config } => {
                let (set, field) = generate_synthetic(config).map_err(|e| EvalError::Data(e.to_string()))?;
                Ok(Dataset { set, field: Some(field) })
            }
            DatasetSource::Csv { path, schema } => {
                let file = std::fs::File::open(path).map_err(|e| EvalError::Data(format!("{}: {e}", path.display())))?;
                let out = parse_trajectories(file, schema).map_err(|e| EvalError::Data(e.to_string()))?;
                if !out.rejected.is_empty() {
                    tracing::warn!(rejected = out.rejected.len(), "rows dropped while loading {}", path.display());
                }
                Ok(Dataset { set: out.set, field: None })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Dataset label in result tables.
    pub dataset_name: String,
    pub dataset: DatasetSource,
    pub model: ModelName,
    pub use_norm: bool,
    pub use_gdc: bool,
    pub use_sd: bool,
    pub use_tide: bool,
    /// Model seed (initialization, shuffling, noise).
    pub seed: u64,
    pub split_seed: u64,
    pub split: SplitRatios,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    /// Runs are written to `<output_dir>/<config hash>/`; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_name: "synthetic".into(),
            dataset: DatasetSource::default(),
            model: ModelName::Oasis,
            use_norm: true,
            use_gdc: true,
            use_sd: true,
            use_tide: true,
            seed: 42,
            split_seed: 42,
            split: SplitRatios::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EvalError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Hash of everything that affects results (the output location excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Training config with this experiment's flags and seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            use_norm: self.use_norm,
            use_gdc: self.use_gdc,
            use_sd: self.use_sd,
            use_tide: self.use_tide,
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            neural: TrainConfig {
                use_tide: self.use_tide,
                seed: self.seed,
                ..self.baseline.neural.clone()
            },
            use_tide: self.use_tide,
            ..self.baseline.clone()
        }
    }

    /// Row label: the model name plus any disabled component.
    pub fn label(&self) -> String {
        let mut s = self.model.label().to_string();
        if self.model == ModelName::Oasis {
            for (on, name) in [(self.use_norm, "Norm"), (self.use_gdc, "GDC"), (self.use_sd, "SD")] {
                if !on {
                    s.push_str(&format!(" w/o {name}"));
                }
            }
        }
        if !self.use_tide {
            s.push_str(" (no tide)");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub dataset: String,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "dataset", "mae", "rmse", "mape", "n"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.dataset.clone(),
                format!("{:.6}", r.mae),
                format!("{:.6}", r.rmse),
                format!("{:.6}", r.mape),
                r.n.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mw = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
        let dw = self.rows.iter().map(|r| r.dataset.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<mw$}  {:<dw$}  {:>10}  {:>10}  {:>9}\n", "Model", "Dataset", "MAE", "RMSE", "MAPE(%)");
        out.push_str(&format!("{}\n", "-".repeat(mw + dw + 39)));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<mw$}  {:<dw$}  {:>10.4}  {:>10.4}  {:>9.4}\n",
                r.model, r.dataset, r.mae, r.rmse, r.mape
            ));
        }
        out
    }

    /// Write `results.csv` and `results.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("results.csv"), self.to_csv()).map_err(io)?;
        std::fs::write(dir.join("results.txt"), self.to_text()).map_err(io)?;
        Ok(())
    }
}

fn io(e: std::io::Error) -> EvalError {
    EvalError::Io(e.to_string())
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Oasis(Box<TrainedModel>),
    Baseline(Box<BaselineModel>),
}

impl FittedModel {
    fn imputer(&self) -> &dyn Imputer {
        match self {
            FittedModel::Oasis(m) => m.as_ref(),
            FittedModel::Baseline(m) => m.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config_hash: String,
    pub row: ResultRow,
    pub metrics: MetricReport,
    /// Against the noiseless field, for synthetic data.
    pub truth_metrics: Option<MetricReport>,
    pub run_dir: Option<PathBuf>,
    pub model: FittedModel,
}

impl ExperimentOutcome {
    pub fn history_json(&self) -> serde_json::Value {
        match &self.model {
            FittedModel::Oasis(m) => serde_json::to_value(&m.history).expect("history serializes"),
            FittedModel::Baseline(m) => m.metadata(),
        }
    }
}

/// Train on the train split, select on validation, score on test.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentOutcome, EvalError> {
    let label = cfg.label();
    run_inner(cfg, exec).map_err(|e| EvalError::Experiment {
        label,
        message: e.to_string(),
    })
}

fn run_inner(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentOutcome, EvalError> {
    let data = cfg.dataset.load()?;
    let split = split_trajectories(&data.set, cfg.split, cfg.split_seed).map_err(|e| EvalError::Data(e.to_string()))?;
    let train = data.set.subset(&split.train_ids);
    let val = data.set.subset(&split.val_ids);
    let test = data.set.subset(&split.test_ids);
    let observed: Vec<usize> = (0..test.len())
        .filter(|&i| test.records[i].salinity.is_some_and(f64::is_finite))
        .collect();
    if observed.is_empty() {
        return Err(EvalError::Data("test split has no observed salinity".into()));
    }
    let test = TrajectorySet::from_records(observed.iter().map(|&i| test.records[i].clone()).collect());

    let model = match cfg.model {
        ModelName::Oasis => FittedModel::Oasis(Box::new(train_with(&train, &val, &cfg.train_config(), exec)?)),
        ModelName::Baseline(kind) => {
            let mut m = BaselineModel::new(kind, cfg.baseline_config());
            m.fit(&train, &val, exec)?;
            FittedModel::Baseline(Box::new(m))
        }
    };
    let pred = model.imputer().impute(&test, exec)?;
    let y: Vec<f64> = test.records.iter().map(|r| r.salinity.expect("observed")).collect();
    let report = metrics(&y, &pred)?;
    let truth_metrics = match &data.field {
        Some(f) => {
            let t: Vec<f64> = test.records.iter().map(|r| f.salinity(r.timestamp, r.lat, r.lon)).collect();
            Some(metrics(&t, &pred)?)
        }
        None => None,
    };
    let row = ResultRow {
        model: cfg.label(),
        dataset: cfg.dataset_name.clone(),
        mae: report.mae,
        rmse: report.rmse,
        mape: report.mape,
        n: report.n,
    };
    let mut outcome = ExperimentOutcome {
        config_hash: cfg.hash(),
        row,
        metrics: report,
        truth_metrics,
        run_dir: None,
        model,
    };
    if let Some(root) = &cfg.output_dir {
        outcome.run_dir = Some(persist(cfg, &outcome, &train, data.field.as_ref(), root)?);
    }
    Ok(outcome)
}

fn persist(
    cfg: &ExperimentConfig,
    out: &ExperimentOutcome,
    train: &TrajectorySet,
    field: Option<&SyntheticField>,
    root: &Path,
) -> Result<PathBuf, EvalError> {
    let dir = root.join(&out.config_hash);
    std::fs::create_dir_all(&dir).map_err(io)?;
    let json = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json");
    std::fs::write(dir.join("config.json"), json(&serde_json::to_value(cfg).expect("config"))).map_err(io)?;
    let summary = serde_json::json!({
        "model": out.row.model,
        "dataset": out.row.dataset,
        "config_hash": out.config_hash,
        "metrics": out.metrics,
        "truth_metrics": out.truth_metrics,
        "history": out.history_json(),
    });
    std::fs::write(dir.join("metrics.json"), json(&summary)).map_err(io)?;
    ResultsTable { rows: vec![out.row.clone()] }.write(&dir)?;
    let region = Region::around(train, 0.1).ok_or_else(|| EvalError::Data("empty training split".into()))?;
    let tide = field.map(|f| f.tide.clone());
    let trained = match &out.model {
        FittedModel::Oasis(m) => Some(m.as_ref()),
        FittedModel::Baseline(b) => match &b.state {
            Some(FittedBaseline::Gan(m)) => Some(m.as_ref()),
            _ => None,
        },
    };
    if let Some(m) = trained {
        Checkpoint::from_trained(m, region, tide, None)
            .save(dir.join("model.ckpt"))
            .map_err(|e| EvalError::Io(e.to_string()))?;
    }
    Ok(dir)
}

/// One row per model on the same data and split.
pub fn compare_models(
    base: &ExperimentConfig,
    models: &[ModelName],
    exec: Exec,
) -> Result<(ResultsTable, Vec<ExperimentOutcome>), EvalError> {
    let cfgs: Vec<_> = models
        .iter()
        .map(|&model| ExperimentConfig { model, ..base.clone() })
        .collect();
    collect(map_slice(exec, &cfgs, |c| run_experiment(c, exec)))
}

/// Full model and the three single-component ablations, in that order.
pub fn ablation_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let full = ExperimentConfig {
        model: ModelName::Oasis,
        use_norm: true,
        use_gdc: true,
        use_sd: true,
        ..base.clone()
    };
    vec![
        full.clone(),
        ExperimentConfig {
            use_norm: false,
            ..full.clone()
        },
        ExperimentConfig {
            use_gdc: false,
            ..full.clone()
        },
        ExperimentConfig { use_sd: false, ..full },
    ]
}

pub fn ablation_sweep(base: &ExperimentConfig, exec: Exec) -> Result<(ResultsTable, Vec<ExperimentOutcome>), EvalError> {
    let cfgs = ablation_configs(base);
    collect(map_slice(exec, &cfgs, |c| run_experiment(c, exec)))
}

/// The same experiment under each seed.
pub fn run_seeds(base: &ExperimentConfig, seeds: &[u64], exec: Exec) -> Result<Vec<ExperimentOutcome>, EvalError> {
    let cfgs: Vec<_> = seeds
        .iter()
        .map(|&seed| ExperimentConfig { seed, ..base.clone() })
        .collect();
    map_slice(exec, &cfgs, |c| run_experiment(c, exec)).into_iter().collect()
}

fn collect(
    results: Vec<Result<ExperimentOutcome, EvalError>>,
) -> Result<(ResultsTable, Vec<ExperimentOutcome>), EvalError> {
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let table = ResultsTable {
        rows: outcomes.iter().map(|o| o.row.clone()).collect(),
    };
    Ok((table, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{GwrConfig, LstmConfig};
    use crate::dan::{DiscriminatorConfig, GeneratorConfig};

    pub(crate) fn tiny() -> ExperimentConfig {
        let train = TrainConfig {
            epochs: 2,
            batch_size: 32,
            generator: GeneratorConfig {
                hidden: vec![8],
                d_model: 8,
                n_heads: 2,
                window: 8,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                hidden: vec![8, 4],
                ..Default::default()
            },
            ..Default::default()
        };
        ExperimentConfig {
            dataset: DatasetSource::Synthetic {
                config: SyntheticConfig {
                    n_trajectories: 8,
                    steps_per_trajectory: 20,
                    ..Default::default()
                },
            },
            baseline: BaselineConfig {
                neural: train.clone(),
                lstm: LstmConfig { hidden: 4, window: 8 },
                gwr: GwrConfig {
                    cv_max_points: 20,
                    ..Default::default()
                },
                ..Default::default()
            },
            train,
            ..Default::default()
        }
    }

    #[test]
    fn all_models_give_finite_rows_and_rerun_identically() {
        let base = tiny();
        let (table, outcomes) = compare_models(&base, &ModelName::ALL, Exec::Sequential).unwrap();
        assert_eq!(table.rows.len(), 6);
        let labels: Vec<_> = table.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(labels, ["OASIS", "Kriging", "GWR", "MLP", "LSTM", "GAN"]);
        for r in &table.rows {
            assert!(r.mae.is_finite() && r.rmse.is_finite() && r.mape.is_finite());
            assert!(r.rmse >= r.mae);
        }
        assert!(outcomes.iter().all(|o| o.truth_metrics.is_some()));
        let (again, _) = compare_models(&base, &ModelName::ALL, Exec::Parallel).unwrap();
        assert_eq!(again, table);
    }

    #[test]
    fn ablation_sweep_has_four_rows() {
        let (table, _) = ablation_sweep(&tiny(), Exec::Sequential).unwrap();
        let labels: Vec<_> = table.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(labels, ["OASIS", "OASIS w/o Norm", "OASIS w/o GDC", "OASIS w/o SD"]);
    }

    #[test]
    fn runs_persist_under_the_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output_dir: Some(dir.path().to_path_buf()),
            ..tiny()
        };
        let out = run_experiment(&cfg, Exec::Sequential).unwrap();
        let run = out.run_dir.clone().unwrap();
        assert_eq!(run, dir.path().join(cfg.hash()));
        for f in ["config.json", "metrics.json", "results.csv", "results.txt", "model.ckpt"] {
            assert!(run.join(f).exists(), "{f}");
        }
        let (ckpt, _) = Checkpoint::load(run.join("model.ckpt")).unwrap();
        assert!(ckpt.metadata.tide.is_some());
        let back = ExperimentConfig::from_json_file(run.join("config.json")).unwrap();
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(ExperimentConfig { seed: 7, ..cfg.clone() }.hash(), cfg.hash());
        assert_eq!(ExperimentConfig { output_dir: None, ..cfg.clone() }.hash(), cfg.hash());
    }

    #[test]
    fn errors_carry_context() {
        let cfg = ExperimentConfig {
            dataset: DatasetSource::Csv {
                path: "/nonexistent/data.csv".into(),
                schema: ColumnSchema::default(),
            },
            ..tiny()
        };
        match run_experiment(&cfg, Exec::Sequential) {
            Err(EvalError::Experiment { label, message }) => {
                assert_eq!(label, "OASIS");
                assert!(message.contains("/nonexistent/data.csv"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_names_and_tables() {
        for m in ModelName::ALL {
            assert_eq!(m.to_string().parse::<ModelName>().unwrap(), m);
        }
        let t = ResultsTable {
            rows: vec![ResultRow {
                model: "OASIS".into(),
                dataset: "synthetic".into(),
                mae: 1.5,
                rmse: 2.0,
                mape: 3.25,
                n: 4,
            }],
        };
        assert_eq!(t.to_csv(), "model,dataset,mae,rmse,mape,n\nOASIS,synthetic,1.500000,2.000000,3.250000,4\n");
        assert!(t.to_text().contains("1.5000"));
        let json = serde_json::to_string(&ExperimentConfig::default()).unwrap();
        assert!(json.contains("\"model\":\"oasis\""));
    }
}
