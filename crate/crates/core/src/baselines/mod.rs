//! Reference imputers behind one fit/predict interface: ordinary kriging,
//! GWR, MLP, LSTM and a vanilla GAN.
//!
//! Kriging and GWR are purely spatial; the neural baselines see the same
//! per-point features as the main model.

mod distance;
pub mod gwr;
pub mod kriging;
pub mod neural;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distance::Distance;
pub use gwr::{gwr_fit, gwr_fit_predict, Bandwidth, GwrConfig, GwrModel, GwrOutput, GwrPoint, GwrQuery};
pub use kriging::{
    empirical_variogram, fit_variogram, kriging_fit, EmpiricalVariogram, KrigingConfig, KrigingModel,
    KrigingPrediction, Variogram, VariogramModel,
};
pub use neural::{fit_lstm, fit_mlp, LstmConfig, LstmModel, MlpModel, NeuralHistory};

use crate::dan::{train_with, DanError, TrainConfig, TrainedModel};
use crate::par::Exec;
use crate::tensorize::{DrifterRecord, TrajectorySet, TIDE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("need at least {needed} distinct points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("kriging system singular at ({lat}, {lon}) even after jitter")]
    SingularSystem { lat: f64, lon: f64 },
    #[error("local fit for query {query} is rank deficient; global OLS used")]
    RankDeficientLocalFit { query: usize },
    #[error("model has not been fitted")]
    Unfitted,
    #[error("record lacks covariate `{0}`")]
    MissingCovariate(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown baseline `{0}`")]
    UnknownKind(String),
    #[error("{0}")]
    Model(String),
}

impl From<DanError> for BaselineError {
    fn from(e: DanError) -> Self {
        BaselineError::Model(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Kriging,
    Gwr,
    Mlp,
    Lstm,
    Gan,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Kriging,
        BaselineKind::Gwr,
        BaselineKind::Mlp,
        BaselineKind::Lstm,
        BaselineKind::Gan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Kriging => "kriging",
            BaselineKind::Gwr => "gwr",
            BaselineKind::Mlp => "mlp",
            BaselineKind::Lstm => "lstm",
            BaselineKind::Gan => "gan",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = BaselineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| BaselineError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub kriging: KrigingConfig,
    pub gwr: GwrConfig,
    /// Epochs, batch size, learning rate, seed and feature-extractor sizes
    /// for the MLP, LSTM and GAN.
    pub neural: TrainConfig,
    pub lstm: LstmConfig,
    /// Feed tide to GWR and the neural baselines.
    pub use_tide: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kriging: KrigingConfig::default(),
            gwr: GwrConfig::default(),
            neural: TrainConfig::default(),
            lstm: LstmConfig::default(),
            use_tide: true,
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedBaseline {
    Kriging(KrigingModel),
    Gwr(GwrModel),
    Mlp(MlpModel),
    Lstm(LstmModel),
    Gan(Box<TrainedModel>),
}

/// A baseline of any kind; `predict` is rejected until `fit` succeeds.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub config: BaselineConfig,
    pub state: Option<FittedBaseline>,
}

fn spatial_points(set: &TrajectorySet) -> Vec<&DrifterRecord> {
    set.records.iter().filter(|r| r.salinity.is_some_and(f64::is_finite)).collect()
}

impl BaselineModel {
    pub fn new(kind: BaselineKind, config: BaselineConfig) -> Self {
        Self {
            kind,
            config,
            state: None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    fn neural_config(&self) -> TrainConfig {
        TrainConfig {
            use_tide: self.config.use_tide,
            ..self.config.neural.clone()
        }
    }

    /// Fit on `train`; `val` drives model selection for the neural kinds.
    pub fn fit(&mut self, train: &TrajectorySet, val: &TrajectorySet, exec: Exec) -> Result<(), BaselineError> {
        let state = match self.kind {
            BaselineKind::Kriging => {
                let pts: Vec<_> = spatial_points(train)
                    .into_iter()
                    .map(|r| (r.lat, r.lon, r.salinity.expect("filtered")))
                    .collect();
                FittedBaseline::Kriging(kriging_fit(&pts, &self.config.kriging)?)
            }
            BaselineKind::Gwr => {
                let use_tide = self.config.use_tide;
                let pts = spatial_points(train)
                    .into_iter()
                    .map(|r| {
                        let tide = r.covariates.get(TIDE).copied();
                        if use_tide && tide.is_none() {
                            return Err(BaselineError::MissingCovariate(TIDE.into()));
                        }
                        Ok(GwrPoint {
                            lat: r.lat,
                            lon: r.lon,
                            tide,
                            value: r.salinity.expect("filtered"),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let cfg = GwrConfig {
                    use_tide,
                    ..self.config.gwr.clone()
                };
                FittedBaseline::Gwr(gwr_fit(&pts, &cfg, exec)?)
            }
            BaselineKind::Mlp => FittedBaseline::Mlp(fit_mlp(train, val, &self.neural_config(), exec)?),
            BaselineKind::Lstm => {
                FittedBaseline::Lstm(fit_lstm(train, val, &self.neural_config(), self.config.lstm, exec)?)
            }
            BaselineKind::Gan => {
                FittedBaseline::Gan(Box::new(train_with(train, val, &self.neural_config().vanilla_gan(), exec)?))
            }
        };
        self.state = Some(state);
        Ok(())
    }

    /// Salinity at every record of `set`, in record order.
    pub fn predict(&self, set: &TrajectorySet, exec: Exec) -> Result<Vec<f64>, BaselineError> {
        let state = self.state.as_ref().ok_or(BaselineError::Unfitted)?;
        Ok(match state {
            FittedBaseline::Kriging(m) => {
                let q: Vec<_> = set.records.iter().map(|r| (r.lat, r.lon)).collect();
                m.predict_many(&q, exec)?.into_iter().map(|p| p.value).collect()
            }
            FittedBaseline::Gwr(m) => {
                let q: Vec<_> = set
                    .records
                    .iter()
                    .map(|r| GwrQuery {
                        lat: r.lat,
                        lon: r.lon,
                        tide: r.covariates.get(TIDE).copied(),
                    })
                    .collect();
                let out = m.predict(&q, exec)?;
                if !out.warnings.is_empty() {
                    tracing::warn!(count = out.warnings.len(), "GWR queries fell back to global OLS");
                }
                out.values
            }
            FittedBaseline::Mlp(m) => m.predict_set(set, exec)?,
            FittedBaseline::Lstm(m) => m.predict_set(set, exec)?,
            FittedBaseline::Gan(m) => m.generator.predict_set(set, exec)?,
        })
    }

    /// Hyperparameters chosen or fitted for this run, for result metadata.
    pub fn metadata(&self) -> serde_json::Value {
        use serde_json::json;
        let fitted = match &self.state {
            None => serde_json::Value::Null,
            Some(FittedBaseline::Kriging(m)) => json!({
                "variogram": m.variogram,
                "lags": m.config.lags,
                "neighbours": m.config.neighbours,
                "distance": m.config.distance,
            }),
            Some(FittedBaseline::Gwr(m)) => json!({
                "kernel": "gaussian",
                "bandwidth": m.bandwidth,
                "cv_scores": m.cv_scores,
                "use_tide": m.config.use_tide,
                "distance": m.config.distance,
            }),
            Some(FittedBaseline::Mlp(m)) => json!({
                "generator": m.generator.config,
                "best_epoch": m.history.best_epoch,
                "best_val_mae": m.history.best_val_mae,
            }),
            Some(FittedBaseline::Lstm(m)) => json!({
                "lstm": m.config,
                "best_epoch": m.history.best_epoch,
                "best_val_mae": m.history.best_val_mae,
            }),
            Some(FittedBaseline::Gan(m)) => json!({
                "config": m.config,
                "best_epoch": m.history.best_epoch,
                "best_val_mae": m.history.best_val_mae,
            }),
        };
        json!({ "kind": self.kind, "use_tide": self.config.use_tide, "fitted": fitted })
    }
}

/// Construct and fit in one step.
pub fn fit_baseline(
    kind: BaselineKind,
    config: BaselineConfig,
    train: &TrajectorySet,
    val: &TrajectorySet,
    exec: Exec,
) -> Result<BaselineModel, BaselineError> {
    let mut m = BaselineModel::new(kind, config);
    m.fit(train, val, exec)?;
    Ok(m)
}
