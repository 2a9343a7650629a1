use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use oasis_core::dan::{Checkpoint, Region};
use oasis_core::tensorize::{format_timestamp, parse_timestamp};
use oasis_core::tide::TideModel;
use oasis_core::Exec;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ServeError;

const TIDE: &str = "tide";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeRequest {
    #[serde(serialize_with = "ser_time", deserialize_with = "de_time")]
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    /// Metres; bypasses every tide source when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tide_override: Option<f64>,
}

fn ser_time<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_timestamp(t))
}

fn de_time<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
    let s = String::deserialize(d)?;
    parse_timestamp(&s).ok_or_else(|| serde::de::Error::custom(format!("unparseable timestamp {s:?}")))
}

impl ImputeRequest {
    pub fn new(timestamp: DateTime<Utc>, lat: f64, lon: f64) -> Self {
        Self {
            timestamp,
            lat,
            lon,
            tide_override: None,
        }
    }

    pub fn with_tide(mut self, tide: f64) -> Self {
        self.tide_override = Some(tide);
        self
    }

    /// Coordinates and override must be finite and on the globe.
    pub fn validate(&self) -> Result<(), ServeError> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(ServeError::InvalidRequest(format!("lat {} outside [-90, 90]", self.lat)));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(ServeError::InvalidRequest(format!("lon {} outside [-180, 180]", self.lon)));
        }
        if let Some(t) = self.tide_override {
            if !t.is_finite() {
                return Err(ServeError::InvalidRequest("tide_override is not finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TideSource {
    Noaa,
    Override,
    ModelExtrapolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeResponse {
    /// psu.
    pub salinity: f64,
    /// Metres. Absent for models trained without the tide covariate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tide_used: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tide_source: Option<TideSource>,
    pub model_version: String,
}

/// A verified checkpoint ready for inference. Never mutated once built.
#[derive(Debug, Clone)]
pub struct ServingModel {
    pub checkpoint: Checkpoint,
    pub version: String,
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ServingModel, ServeError> {
    let (checkpoint, version) = Checkpoint::load(path)?;
    ServingModel::new(checkpoint, version)
}

impl ServingModel {
    pub fn new(checkpoint: Checkpoint, version: String) -> Result<Self, ServeError> {
        if version.is_empty() {
            return Err(ServeError::UnsupportedModel("empty version tag".into()));
        }
        if let Some(c) = checkpoint.generator.features.covariates.iter().find(|c| *c != TIDE) {
            return Err(ServeError::UnsupportedModel(format!(
                "covariate {c:?} cannot be supplied by point requests"
            )));
        }
        Ok(Self { checkpoint, version })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ServeError> {
        let (checkpoint, version) = Checkpoint::from_bytes(bytes)?;
        Self::new(checkpoint, version)
    }

    pub fn region(&self) -> Region {
        self.checkpoint.metadata.region
    }

    pub fn uses_tide(&self) -> bool {
        self.checkpoint.generator.features.covariates.iter().any(|c| c == TIDE)
    }

    pub fn tide_model(&self) -> Option<&TideModel> {
        self.checkpoint.metadata.tide.as_ref()
    }

    pub fn check_region(&self, req: &ImputeRequest) -> Result<(), ServeError> {
        req.validate()?;
        if !self.region().contains(req.lat, req.lon) {
            return Err(ServeError::OutOfRegion {
                lat: req.lat,
                lon: req.lon,
            });
        }
        Ok(())
    }

    /// Salinity at one point as a single-token window.
    pub fn predict(&self, t: DateTime<Utc>, lat: f64, lon: f64, tide: Option<f64>) -> Result<f64, ServeError> {
        let generator = &self.checkpoint.generator;
        let mut cov = BTreeMap::new();
        if let Some(h) = tide {
            cov.insert(TIDE.to_string(), h);
        }
        let row = generator.features.encode(t, lat, lon, &cov)?;
        let x = Array2::from_shape_vec((1, row.len()), row).map_err(|e| ServeError::Inference(e.to_string()))?;
        let s = generator.predict_points(&x, Exec::Sequential)?[0];
        if !s.is_finite() {
            return Err(ServeError::Inference("non-finite salinity".into()));
        }
        Ok(s)
    }

    pub fn info(&self) -> ModelInfo {
        let g = &self.checkpoint.generator;
        ModelInfo {
            version: self.version.clone(),
            config_hash: self.checkpoint.config_hash.clone(),
            region: self.region(),
            features: g.features.names(),
            use_norm: g.use_norm,
            use_gdc: g.use_gdc,
            use_sd: self.checkpoint.config.use_sd,
            tide_station: self.checkpoint.metadata.tide_station.clone(),
            has_tide_model: self.tide_model().is_some(),
            epochs_trained: self.checkpoint.metadata.history.epochs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: String,
    pub config_hash: String,
    pub region: Region,
    pub features: Vec<String>,
    pub use_norm: bool,
    pub use_gdc: bool,
    pub use_sd: bool,
    pub tide_station: Option<String>,
    pub has_tide_model: bool,
    pub epochs_trained: usize,
}
