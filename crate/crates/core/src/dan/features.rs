//! Per-point model inputs: `(days since origin, sin/cos of daily phase,
//! lat, lon, covariates...)`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::ops::Range;

use chrono::{DateTime, Timelike, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::DanError;
use crate::tensorize::{DrifterRecord, TrajectorySet};

pub const TIME_FEATURES: [&str; 3] = ["day", "day_sin", "day_cos"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub time_origin: DateTime<Utc>,
    /// Covariate channels in input order.
    pub covariates: Vec<String>,
}

/// One encoded point with its target when observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub target: Option<f64>,
}

impl FeatureSpec {
    pub fn new(time_origin: DateTime<Utc>, covariates: Vec<String>) -> Self {
        Self { time_origin, covariates }
    }

    pub fn dim(&self) -> usize {
        TIME_FEATURES.len() + 2 + self.covariates.len()
    }

    pub fn names(&self) -> Vec<String> {
        TIME_FEATURES
            .iter()
            .map(|s| s.to_string())
            .chain(["lat".to_string(), "lon".to_string()])
            .chain(self.covariates.iter().cloned())
            .collect()
    }

    pub fn encode(
        &self,
        t: DateTime<Utc>,
        lat: f64,
        lon: f64,
        covariates: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>, DanError> {
        let days = (t - self.time_origin).num_milliseconds() as f64 / 86_400_000.0;
        let secs = t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 * 1e-9;
        let phase = TAU * secs / 86_400.0;
        let mut out = Vec::with_capacity(self.dim());
        out.extend([days, phase.sin(), phase.cos(), lat, lon]);
        for name in &self.covariates {
            let v = covariates
                .get(name)
                .copied()
                .ok_or_else(|| DanError::MissingCovariate(name.clone()))?;
            out.push(v);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DanError::NonFiniteInput);
        }
        Ok(out)
    }

    pub fn encode_record(&self, r: &DrifterRecord) -> Result<FeatureVector, DanError> {
        Ok(FeatureVector {
            values: self.encode(r.timestamp, r.lat, r.lon, &r.covariates)?,
            target: r.salinity,
        })
    }

    /// Feature matrix for every record, in record order.
    pub fn matrix(&self, records: &[DrifterRecord]) -> Result<Array2<f64>, DanError> {
        let mut x = Array2::zeros((records.len(), self.dim()));
        for (i, r) in records.iter().enumerate() {
            let v = self.encode(r.timestamp, r.lat, r.lon, &r.covariates)?;
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(x)
    }
}

/// Split a time-sorted set into token windows of at most `len` consecutive
/// records of one trajectory.
pub fn trajectory_windows(set: &TrajectorySet, len: usize) -> Vec<Range<usize>> {
    let len = len.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < set.records.len() {
        let id = &set.records[start].trajectory_id;
        let mut end = start + 1;
        while end < set.records.len() && end - start < len && &set.records[end].trajectory_id == id {
            end += 1;
        }
        out.push(start..end);
        start = end;
    }
    out
}

/// Keep records carrying salinity and every required covariate.
pub fn usable_records(set: &TrajectorySet, spec: &FeatureSpec) -> TrajectorySet {
    let records: Vec<_> = set
        .records
        .iter()
        .filter(|r| {
            r.salinity.is_some_and(f64::is_finite) && spec.covariates.iter().all(|c| r.covariates.contains_key(c))
        })
        .cloned()
        .collect();
    let mut ids: Vec<String> = Vec::new();
    for r in &records {
        if ids.last() != Some(&r.trajectory_id) && !ids.contains(&r.trajectory_id) {
            ids.push(r.trajectory_id.clone());
        }
    }
    TrajectorySet {
        records,
        trajectory_ids: ids,
    }
}
