//! Geographically weighted regression with a gaussian kernel
//! `w = exp(−d²/(2b²))` and regressors `(1, lat, lon[, tide])`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::distance::Distance;
use super::BaselineError;
use crate::par::{map_indexed, Exec};

/// Condition number above which a scaled local system counts as rank deficient.
const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Leave-one-out cross-validation over a log grid.
    #[default]
    Cv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GwrConfig {
    pub bandwidth: Bandwidth,
    pub use_tide: bool,
    pub distance: Distance,
    pub cv_grid: usize,
    /// Held-out points scored per candidate bandwidth; larger sets are thinned evenly.
    pub cv_max_points: usize,
}

impl Default for GwrConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Cv,
            use_tide: true,
            distance: Distance::Degrees,
            cv_grid: 10,
            cv_max_points: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwrPoint {
    pub lat: f64,
    pub lon: f64,
    pub tide: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwrQuery {
    pub lat: f64,
    pub lon: f64,
    pub tide: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwrModel {
    pub config: GwrConfig,
    pub bandwidth: f64,
    /// `(bandwidth, LOO mean squared error)` per candidate when cross-validated.
    pub cv_scores: Vec<(f64, f64)>,
    /// Global OLS coefficients on regressors centred at `centre`.
    pub global: Vec<f64>,
    pub centre: Vec<f64>,
    pub points: Vec<GwrPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwrOutput {
    pub values: Vec<f64>,
    /// One `RankDeficientLocalFit` per query answered by the global fit.
    pub warnings: Vec<BaselineError>,
}

fn regressors(lat: f64, lon: f64, tide: Option<f64>, use_tide: bool) -> Vec<f64> {
    let mut r = vec![1.0, lat, lon];
    if use_tide {
        r.push(tide.unwrap_or(f64::NAN));
    }
    r
}

/// Weighted least squares via SVD of the column-scaled `√W·X`.
/// `None` when that matrix is rank deficient.
fn weighted_ls(rows: impl Iterator<Item = (Vec<f64>, f64, f64)>, p: usize) -> Option<Vec<f64>> {
    let mut a = Vec::new();
    let mut y = Vec::new();
    for (x, v, w) in rows {
        if w > 0.0 {
            let r = w.sqrt();
            a.extend(x.iter().map(|xi| xi * r));
            y.push(v * r);
        }
    }
    let n = y.len();
    if n < p {
        return None;
    }
    let mut a = DMatrix::from_row_slice(n, p, &a);
    let mut s = vec![0.0; p];
    for (j, sj) in s.iter_mut().enumerate() {
        let norm = a.column(j).norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return None;
        }
        *sj = 1.0 / norm;
        a.column_mut(j).scale_mut(*sj);
    }
    let svd = a.svd(true, true);
    let (hi, lo) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(h, l), &x| (h.max(x), l.min(x)));
    if !(lo > 0.0 && hi / lo < MAX_CONDITION) {
        return None;
    }
    let b = svd.solve(&DVector::from_vec(y), 0.0).ok()?;
    Some((0..p).map(|i| b[i] * s[i]).collect())
}

fn global_ols(points: &[GwrPoint], use_tide: bool) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() as f64;
    let raw: Vec<Vec<f64>> = points.iter().map(|q| regressors(q.lat, q.lon, q.tide, use_tide)).collect();
    let p = raw[0].len();
    let mut centre = vec![0.0; p];
    for r in &raw {
        for j in 1..p {
            centre[j] += r[j] / n;
        }
    }
    let x = DMatrix::from_fn(points.len(), p, |i, j| raw[i][j] - centre[j]);
    let y = DVector::from_iterator(points.len(), points.iter().map(|q| q.value));
    let beta = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map(|b| b.iter().copied().collect())
        .unwrap_or_else(|_| {
            let mut b = vec![0.0; p];
            b[0] = y.mean();
            b
        });
    (beta, centre)
}

pub fn gwr_fit(points: &[GwrPoint], config: &GwrConfig, exec: Exec) -> Result<GwrModel, BaselineError> {
    let p = if config.use_tide { 4 } else { 3 };
    if points.len() < p + 1 {
        return Err(BaselineError::TooFewPoints {
            needed: p + 1,
            found: points.len(),
        });
    }
    if config.use_tide && points.iter().any(|q| q.tide.is_none()) {
        return Err(BaselineError::MissingCovariate("tide".into()));
    }
    if points.iter().any(|q| !(q.lat.is_finite() && q.lon.is_finite() && q.value.is_finite())) {
        return Err(BaselineError::InvalidConfig("non-finite GWR input".into()));
    }
    let (global, centre) = global_ols(points, config.use_tide);
    let mut model = GwrModel {
        config: config.clone(),
        bandwidth: 1.0,
        cv_scores: Vec::new(),
        global,
        centre,
        points: points.to_vec(),
    };
    model.bandwidth = match config.bandwidth {
        Bandwidth::Fixed(b) if b > 0.0 && b.is_finite() => b,
        Bandwidth::Fixed(b) => return Err(BaselineError::InvalidConfig(format!("bandwidth {b} must be positive"))),
        Bandwidth::Cv => {
            let scores = model.cross_validate(exec);
            let best = scores
                .iter()
                .copied()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty grid");
            model.cv_scores = scores;
            best.0
        }
    };
    Ok(model)
}

impl GwrModel {
    fn regressor_count(&self) -> usize {
        if self.config.use_tide {
            4
        } else {
            3
        }
    }

    /// Candidate bandwidths from 1% to 100% of the data extent, log spaced.
    pub fn bandwidth_grid(&self) -> Vec<f64> {
        let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
        for q in &self.points {
            lo = (lo.0.min(q.lat), lo.1.min(q.lon));
            hi = (hi.0.max(q.lat), hi.1.max(q.lon));
        }
        let extent = self.config.distance.between(lo, hi).max(1e-6);
        let k = self.config.cv_grid.max(2);
        (0..k)
            .map(|i| extent * 10f64.powf(-2.0 + 2.0 * i as f64 / (k - 1) as f64))
            .collect()
    }

    fn cross_validate(&self, exec: Exec) -> Vec<(f64, f64)> {
        let n = self.points.len();
        let m = self.config.cv_max_points.clamp(1, n);
        let held: Vec<usize> = (0..m).map(|i| i * n / m).collect();
        self.bandwidth_grid()
            .into_iter()
            .map(|b| {
                let errs = map_indexed(exec, held.len(), |k| {
                    let i = held[k];
                    let q = &self.points[i];
                    let pred = self
                        .local(q.lat, q.lon, q.tide, b, Some(i))
                        .unwrap_or_else(|| self.global_at(q.lat, q.lon, q.tide));
                    (pred - q.value).powi(2)
                });
                (b, errs.iter().sum::<f64>() / errs.len() as f64)
            })
            .collect()
    }

    fn global_at(&self, lat: f64, lon: f64, tide: Option<f64>) -> f64 {
        regressors(lat, lon, tide, self.config.use_tide)
            .iter()
            .zip(&self.centre)
            .zip(&self.global)
            .map(|((x, c), b)| (x - c) * b)
            .sum()
    }

    /// Local intercept with regressors centred on the query.
    fn local(&self, lat: f64, lon: f64, tide: Option<f64>, bandwidth: f64, exclude: Option<usize>) -> Option<f64> {
        let use_tide = self.config.use_tide;
        let q = regressors(lat, lon, tide, use_tide);
        let dist = self.config.distance;
        let two_b2 = 2.0 * bandwidth * bandwidth;
        let rows = self.points.iter().enumerate().filter(|(i, _)| Some(*i) != exclude).map(|(_, pt)| {
            let x: Vec<f64> = regressors(pt.lat, pt.lon, pt.tide, use_tide)
                .iter()
                .zip(&q)
                .enumerate()
                .map(|(j, (a, b))| if j == 0 { 1.0 } else { a - b })
                .collect();
            let d = dist.between((lat, lon), (pt.lat, pt.lon));
            (x, pt.value, (-d * d / two_b2).exp())
        });
        weighted_ls(rows, self.regressor_count()).map(|b| b[0])
    }

    pub fn predict(&self, queries: &[GwrQuery], exec: Exec) -> Result<GwrOutput, BaselineError> {
        if self.config.use_tide && queries.iter().any(|q| q.tide.is_none()) {
            return Err(BaselineError::MissingCovariate("tide".into()));
        }
        let solved = map_indexed(exec, queries.len(), |i| {
            let q = &queries[i];
            self.local(q.lat, q.lon, q.tide, self.bandwidth, None)
        });
        let mut out = GwrOutput {
            values: Vec::with_capacity(queries.len()),
            warnings: Vec::new(),
        };
        for (i, (s, q)) in solved.into_iter().zip(queries).enumerate() {
            match s {
                Some(v) => out.values.push(v),
                None => {
                    out.warnings.push(BaselineError::RankDeficientLocalFit { query: i });
                    out.values.push(self.global_at(q.lat, q.lon, q.tide));
                }
            }
        }
        Ok(out)
    }
}

pub fn gwr_fit_predict(
    points: &[GwrPoint],
    queries: &[GwrQuery],
    config: &GwrConfig,
    exec: Exec,
) -> Result<GwrOutput, BaselineError> {
    gwr_fit(points, config, exec)?.predict(queries, exec)
}
