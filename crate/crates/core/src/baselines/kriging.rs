//! Ordinary kriging with an isotropic variogram fitted to the binned
//! empirical semivariogram.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::distance::Distance;
use super::BaselineError;
use crate::par::{map_slice, Exec};

/// Diagonal jitter applied when the kriging system is singular.
pub const JITTER: f64 = 1e-10;
/// Points used for pair statistics; larger inputs are thinned evenly.
const MAX_VARIOGRAM_POINTS: usize = 2000;
const RANGE_GRID: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramModel {
    #[default]
    Exponential,
    Spherical,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variogram {
    pub model: VariogramModel,
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl Variogram {
    pub fn new(model: VariogramModel, nugget: f64, sill: f64, range: f64) -> Result<Self, BaselineError> {
        if !(nugget >= 0.0 && sill > nugget && range > 0.0 && sill.is_finite() && range.is_finite()) {
            return Err(BaselineError::InvalidConfig(format!(
                "variogram needs 0 <= nugget < sill and range > 0 (got {nugget}, {sill}, {range})"
            )));
        }
        Ok(Self {
            model,
            nugget,
            sill,
            range,
        })
    }

    fn shape(model: VariogramModel, h: f64, range: f64) -> f64 {
        let r = h / range;
        match model {
            VariogramModel::Exponential => 1.0 - (-r).exp(),
            VariogramModel::Spherical if r >= 1.0 => 1.0,
            VariogramModel::Spherical => 1.5 * r - 0.5 * r.powi(3),
            VariogramModel::Gaussian => 1.0 - (-r * r).exp(),
        }
    }

    /// `γ(h)`, with `γ(0) = nugget`.
    pub fn gamma(&self, h: f64) -> f64 {
        self.nugget + (self.sill - self.nugget) * Self::shape(self.model, h, self.range)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    /// Mean pair distance per non-empty bin.
    pub lags: Vec<f64>,
    pub gamma: Vec<f64>,
    pub counts: Vec<usize>,
    pub max_distance: f64,
}

/// Binned semivariance `Σ(zᵢ − zⱼ)²/(2N)` out to half the largest pair distance.
pub fn empirical_variogram(points: &[(f64, f64, f64)], lags: usize, distance: Distance) -> EmpiricalVariogram {
    let pts = thin(points, MAX_VARIOGRAM_POINTS);
    let mut max_d = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            max_d = max_d.max(distance.between((a.0, a.1), (b.0, b.1)));
        }
    }
    let cutoff = 0.5 * max_d;
    let lags = lags.max(1);
    let mut sum_d = vec![0.0; lags];
    let mut sum_g = vec![0.0; lags];
    let mut counts = vec![0usize; lags];
    if cutoff > 0.0 {
        let width = cutoff / lags as f64;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                let d = distance.between((a.0, a.1), (b.0, b.1));
                if d <= 0.0 || d > cutoff {
                    continue;
                }
                let k = ((d / width) as usize).min(lags - 1);
                sum_d[k] += d;
                sum_g[k] += 0.5 * (a.2 - b.2).powi(2);
                counts[k] += 1;
            }
        }
    }
    let mut out = EmpiricalVariogram {
        max_distance: cutoff,
        ..Default::default()
    };
    for k in 0..lags {
        if counts[k] > 0 {
            out.lags.push(sum_d[k] / counts[k] as f64);
            out.gamma.push(sum_g[k] / counts[k] as f64);
            out.counts.push(counts[k]);
        }
    }
    out
}

fn thin(points: &[(f64, f64, f64)], max: usize) -> Vec<(f64, f64, f64)> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max).map(|i| points[i * points.len() / max]).collect()
}

/// Pair-count weighted least squares over a log grid of ranges, with the
/// partial sill solved in closed form at each range.
pub fn fit_variogram(emp: &EmpiricalVariogram, model: VariogramModel, nugget: f64, fallback_sill: f64) -> Variogram {
    let fallback = |range: f64| Variogram {
        model,
        nugget,
        sill: nugget + fallback_sill.max(f64::MIN_POSITIVE),
        range,
    };
    if emp.lags.is_empty() {
        return fallback(1.0);
    }
    let lo = emp.lags[0].min(emp.max_distance) / 10.0;
    let hi = emp.max_distance * 10.0;
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..RANGE_GRID {
        let range = lo * (hi / lo).powf(i as f64 / (RANGE_GRID - 1) as f64);
        let (mut num, mut den) = (0.0, 0.0);
        for ((h, g), n) in emp.lags.iter().zip(&emp.gamma).zip(&emp.counts) {
            let f = Variogram::shape(model, *h, range);
            num += *n as f64 * f * (g - nugget);
            den += *n as f64 * f * f;
        }
        let ps = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        let sse: f64 = emp
            .lags
            .iter()
            .zip(&emp.gamma)
            .zip(&emp.counts)
            .map(|((h, g), n)| *n as f64 * (g - nugget - ps * Variogram::shape(model, *h, range)).powi(2))
            .sum();
        if best.is_none_or(|(s, _, _)| sse < s) {
            best = Some((sse, range, ps));
        }
    }
    let (_, range, ps) = best.expect("non-empty grid");
    if ps > 0.0 {
        Variogram {
            model,
            nugget,
            sill: nugget + ps,
            range,
        }
    } else {
        fallback(range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrigingConfig {
    pub model: VariogramModel,
    pub nugget: f64,
    pub lags: usize,
    /// Nearest points entering each system; 0 uses all.
    pub neighbours: usize,
    pub distance: Distance,
    /// Use this variogram instead of fitting one.
    pub variogram: Option<Variogram>,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self {
            model: VariogramModel::Exponential,
            nugget: 0.0,
            lags: 15,
            neighbours: 32,
            distance: Distance::Degrees,
            variogram: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingPrediction {
    pub value: f64,
    pub variance: f64,
    pub weight_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingModel {
    pub config: KrigingConfig,
    pub variogram: Variogram,
    pub empirical: EmpiricalVariogram,
    /// `(lat, lon, value)`.
    pub points: Vec<(f64, f64, f64)>,
}

pub fn kriging_fit(points: &[(f64, f64, f64)], config: &KrigingConfig) -> Result<KrigingModel, BaselineError> {
    if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
        return Err(BaselineError::InvalidConfig("non-finite kriging input".into()));
    }
    let mut locs: Vec<(u64, u64)> = points.iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect();
    locs.sort_unstable();
    locs.dedup();
    if locs.len() < 3 {
        return Err(BaselineError::TooFewPoints {
            needed: 3,
            found: locs.len(),
        });
    }
    let empirical = empirical_variogram(points, config.lags, config.distance);
    let variogram = match config.variogram {
        Some(v) => Variogram::new(v.model, v.nugget, v.sill, v.range)?,
        None => {
            if config.nugget < 0.0 {
                return Err(BaselineError::InvalidConfig("negative nugget".into()));
            }
            let n = points.len() as f64;
            let mean = points.iter().map(|p| p.2).sum::<f64>() / n;
            let var = points.iter().map(|p| (p.2 - mean).powi(2)).sum::<f64>() / n;
            fit_variogram(&empirical, config.model, config.nugget, if var > 0.0 { var } else { 1.0 })
        }
    };
    Ok(KrigingModel {
        config: config.clone(),
        variogram,
        empirical,
        points: points.to_vec(),
    })
}

impl KrigingModel {
    fn neighbourhood(&self, q: (f64, f64)) -> Vec<(usize, f64)> {
        let dist = self.config.distance;
        let mut d: Vec<(usize, f64)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dist.between((p.0, p.1), q)))
            .collect();
        let k = self.config.neighbours;
        if k > 0 && k < d.len() {
            d.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            d.sort_unstable_by_key(|p| p.0);
        }
        d
    }

    /// Estimate and kriging variance at `(lat, lon)`.
    pub fn predict(&self, lat: f64, lon: f64) -> Result<KrigingPrediction, BaselineError> {
        let near = self.neighbourhood((lat, lon));
        let n = near.len();
        let dist = self.config.distance;
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        let mut b = DVector::<f64>::zeros(n + 1);
        for (i, &(pi, d0)) in near.iter().enumerate() {
            let p = self.points[pi];
            for (j, &(pj, _)) in near.iter().enumerate().skip(i) {
                let q = self.points[pj];
                let g = self.variogram.gamma(dist.between((p.0, p.1), (q.0, q.1)));
                a[(i, j)] = g;
                a[(j, i)] = g;
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
            b[i] = self.variogram.gamma(d0);
        }
        b[n] = 1.0;
        let solve = |m: DMatrix<f64>| {
            let x = m.clone().lu().solve(&b)?;
            let ok = x.iter().all(|v| v.is_finite() && v.abs() < 1e6) && (&m * &x - &b).amax() < 1e-8;
            ok.then_some(x)
        };
        let x = match solve(a.clone()) {
            Some(x) => x,
            None => {
                let mut j = a;
                for i in 0..n {
                    j[(i, i)] += JITTER;
                }
                solve(j).ok_or(BaselineError::SingularSystem { lat, lon })?
            }
        };
        let mut value = 0.0;
        let mut variance = x[n];
        let mut weight_sum = 0.0;
        for (i, &(pi, _)) in near.iter().enumerate() {
            value += x[i] * self.points[pi].2;
            variance += x[i] * b[i];
            weight_sum += x[i];
        }
        Ok(KrigingPrediction {
            value,
            variance,
            weight_sum,
        })
    }

    pub fn predict_many(&self, queries: &[(f64, f64)], exec: Exec) -> Result<Vec<KrigingPrediction>, BaselineError> {
        map_slice(exec, queries, |&(lat, lon)| self.predict(lat, lon)).into_iter().collect()
    }
}
