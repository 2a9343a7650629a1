//! Tidal covariate: fit a single sinusoid `h(t) = A·sin(ω·Δt + φ) + c` to
//! sparse high/low tide events and evaluate it at arbitrary timestamps.
//! `Δt` is measured in hours from the start of the model's fit window.

mod noaa;

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use chrono::{DateTime, Datelike, Utc};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use noaa::{
    fetch_noaa_predictions, parse_predictions, FixtureClient, NoaaClient, PredictionRequest, DEFAULT_STATION,
    NOAA_DATA_ENDPOINT,
};
#[cfg(feature = "live-noaa")]
pub use noaa::HttpClient;

/// Principal lunar semidiurnal constituent (M2), hours.
pub const SEMIDIURNAL_PERIOD_HOURS: f64 = 12.4206;

#[derive(Debug, Error)]
pub enum TideError {
    #[error("network error fetching station {station} for {range}: {message}")]
    NetworkError {
        station: String,
        range: String,
        message: String,
    },
    #[error("could not parse tide response: {0}")]
    ParseError(String),
    #[error("tide response contained no events")]
    EmptyResponse,
    #[error("need at least {needed} events to fit, got {found}")]
    TooFewEvents { needed: usize, found: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("no fitted tide model covers the request")]
    UnfittedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TideEvent {
    pub timestamp: DateTime<Utc>,
    /// Metres above the served datum.
    pub height: f64,
    /// `H`/`L`/`HH`/`LL` as served, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TideModel {
    pub amplitude: f64,
    /// Radians per hour.
    pub omega: f64,
    /// Radians in `[−π, π)`.
    pub phase: f64,
    pub offset: f64,
    pub fit_window: (DateTime<Utc>, DateTime<Utc>),
    pub rmse_fit: f64,
}

/// A tide height plus whether it was extrapolated beyond the fit window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TidePrediction {
    pub height: f64,
    pub extrapolated: bool,
}

fn wrap_phase(phi: f64) -> f64 {
    let wrapped = (phi + PI).rem_euclid(TAU) - PI;
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

impl TideModel {
    pub fn new(amplitude: f64, omega: f64, phase: f64, offset: f64, fit_window: (DateTime<Utc>, DateTime<Utc>)) -> Self {
        Self {
            amplitude,
            omega,
            phase: wrap_phase(phase),
            offset,
            fit_window,
            rmse_fit: 0.0,
        }
    }

    pub fn hours_from_start(&self, t: DateTime<Utc>) -> f64 {
        (t - self.fit_window.0).num_milliseconds() as f64 / 3.6e6
    }

    pub fn height(&self, t: DateTime<Utc>) -> f64 {
        self.height_at_hours(self.hours_from_start(t))
    }

    pub fn height_at_hours(&self, dt: f64) -> f64 {
        self.amplitude * (self.omega * dt + self.phase).sin() + self.offset
    }

    pub fn predict(&self, t: DateTime<Utc>) -> TidePrediction {
        TidePrediction {
            height: self.height(t),
            extrapolated: t < self.fit_window.0 || t > self.fit_window.1,
        }
    }

    pub fn period_hours(&self) -> f64 {
        TAU / self.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Daily,
    Monthly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaMode {
    /// Fixed angular frequency, rad/hour.
    Fixed(f64),
    /// Grid search over periods in `[6 h, 26 h]`, refined locally.
    Free,
}

impl Default for OmegaMode {
    fn default() -> Self {
        OmegaMode::Fixed(TAU / SEMIDIURNAL_PERIOD_HOURS)
    }
}

struct LinearFit {
    amplitude: f64,
    phase: f64,
    offset: f64,
    rss: f64,
}

/// Closed-form least squares for `a·sin ωt + b·cos ωt + c`.
fn fit_fixed_omega(hours: &[f64], heights: &[f64], omega: f64) -> Result<LinearFit, TideError> {
    let n = hours.len();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => (omega * hours[i]).sin(),
        1 => (omega * hours[i]).cos(),
        _ => 1.0,
    });
    let y = DVector::from_column_slice(heights);
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min / max < 1e-10 {
        return Err(TideError::DegenerateFit(format!(
            "design matrix is rank deficient (condition {:.3e})",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    let coef = svd
        .solve(&y, 1e-12 * max)
        .map_err(|e| TideError::DegenerateFit(e.to_string()))?;
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    let resid = &y - &design * &coef;
    Ok(LinearFit {
        amplitude: (a * a + b * b).sqrt(),
        phase: wrap_phase(b.atan2(a)),
        offset: c,
        rss: resid.norm_squared(),
    })
}

/// Least-squares sinusoid over `events`. The fit window spans the first
/// to the last event.
pub fn fit_sinusoid(events: &[TideEvent], omega_mode: OmegaMode) -> Result<TideModel, TideError> {
    let needed = match omega_mode {
        OmegaMode::Fixed(_) => 3,
        OmegaMode::Free => 4,
    };
    if events.len() < needed {
        return Err(TideError::TooFewEvents {
            needed,
            found: events.len(),
        });
    }
    if events.iter().any(|e| !e.height.is_finite()) {
        return Err(TideError::ParseError("non-finite tide height".into()));
    }
    let start = events.iter().map(|e| e.timestamp).min().unwrap();
    let end = events.iter().map(|e| e.timestamp).max().unwrap();
    let hours: Vec<f64> = events
        .iter()
        .map(|e| (e.timestamp - start).num_milliseconds() as f64 / 3.6e6)
        .collect();
    let heights: Vec<f64> = events.iter().map(|e| e.height).collect();

    let (omega, fit) = match omega_mode {
        OmegaMode::Fixed(omega) => {
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(TideError::DegenerateFit(format!("omega must be positive, got {omega}")));
            }
            (omega, fit_fixed_omega(&hours, &heights, omega)?)
        }
        OmegaMode::Free => search_omega(&hours, &heights)?,
    };
    Ok(TideModel {
        amplitude: fit.amplitude,
        omega,
        phase: fit.phase,
        offset: fit.offset,
        fit_window: (start, end),
        rmse_fit: (fit.rss / events.len() as f64).sqrt(),
    })
}

fn search_omega(hours: &[f64], heights: &[f64]) -> Result<(f64, LinearFit), TideError> {
    const MIN_PERIOD: f64 = 6.0;
    const MAX_PERIOD: f64 = 26.0;
    const GRID: usize = 2001;
    let step = (MAX_PERIOD - MIN_PERIOD) / (GRID - 1) as f64;
    let rss_at = |period: f64| fit_fixed_omega(hours, heights, TAU / period).map(|f| f.rss).unwrap_or(f64::INFINITY);

    let mut best = (f64::INFINITY, MIN_PERIOD);
    for i in 0..GRID {
        let p = MIN_PERIOD + step * i as f64;
        let r = rss_at(p);
        if r < best.0 {
            best = (r, p);
        }
    }
    if !best.0.is_finite() {
        return Err(TideError::DegenerateFit("no admissible frequency".into()));
    }
    // golden-section refinement inside the winning grid cell
    let (mut lo, mut hi) = ((best.1 - step).max(MIN_PERIOD), (best.1 + step).min(MAX_PERIOD));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if rss_at(a) < rss_at(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mut period = 0.5 * (lo + hi);
    if rss_at(period) > best.0 {
        period = best.1;
    }
    let omega = TAU / period;
    Ok((omega, fit_fixed_omega(hours, heights, omega)?))
}

/// One fitted model per calendar day or month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TideSeries {
    pub mode: FitMode,
    pub models: Vec<TideModel>,
}

fn calendar_key(mode: FitMode, t: DateTime<Utc>) -> (i32, u32, u32) {
    match mode {
        FitMode::Daily => (t.year(), t.month(), t.day()),
        FitMode::Monthly => (t.year(), t.month(), 0),
    }
}

/// Fit a separate sinusoid for each calendar day (or month) in `events`.
pub fn fit_by_calendar(events: &[TideEvent], mode: FitMode, omega_mode: OmegaMode) -> Result<TideSeries, TideError> {
    if events.is_empty() {
        return Err(TideError::EmptyResponse);
    }
    let mut groups: BTreeMap<(i32, u32, u32), Vec<TideEvent>> = BTreeMap::new();
    for e in events {
        groups.entry(calendar_key(mode, e.timestamp)).or_default().push(e.clone());
    }
    let models = groups
        .into_values()
        .map(|g| fit_sinusoid(&g, omega_mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TideSeries { mode, models })
}

impl TideSeries {
    /// Height from the model of `t`'s calendar window, or from the nearest
    /// window (flagged as extrapolated) when none matches.
    pub fn predict(&self, t: DateTime<Utc>) -> Result<TidePrediction, TideError> {
        let key = calendar_key(self.mode, t);
        if let Some(m) = self.models.iter().find(|m| calendar_key(self.mode, m.fit_window.0) == key) {
            return Ok(m.predict(t));
        }
        let nearest = self
            .models
            .iter()
            .min_by_key(|m| {
                let d0 = (t - m.fit_window.0).num_seconds().abs();
                let d1 = (t - m.fit_window.1).num_seconds().abs();
                d0.min(d1)
            })
            .ok_or(TideError::UnfittedModel)?;
        Ok(TidePrediction {
            height: nearest.height(t),
            extrapolated: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2016, 6, 16, 0, 0, 0).unwrap()
    }

    fn at_hours(h: f64) -> DateTime<Utc> {
        t0() + Duration::milliseconds((h * 3.6e6).round() as i64)
    }

    fn events_from(model: &TideModel, hours: &[f64]) -> Vec<TideEvent> {
        hours
            .iter()
            .map(|&h| TideEvent {
                timestamp: at_hours(h),
                height: model.height_at_hours(h),
                kind: None,
            })
            .collect()
    }

    fn m2() -> f64 {
        TAU / SEMIDIURNAL_PERIOD_HOURS
    }

    #[test]
    fn exact_recovery_from_four_events() {
        let truth = TideModel::new(1.0, m2(), 0.5, 2.0, (t0(), t0()));
        let events = events_from(&truth, &[0.0, 3.1, 7.7, 10.4]);
        let fit = fit_sinusoid(&events, OmegaMode::default()).unwrap();
        assert!((fit.amplitude - 1.0).abs() < 1e-6);
        assert!((fit.phase - 0.5).abs() < 1e-6);
        assert!((fit.offset - 2.0).abs() < 1e-6);
        assert!(fit.rmse_fit < 1e-9);
        for e in &events {
            assert!((fit.height(e.timestamp) - e.height).abs() < 1e-6);
        }
    }

    #[test]
    fn free_omega_recovers_period() {
        let truth = TideModel::new(0.8, TAU / 11.0, -1.0, 0.3, (t0(), t0()));
        let hours: Vec<f64> = (0..12).map(|k| k as f64 * 2.3).collect();
        let fit = fit_sinusoid(&events_from(&truth, &hours), OmegaMode::Free).unwrap();
        assert!((fit.period_hours() - 11.0).abs() < 1e-4, "period {}", fit.period_hours());
        assert!((fit.amplitude - 0.8).abs() < 1e-4);
    }

    #[test]
    fn constant_events_fit_zero_amplitude() {
        let events: Vec<_> = [0.0, 2.0, 5.0, 9.0]
            .iter()
            .map(|&h| TideEvent { timestamp: at_hours(h), height: 2.0, kind: None })
            .collect();
        let fit = fit_sinusoid(&events, OmegaMode::default()).unwrap();
        assert!(fit.amplitude <= 1e-9);
        assert!((fit.offset - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_and_degenerate() {
        let two: Vec<_> = [0.0, 5.0]
            .iter()
            .map(|&h| TideEvent { timestamp: at_hours(h), height: 1.0, kind: None })
            .collect();
        assert!(matches!(
            fit_sinusoid(&two, OmegaMode::default()),
            Err(TideError::TooFewEvents { needed: 3, found: 2 })
        ));
        let mut three = two.clone();
        three.push(two[0].clone());
        assert!(matches!(
            fit_sinusoid(&three, OmegaMode::Free),
            Err(TideError::TooFewEvents { needed: 4, .. })
        ));
        let same: Vec<_> = (0..4)
            .map(|k| TideEvent { timestamp: t0(), height: k as f64, kind: None })
            .collect();
        assert!(matches!(fit_sinusoid(&same, OmegaMode::default()), Err(TideError::DegenerateFit(_))));
    }

    #[test]
    fn prediction_basics() {
        let flat = TideModel::new(0.0, m2(), 0.0, 1.5, (t0(), at_hours(24.0)));
        assert_eq!(flat.height(at_hours(17.3)), 1.5);
        let m = TideModel::new(0.7, m2(), 0.0, 1.25, (t0(), at_hours(24.0)));
        assert_eq!(m.height(t0()), 1.25);
        assert!(!m.predict(at_hours(5.0)).extrapolated);
        assert!(m.predict(at_hours(30.0)).extrapolated);
        assert!(m.predict(at_hours(-1.0)).extrapolated);
    }

    #[test]
    fn fixed_fit_beats_perturbations() {
        let truth = TideModel::new(0.6, m2(), 1.2, 0.4, (t0(), t0()));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let events: Vec<_> = (0..10)
            .map(|k| {
                let h = k as f64 * 2.7 + rng.random_range(0.0..1.0);
                TideEvent {
                    timestamp: at_hours(h),
                    height: truth.height_at_hours(h) + rng.random_range(-0.05..0.05),
                    kind: None,
                }
            })
            .collect();
        let fit = fit_sinusoid(&events, OmegaMode::default()).unwrap();
        let rss = |a: f64, phi: f64, c: f64| {
            events
                .iter()
                .map(|e| {
                    let dt = fit.hours_from_start(e.timestamp);
                    (a * (fit.omega * dt + phi).sin() + c - e.height).powi(2)
                })
                .sum::<f64>()
        };
        let best = rss(fit.amplitude, fit.phase, fit.offset);
        for _ in 0..100 {
            let p = |rng: &mut ChaCha8Rng| rng.random_range(-1e-2..1e-2);
            let other = rss(fit.amplitude + p(&mut rng), fit.phase + p(&mut rng), fit.offset + p(&mut rng));
            assert!(best <= other);
        }
    }

    #[test]
    fn daily_series_selects_window() {
        let a = TideModel::new(1.0, m2(), 0.0, 1.0, (t0(), t0()));
        let b = TideModel::new(0.5, m2(), 0.0, -1.0, (t0(), t0()));
        let mut events = events_from(&a, &[1.0, 5.0, 9.0, 14.0, 20.0]);
        events.extend(events_from(&b, &[25.0, 30.0, 36.0, 41.0]).into_iter().map(|mut e| {
            // shift b's shape into day two
            e.height = b.height_at_hours(e.timestamp.signed_duration_since(at_hours(25.0)).num_seconds() as f64 / 3600.0);
            e
        }));
        let series = fit_by_calendar(&events, FitMode::Daily, OmegaMode::default()).unwrap();
        assert_eq!(series.models.len(), 2);
        let day2 = series.predict(at_hours(30.0)).unwrap();
        assert!(!day2.extrapolated);
        assert!(day2.height < 0.0);
        let far = series.predict(at_hours(24.0 * 5.0)).unwrap();
        assert!(far.extrapolated);
        let monthly = fit_by_calendar(&events, FitMode::Monthly, OmegaMode::default()).unwrap();
        assert_eq!(monthly.models.len(), 1);
    }

    proptest! {
        #[test]
        fn bounded_and_periodic(a in 0.0f64..3.0, phi in -3.0f64..3.0, c in -2.0f64..2.0, h in -100.0f64..100.0) {
            let m = TideModel::new(a, m2(), phi, c, (t0(), t0()));
            let y = m.height_at_hours(h);
            prop_assert!((y - c).abs() <= a + 1e-9);
            let period = TAU / m.omega;
            prop_assert!((m.height_at_hours(h + period) - y).abs() <= 1e-9);
            prop_assert!(m.phase >= -PI && m.phase < PI);
        }
    }
}
