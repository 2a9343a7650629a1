use chrono::{DateTime, Duration, Utc};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{DrifterRecord, Result, TensorizeError, TrajectorySet, SALINITY};

/// Regular lat/lon/time binning. Cells are half-open on the max edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    /// Latitude cells.
    pub u: usize,
    /// Longitude cells.
    pub v: usize,
    pub time_origin: DateTime<Utc>,
    /// Seconds per time bin.
    pub time_step: i64,
    pub t_data: usize,
}

impl GridSpec {
    pub const DEFAULT_CELLS: usize = 32;

    pub fn validate(&self) -> Result<()> {
        if self.u == 0 || self.v == 0 || self.t_data == 0 {
            return Err(TensorizeError::DegenerateGrid(format!(
                "U={}, V={}, T={} must all be positive",
                self.u, self.v, self.t_data
            )));
        }
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return Err(TensorizeError::DegenerateGrid("empty lat/lon extent".into()));
        }
        if self.time_step <= 0 {
            return Err(TensorizeError::DegenerateGrid("time_step must be > 0".into()));
        }
        Ok(())
    }

    /// Grid covering every record of `set`, with `u×v` cells and the
    /// median sampling interval as time step (or `time_step` if given).
    /// The max edges are nudged outward so that no record falls on them.
    pub fn covering(set: &TrajectorySet, u: usize, v: usize, time_step: Option<i64>) -> Result<Self> {
        let first = set.records.first().ok_or(TensorizeError::EmptyInput { rejected: 0 })?;
        let (mut lat_min, mut lat_max, mut lon_min, mut lon_max) = (first.lat, first.lat, first.lon, first.lon);
        let (mut t0, mut t1) = (first.timestamp, first.timestamp);
        for r in &set.records {
            lat_min = lat_min.min(r.lat);
            lat_max = lat_max.max(r.lat);
            lon_min = lon_min.min(r.lon);
            lon_max = lon_max.max(r.lon);
            t0 = t0.min(r.timestamp);
            t1 = t1.max(r.timestamp);
        }
        let pad = |lo: f64, hi: f64| ((hi - lo) * 1e-6).max(1e-9);
        let lat_pad = pad(lat_min, lat_max);
        let lon_pad = pad(lon_min, lon_max);
        let time_step = time_step.or_else(|| set.median_sampling_interval()).unwrap_or(60).max(1);
        let t_data = ((t1 - t0).num_seconds() / time_step) as usize + 1;
        let grid = Self {
            lat_min,
            lat_max: lat_max + lat_pad,
            lon_min,
            lon_max: lon_max + lon_pad,
            u,
            v,
            time_origin: t0,
            time_step,
            t_data,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn dlat(&self) -> f64 {
        (self.lat_max - self.lat_min) / self.u as f64
    }

    pub fn dlon(&self) -> f64 {
        (self.lon_max - self.lon_min) / self.v as f64
    }

    /// Cell `(u, v)` containing a point, if inside the half-open extent.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        if !(lat >= self.lat_min && lat < self.lat_max && lon >= self.lon_min && lon < self.lon_max) {
            return None;
        }
        let u = (((lat - self.lat_min) / self.dlat()) as usize).min(self.u - 1);
        let v = (((lon - self.lon_min) / self.dlon()) as usize).min(self.v - 1);
        Some((u, v))
    }

    pub fn time_bin(&self, t: DateTime<Utc>) -> Option<usize> {
        let dt = (t - self.time_origin).num_seconds();
        if dt < 0 {
            return None;
        }
        let bin = (dt / self.time_step) as usize;
        (bin < self.t_data).then_some(bin)
    }

    pub fn cell_center(&self, u: usize, v: usize) -> (f64, f64) {
        (
            self.lat_min + (u as f64 + 0.5) * self.dlat(),
            self.lon_min + (v as f64 + 0.5) * self.dlon(),
        )
    }

    pub fn bin_start(&self, t: usize) -> DateTime<Utc> {
        self.time_origin + Duration::seconds(self.time_step * t as i64)
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.cell_of(lat, lon).is_some()
    }
}

/// Partially observed `(T, U, V, D)` array. Missing entries hold NaN and
/// have mask 0; observed entries are finite with mask 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTensor {
    pub grid: GridSpec,
    pub channel_names: Vec<String>,
    pub values: Array4<f64>,
    pub mask: Array4<u8>,
}

impl ObservationTensor {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }

    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn channel(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    /// One record per observed `(t, u, v)` at the cell centre and bin start,
    /// with each cell's series as its own trajectory `cell_<u>_<v>`.
    /// Entries without salinity are kept unlabelled.
    pub fn to_trajectories(&self) -> TrajectorySet {
        let (nt, nu, nv, nd) = self.shape();
        let sal = self.channel(SALINITY);
        let mut records = Vec::new();
        for u in 0..nu {
            for v in 0..nv {
                let (lat, lon) = self.grid.cell_center(u, v);
                for t in 0..nt {
                    if (0..nd).all(|d| self.mask[[t, u, v, d]] == 0) {
                        continue;
                    }
                    let observed = |d: usize| (self.mask[[t, u, v, d]] == 1).then(|| self.values[[t, u, v, d]]);
                    let covariates = (0..nd)
                        .filter(|&d| Some(d) != sal)
                        .filter_map(|d| observed(d).map(|x| (self.channel_names[d].clone(), x)))
                        .collect();
                    records.push(DrifterRecord {
                        trajectory_id: format!("cell_{u}_{v}"),
                        timestamp: self.grid.bin_start(t),
                        lat,
                        lon,
                        salinity: sal.and_then(observed),
                        covariates,
                    });
                }
            }
        }
        TrajectorySet::from_records(records)
    }

    /// Mask/value agreement: mask 1 exactly where the value is finite.
    pub fn is_consistent(&self) -> bool {
        self.values
            .iter()
            .zip(self.mask.iter())
            .all(|(x, &m)| (m == 1) == x.is_finite() && m <= 1)
    }
}

#[derive(Debug, Clone)]
pub struct RasterOutput {
    pub tensor: ObservationTensor,
    /// Observations aggregated into each entry.
    pub counts: Array4<u32>,
    /// Records outside the grid extent or time range.
    pub skipped: usize,
}

/// Aggregate records onto the grid by arithmetic mean per `(t, u, v, d)`.
pub fn rasterize(set: &TrajectorySet, grid: &GridSpec, channels: &[String]) -> Result<RasterOutput> {
    grid.validate()?;
    if channels.is_empty() {
        return Err(TensorizeError::DegenerateGrid("no channels requested".into()));
    }
    let shape = (grid.t_data, grid.u, grid.v, channels.len());
    let mut sums = Array4::<f64>::zeros(shape);
    let mut counts = Array4::<u32>::zeros(shape);
    let mut skipped = 0;
    for r in &set.records {
        let (Some((u, v)), Some(t)) = (grid.cell_of(r.lat, r.lon), grid.time_bin(r.timestamp)) else {
            skipped += 1;
            continue;
        };
        for (d, name) in channels.iter().enumerate() {
            if let Some(x) = r.channel(name) {
                sums[[t, u, v, d]] += x;
                counts[[t, u, v, d]] += 1;
            }
        }
    }
    let mut values = Array4::<f64>::from_elem(shape, f64::NAN);
    let mut mask = Array4::<u8>::zeros(shape);
    ndarray::Zip::from(&mut values)
        .and(&mut mask)
        .and(&sums)
        .and(&counts)
        .for_each(|x, m, &s, &c| {
            if c > 0 {
                *x = s / c as f64;
                *m = 1;
            }
        });
    Ok(RasterOutput {
        tensor: ObservationTensor {
            grid: grid.clone(),
            channel_names: channels.to_vec(),
            values,
            mask,
        },
        counts,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn origin() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2016, 6, 16, 0, 0, 0).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec {
            lat_min: 27.0,
            lat_max: 28.0,
            lon_min: -81.0,
            lon_max: -80.0,
            u: 4,
            v: 4,
            time_origin: origin(),
            time_step: 600,
            t_data: 6,
        }
    }

    fn rec(lat: f64, lon: f64, secs: i64, sal: f64) -> DrifterRecord {
        DrifterRecord {
            trajectory_id: "d".into(),
            timestamp: origin() + Duration::seconds(secs),
            lat,
            lon,
            salinity: Some(sal),
            covariates: Default::default(),
        }
    }

    fn sal() -> Vec<String> {
        vec![SALINITY.to_string()]
    }

    #[test]
    fn single_record_at_cell_center() {
        let g = grid();
        let (lat, lon) = g.cell_center(0, 0);
        let set = TrajectorySet::from_records(vec![rec(lat, lon, 0, 35.0)]);
        let out = rasterize(&set, &g, &sal()).unwrap();
        assert_eq!(out.tensor.values[[0, 0, 0, 0]], 35.0);
        assert_eq!(out.tensor.mask.iter().map(|&m| m as usize).sum::<usize>(), 1);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn tensor_back_to_records() {
        let g = grid();
        let (lat, lon) = g.cell_center(0, 0);
        let mut r = rec(lat, lon, 0, 35.0);
        r.covariates.insert("tide".into(), 0.4);
        let set = TrajectorySet::from_records(vec![r, rec(27.6, -80.6, 60, 31.0)]);
        let chans = vec![SALINITY.to_string(), "tide".to_string()];
        let back = rasterize(&set, &g, &chans).unwrap().tensor.to_trajectories();
        assert_eq!(back.len(), 2);
        let first = &back.records[0];
        assert_eq!((first.trajectory_id.as_str(), first.lat, first.lon), ("cell_0_0", lat, lon));
        assert_eq!((first.salinity, first.covariates.get("tide")), (Some(35.0), Some(&0.4)));
        assert_eq!(first.timestamp, g.bin_start(0));
        assert!(back.records[1].covariates.is_empty());
    }

    #[test]
    fn same_cell_means() {
        let set = TrajectorySet::from_records(vec![rec(27.1, -80.9, 0, 30.0), rec(27.12, -80.92, 60, 40.0)]);
        let out = rasterize(&set, &grid(), &sal()).unwrap();
        assert_eq!(out.tensor.values[[0, 0, 0, 0]], 35.0);
        assert_eq!(out.counts[[0, 0, 0, 0]], 2);
    }

    #[test]
    fn max_edges_are_exclusive() {
        let set = TrajectorySet::from_records(vec![
            rec(28.0, -80.5, 0, 35.0),
            rec(27.5, -80.0, 60, 35.0),
            rec(27.5, -80.5, 3600, 35.0),
        ]);
        let out = rasterize(&set, &grid(), &sal()).unwrap();
        assert_eq!(out.skipped, 3);
        assert_eq!(out.tensor.observed(), 0);
    }

    #[test]
    fn degenerate_grid() {
        let mut g = grid();
        g.v = 0;
        let set = TrajectorySet::from_records(vec![rec(27.5, -80.5, 0, 35.0)]);
        assert!(matches!(rasterize(&set, &g, &sal()), Err(TensorizeError::DegenerateGrid(_))));
    }

    #[test]
    fn covering_grid_keeps_every_record() {
        let set = TrajectorySet::from_records(vec![rec(27.2, -80.7, 0, 31.0), rec(27.9, -80.1, 1200, 33.0)]);
        let g = GridSpec::covering(&set, 8, 8, Some(600)).unwrap();
        assert_eq!(g.t_data, 3);
        let out = rasterize(&set, &g, &sal()).unwrap();
        assert_eq!(out.skipped, 0);
        assert_eq!(out.tensor.observed(), 2);
    }

    proptest! {
        #[test]
        fn mask_consistency_and_conservation(
            pts in proptest::collection::vec((27.0f64..28.2, -81.0f64..-79.9, 0i64..4000, 5.0f64..40.0), 1..80)
        ) {
            let g = grid();
            let records: Vec<_> = pts.iter().enumerate()
                .map(|(i, &(la, lo, t, s))| DrifterRecord { trajectory_id: format!("k{}", i % 3), ..rec(la, lo, t, s) })
                .collect();
            let set = TrajectorySet::from_records(records);
            let out = rasterize(&set, &g, &sal()).unwrap();
            prop_assert!(out.tensor.is_consistent());
            let populated = out.counts.iter().filter(|&&c| c > 0).count();
            prop_assert_eq!(out.tensor.observed(), populated);

            let inside: f64 = set.records.iter()
                .filter(|r| g.cell_of(r.lat, r.lon).is_some() && g.time_bin(r.timestamp).is_some())
                .map(|r| r.salinity.unwrap())
                .sum();
            let recovered: f64 = out.tensor.values.iter().zip(out.counts.iter())
                .filter(|(_, &c)| c > 0)
                .map(|(x, &c)| x * c as f64)
                .sum();
            prop_assert!((inside - recovered).abs() <= 1e-9 * inside.abs().max(1.0));
            prop_assert_eq!(out.skipped + out.counts.iter().map(|&c| c as usize).sum::<usize>(), set.len());
        }
    }
}
