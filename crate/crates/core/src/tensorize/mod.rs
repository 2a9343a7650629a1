//! Drifter ingestion and gridding.
//!
//! Raw drifter rows are parsed into a [`TrajectorySet`], binned onto a
//! regular `U×V` grid with fixed time steps to give a partially observed
//! `(T, U, V, D)` [`ObservationTensor`], and split by trajectory for
//! training/validation/testing.

mod grid;
mod io;
mod split;
mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use chrono::{DateTime, NaiveDateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{rasterize, GridSpec, ObservationTensor, RasterOutput};
pub use io::{export_csv, import_csv, read_tensor, write_tensor, TENSOR_FORMAT_VERSION, TENSOR_MAGIC};
pub use split::{split_trajectories, SplitAssignment, SplitRatios};
pub use synthetic::{generate_synthetic, FieldParams, SyntheticConfig, SyntheticField};

pub const SALINITY: &str = "salinity";
pub const TIDE: &str = "tide";

#[derive(Debug, Error)]
pub enum TensorizeError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("no valid rows in input ({rejected} rejected)")]
    EmptyInput { rejected: usize },
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error("need at least 3 trajectories to split, got {0}")]
    TooFewTrajectories(usize),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("corrupt tensor file: {0}")]
    CorruptTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorizeError>;

/// One drifter observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrifterRecord {
    pub trajectory_id: String,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub salinity: Option<f64>,
    pub covariates: BTreeMap<String, f64>,
}

impl DrifterRecord {
    /// Value of a named channel: `salinity` or a covariate.
    pub fn channel(&self, name: &str) -> Option<f64> {
        if name == SALINITY {
            self.salinity
        } else {
            self.covariates.get(name).copied()
        }
    }
}

/// Records grouped by trajectory, sorted by (trajectory, timestamp).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub records: Vec<DrifterRecord>,
    /// Unique ids in order of first appearance.
    pub trajectory_ids: Vec<String>,
}

impl TrajectorySet {
    /// Build from unsorted records, sorting and collapsing duplicate
    /// `(trajectory_id, timestamp)` pairs by their mean.
    pub fn from_records(records: Vec<DrifterRecord>) -> Self {
        let mut ids: Vec<String> = Vec::new();
        let mut order: HashMap<String, usize> = HashMap::new();
        for r in &records {
            if !order.contains_key(&r.trajectory_id) {
                order.insert(r.trajectory_id.clone(), ids.len());
                ids.push(r.trajectory_id.clone());
            }
        }
        let mut groups: BTreeMap<(usize, DateTime<Utc>), Vec<DrifterRecord>> = BTreeMap::new();
        for r in records {
            groups.entry((order[&r.trajectory_id], r.timestamp)).or_default().push(r);
        }
        let records = groups.into_values().map(collapse_duplicates).collect();
        Self {
            records,
            trajectory_ids: ids,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one trajectory, in time order.
    pub fn trajectory<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a DrifterRecord> + 'a {
        self.records.iter().filter(move |r| r.trajectory_id == id)
    }

    /// Subset containing only the given trajectories (keeps this set's order).
    pub fn subset(&self, ids: &[String]) -> TrajectorySet {
        let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        TrajectorySet {
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(r.trajectory_id.as_str()))
                .cloned()
                .collect(),
            trajectory_ids: self
                .trajectory_ids
                .iter()
                .filter(|id| keep.contains(id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Covariate names present on any record, sorted.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .records
            .iter()
            .flat_map(|r| r.covariates.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Median spacing between consecutive samples of the same trajectory.
    pub fn median_sampling_interval(&self) -> Option<i64> {
        let mut gaps: Vec<i64> = self
            .records
            .windows(2)
            .filter(|w| w[0].trajectory_id == w[1].trajectory_id)
            .map(|w| (w[1].timestamp - w[0].timestamp).num_seconds())
            .filter(|&g| g > 0)
            .collect();
        if gaps.is_empty() {
            return None;
        }
        gaps.sort_unstable();
        Some(gaps[gaps.len() / 2])
    }
}

fn collapse_duplicates(mut group: Vec<DrifterRecord>) -> DrifterRecord {
    if group.len() == 1 {
        return group.pop().unwrap();
    }
    let n = group.len() as f64;
    let mean_of = |vals: Vec<f64>| {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let salinity = mean_of(group.iter().filter_map(|r| r.salinity).collect());
    let mut cov_names: Vec<String> = group.iter().flat_map(|r| r.covariates.keys().cloned()).collect();
    cov_names.sort();
    cov_names.dedup();
    let covariates = cov_names
        .into_iter()
        .filter_map(|name| {
            let vals: Vec<f64> = group.iter().filter_map(|r| r.covariates.get(&name).copied()).collect();
            mean_of(vals).map(|v| (name, v))
        })
        .collect();
    DrifterRecord {
        trajectory_id: group[0].trajectory_id.clone(),
        timestamp: group[0].timestamp,
        lat: group.iter().map(|r| r.lat).sum::<f64>() / n,
        lon: group.iter().map(|r| r.lon).sum::<f64>() / n,
        salinity,
        covariates,
    }
}

/// Which header names map onto record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub trajectory_id: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub salinity: String,
    /// Explicit covariate columns; `None` takes every unmapped column.
    pub covariates: Option<Vec<String>>,
    pub delimiter: char,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            trajectory_id: "trajectory_id".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            salinity: SALINITY.into(),
            covariates: None,
            delimiter: ',',
        }
    }
}

/// Why a row was dropped during parsing. `row` is 1-based over data rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowRejection {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub set: TrajectorySet,
    pub rejected: Vec<RowRejection>,
}

/// Parse an ISO-8601 timestamp as UTC, truncated to whole seconds.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc).trunc_subsecs(0));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc().trunc_subsecs(0));
        }
    }
    None
}

/// Second-resolution ISO-8601 rendering used by every writer.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parse delimited drifter rows into a trajectory set.
///
/// Rows with unparseable timestamps, out-of-range coordinates or negative /
/// non-finite salinity are rejected and reported; they never abort the parse.
pub fn parse_trajectories<R: Read>(source: R, schema: &ColumnSchema) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| TensorizeError::MalformedInput(format!("unreadable header: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = [
        (&schema.trajectory_id, "trajectory id"),
        (&schema.timestamp, "timestamp"),
        (&schema.lat, "lat"),
        (&schema.lon, "lon"),
        (&schema.salinity, "salinity"),
    ];
    let mut idx = Vec::with_capacity(5);
    for (col, what) in required {
        match find(col) {
            Some(i) => idx.push(i),
            None => {
                return Err(TensorizeError::MalformedInput(format!(
                    "missing {what} column `{col}` in header [{}]",
                    headers.iter().collect::<Vec<_>>().join(", ")
                )))
            }
        }
    }
    let (id_col, ts_col, lat_col, lon_col, sal_col) = (idx[0], idx[1], idx[2], idx[3], idx[4]);
    let covariate_cols: Vec<(String, usize)> = match &schema.covariates {
        Some(names) => names
            .iter()
            .map(|n| {
                find(n)
                    .map(|i| (n.clone(), i))
                    .ok_or_else(|| TensorizeError::MalformedInput(format!("missing covariate column `{n}`")))
            })
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !idx.contains(i))
            .map(|(i, h)| (h.to_string(), i))
            .collect(),
    };

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row_no = n + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowRejection { row: row_no, reason: format!("unreadable row: {e}") });
                continue;
            }
        };
        match parse_row(&row, id_col, ts_col, lat_col, lon_col, sal_col, &covariate_cols) {
            Ok(rec) => records.push(rec),
            Err(reason) => rejected.push(RowRejection { row: row_no, reason }),
        }
    }
    if records.is_empty() {
        return Err(TensorizeError::EmptyInput { rejected: rejected.len() });
    }
    Ok(ParseOutcome {
        set: TrajectorySet::from_records(records),
        rejected,
    })
}

fn parse_row(
    row: &csv::StringRecord,
    id_col: usize,
    ts_col: usize,
    lat_col: usize,
    lon_col: usize,
    sal_col: usize,
    covariates: &[(String, usize)],
) -> std::result::Result<DrifterRecord, String> {
    let field = |i: usize| row.get(i).unwrap_or("");
    let id = field(id_col);
    if id.is_empty() {
        return Err("empty trajectory id".into());
    }
    let timestamp = parse_timestamp(field(ts_col)).ok_or_else(|| format!("bad timestamp `{}`", field(ts_col)))?;
    let number = |name: &str, s: &str| -> std::result::Result<f64, String> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad {name} `{s}`"))
    };
    let lat = number("lat", field(lat_col))?;
    let lon = number("lon", field(lon_col))?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("lat {lat} outside [-90, 90]"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("lon {lon} outside [-180, 180]"));
    }
    let salinity = match field(sal_col) {
        "" => None,
        s => {
            let v = number("salinity", s)?;
            if v < 0.0 {
                return Err(format!("negative salinity {v}"));
            }
            Some(v)
        }
    };
    let mut cov = BTreeMap::new();
    for (name, i) in covariates {
        match field(*i) {
            "" => {}
            s => {
                cov.insert(name.clone(), number(name, s)?);
            }
        }
    }
    Ok(DrifterRecord {
        trajectory_id: id.to_string(),
        timestamp,
        lat,
        lon,
        salinity,
        covariates: cov,
    })
}

/// Write records as delimited text readable by [`parse_trajectories`]
/// with the default schema.
pub fn write_trajectories<W: std::io::Write>(set: &TrajectorySet, out: W) -> Result<()> {
    let covs = set.covariate_names();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trajectory_id", "timestamp", "lat", "lon", SALINITY];
    header.extend(covs.iter().map(String::as_str));
    w.write_record(&header).map_err(csv_err)?;
    for r in &set.records {
        let mut row = vec![
            r.trajectory_id.clone(),
            format_timestamp(&r.timestamp),
            r.lat.to_string(),
            r.lon.to_string(),
            r.salinity.map(|s| s.to_string()).unwrap_or_default(),
        ];
        row.extend(covs.iter().map(|c| r.covariates.get(c).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> TensorizeError {
    TensorizeError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "trajectory_id,timestamp,lat,lon,salinity\n";

    fn parse(body: &str) -> Result<ParseOutcome> {
        parse_trajectories(format!("{HEADER}{body}").as_bytes(), &ColumnSchema::default())
    }

    #[test]
    fn single_row() {
        let out = parse("d1,2016-06-16T00:00:00Z,27.46,-80.30,35.0\n").unwrap();
        assert_eq!(out.set.len(), 1);
        assert_eq!(out.set.trajectory_ids, vec!["d1"]);
        assert_eq!(out.set.records[0].salinity, Some(35.0));
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn duplicates_collapse_to_mean() {
        let out = parse(
            "d1,2016-06-16T00:00:00Z,27.46,-80.30,34.0\n\
             d1,2016-06-16T00:00:00Z,27.46,-80.30,36.0\n",
        )
        .unwrap();
        assert_eq!(out.set.len(), 1);
        assert_eq!(out.set.records[0].salinity, Some(35.0));
    }

    #[test]
    fn out_of_range_lat_rejected_with_row_index() {
        let out = parse(
            "d1,2016-06-16T00:00:00Z,27.46,-80.30,35.0\n\
             d1,2016-06-16T00:10:00Z,95.0,-80.30,35.0\n",
        )
        .unwrap();
        assert_eq!(out.set.len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].row, 2);
        assert!(out.rejected[0].reason.contains("lat"));
    }

    #[test]
    fn bad_timestamp_and_empty_input() {
        let err = parse("d1,yesterday,27.46,-80.30,35.0\n").unwrap_err();
        assert!(matches!(err, TensorizeError::EmptyInput { rejected: 1 }));
    }

    #[test]
    fn missing_column_is_malformed() {
        let err = parse_trajectories("id,when,lat\n".as_bytes(), &ColumnSchema::default()).unwrap_err();
        assert!(matches!(err, TensorizeError::MalformedInput(_)));
    }

    #[test]
    fn covariates_and_missing_salinity() {
        let csv = "trajectory_id,timestamp,lat,lon,salinity,tide\n\
                   b,2016-06-16 01:00:00,27.4,-80.3,,0.5\n\
                   a,2016-06-16T00:00:00+00:00,27.4,-80.3,30,\n";
        let out = parse_trajectories(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(out.set.trajectory_ids, vec!["b", "a"]);
        assert_eq!(out.set.records[0].salinity, None);
        assert_eq!(out.set.records[0].channel(TIDE), Some(0.5));
        assert_eq!(out.set.records[1].channel(TIDE), None);
        assert_eq!(out.set.covariate_names(), vec!["tide"]);
    }

    #[test]
    fn write_then_parse_round_trip() {
        let csv = "trajectory_id,timestamp,lat,lon,salinity,tide\n\
                   a,2016-06-16T00:00:00Z,27.41,-80.3,30.25,0.125\n\
                   a,2016-06-16T00:10:00Z,27.42,-80.29,,0.5\n";
        let set = parse_trajectories(csv.as_bytes(), &ColumnSchema::default()).unwrap().set;
        let mut buf = Vec::new();
        write_trajectories(&set, &mut buf).unwrap();
        let again = parse_trajectories(buf.as_slice(), &ColumnSchema::default()).unwrap().set;
        assert_eq!(set, again);
        assert_eq!(set.median_sampling_interval(), Some(600));
    }
}
