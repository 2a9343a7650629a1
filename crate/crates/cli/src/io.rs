use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use anyhow::{bail, Context, Result};
use oasis_core::tensorize::{
    import_csv, parse_timestamp, parse_trajectories, read_tensor, ColumnSchema, DrifterRecord, TrajectorySet, TENSOR_MAGIC,
};
use serde::de::DeserializeOwned;

pub fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// Trajectory CSV, or an observation tensor in either of its forms.
pub fn load_records(path: &Path, schema: &ColumnSchema) -> Result<TrajectorySet> {
    let mut head = [0u8; 8];
    let n = File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read(&mut head)?;
    let file = BufReader::new(File::open(path)?);
    if n == 8 && &head == TENSOR_MAGIC {
        return Ok(read_tensor(file)?.to_trajectories());
    }
    if head.starts_with(b"# {") {
        return Ok(import_csv(file)?.to_trajectories());
    }
    let out = parse_trajectories(file, schema).with_context(|| format!("parsing {}", path.display()))?;
    for r in out.rejected.iter().take(5) {
        eprintln!("skipped row {}: {}", r.row, r.reason);
    }
    if out.rejected.len() > 5 {
        eprintln!("... {} rows skipped in total", out.rejected.len());
    }
    Ok(out.set)
}

/// Query rows in file order: timestamp, lat, lon, optional trajectory id,
/// every other numeric column as a covariate.
pub fn load_queries(path: &Path) -> Result<Vec<DrifterRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |n: &str| headers.iter().position(|h| h == n);
    let (Some(ti), Some(lai), Some(loi)) = (find("timestamp"), find("lat"), find("lon")) else {
        bail!("query file needs timestamp, lat and lon columns");
    };
    let id = find("trajectory_id");
    let skip = [Some(ti), Some(lai), Some(loi), id, find("salinity")];
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .with_context(|| format!("query row {}: `{}` is not a number", n + 1, &row[i]))
        };
        let mut covariates = BTreeMap::new();
        for (i, h) in headers.iter().enumerate() {
            if !skip.contains(&Some(i)) && !row[i].is_empty() {
                covariates.insert(h.to_string(), num(i)?);
            }
        }
        out.push(DrifterRecord {
            trajectory_id: id.map_or("query".to_string(), |i| row[i].to_string()),
            timestamp: parse_timestamp(&row[ti]).with_context(|| format!("query row {}: bad timestamp", n + 1))?,
            lat: num(lai)?,
            lon: num(loi)?,
            salinity: None,
            covariates,
        });
    }
    if out.is_empty() {
        bail!("query file {} has no rows", path.display());
    }
    Ok(out)
}
