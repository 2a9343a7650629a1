//! Tensor persistence.
//!
//! Binary container layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "OASISTNS"
//! version   u32
//! hdr_len   u32
//! header    hdr_len bytes of JSON: {"grid": .., "channel_names": .., "shape": [T, U, V, D]}
//! values    T·U·V·D f64, row-major, NaN where missing
//! mask      T·U·V·D u8
//! ```
//!
//! The text export writes one `#`-prefixed header line carrying the same
//! JSON header, then `t,u,v,<channel…>` rows for every cell with at least
//! one observed channel; missing channels are empty fields.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{GridSpec, ObservationTensor, Result, TensorizeError};

pub const TENSOR_MAGIC: &[u8; 8] = b"OASISTNS";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    grid: GridSpec,
    channel_names: Vec<String>,
    shape: [usize; 4],
}

fn corrupt(msg: impl Into<String>) -> TensorizeError {
    TensorizeError::CorruptTensor(msg.into())
}

fn header_of(t: &ObservationTensor) -> Header {
    let (a, b, c, d) = t.shape();
    Header {
        grid: t.grid.clone(),
        channel_names: t.channel_names.clone(),
        shape: [a, b, c, d],
    }
}

pub fn write_tensor<W: Write>(tensor: &ObservationTensor, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&header_of(tensor)).map_err(|e| corrupt(e.to_string()))?;
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&TENSOR_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(tensor.values.len() * 9);
    for x in tensor.values.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf.extend(tensor.mask.iter().copied());
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<ObservationTensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != TENSOR_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != TENSOR_FORMAT_VERSION {
        return Err(corrupt(format!("unsupported version {version}, expected {TENSOR_FORMAT_VERSION}")));
    }
    let hdr_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hdr_len {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hdr_len]).map_err(|e| corrupt(e.to_string()))?;
    let [t, u, v, d] = header.shape;
    let n = t * u * v * d;
    let data = &body[hdr_len..];
    if data.len() != n * 9 {
        return Err(corrupt(format!("expected {} payload bytes, found {}", n * 9, data.len())));
    }
    let values: Vec<f64> = data[..n * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mask = data[n * 8..].to_vec();
    let tensor = ObservationTensor {
        grid: header.grid,
        channel_names: header.channel_names,
        values: Array4::from_shape_vec((t, u, v, d), values).map_err(|e| corrupt(e.to_string()))?,
        mask: Array4::from_shape_vec((t, u, v, d), mask).map_err(|e| corrupt(e.to_string()))?,
    };
    if !tensor.is_consistent() {
        return Err(corrupt("mask disagrees with values"));
    }
    Ok(tensor)
}

pub fn export_csv<W: Write>(tensor: &ObservationTensor, mut out: W) -> Result<()> {
    let header = serde_json::to_string(&header_of(tensor)).map_err(|e| corrupt(e.to_string()))?;
    writeln!(out, "# {header}")?;
    write!(out, "t,u,v")?;
    for c in &tensor.channel_names {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    let (nt, nu, nv, nd) = tensor.shape();
    for t in 0..nt {
        for u in 0..nu {
            for v in 0..nv {
                if (0..nd).all(|d| tensor.mask[[t, u, v, d]] == 0) {
                    continue;
                }
                write!(out, "{t},{u},{v}")?;
                for d in 0..nd {
                    if tensor.mask[[t, u, v, d]] == 1 {
                        write!(out, ",{}", tensor.values[[t, u, v, d]])?;
                    } else {
                        write!(out, ",")?;
                    }
                }
                writeln!(out)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn import_csv<R: Read>(input: R) -> Result<ObservationTensor> {
    let mut lines = BufReader::new(input).lines();
    let first = lines.next().ok_or_else(|| corrupt("empty file"))??;
    let json = first.strip_prefix("# ").ok_or_else(|| corrupt("missing header line"))?;
    let header: Header = serde_json::from_str(json).map_err(|e| corrupt(e.to_string()))?;
    let [nt, nu, nv, nd] = header.shape;
    let mut values = Array4::from_elem((nt, nu, nv, nd), f64::NAN);
    let mut mask = Array4::<u8>::zeros((nt, nu, nv, nd));
    lines.next().ok_or_else(|| corrupt("missing column header"))??;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + nd {
            return Err(corrupt(format!("row {}: expected {} fields", i + 1, 3 + nd)));
        }
        let idx = |k: usize, bound: usize| -> Result<usize> {
            fields[k]
                .parse::<usize>()
                .ok()
                .filter(|&x| x < bound)
                .ok_or_else(|| corrupt(format!("row {}: bad index `{}`", i + 1, fields[k])))
        };
        let (t, u, v) = (idx(0, nt)?, idx(1, nu)?, idx(2, nv)?);
        for d in 0..nd {
            let f = fields[3 + d];
            if f.is_empty() {
                continue;
            }
            let x: f64 = f.parse().map_err(|_| corrupt(format!("row {}: bad value `{f}`", i + 1)))?;
            values[[t, u, v, d]] = x;
            mask[[t, u, v, d]] = 1;
        }
    }
    Ok(ObservationTensor {
        grid: header.grid,
        channel_names: header.channel_names,
        values,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{generate_synthetic, rasterize, SyntheticConfig, SALINITY, TIDE};
    use super::*;

    fn bits(t: &ObservationTensor) -> (Vec<u64>, Vec<u8>) {
        (t.values.iter().map(|x| x.to_bits()).collect(), t.mask.iter().copied().collect())
    }

    fn sample() -> ObservationTensor {
        let cfg = SyntheticConfig {
            n_trajectories: 3,
            steps_per_trajectory: 40,
            ..Default::default()
        };
        let (set, _) = generate_synthetic(&cfg).unwrap();
        let grid = GridSpec::covering(&set, 6, 5, None).unwrap();
        rasterize(&set, &grid, &[SALINITY.to_string(), TIDE.to_string()]).unwrap().tensor
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let tensor = sample();
        let mut buf = Vec::new();
        write_tensor(&tensor, &mut buf).unwrap();
        let back = read_tensor(buf.as_slice()).unwrap();
        assert_eq!(bits(&tensor), bits(&back));
        assert_eq!(tensor.grid, back.grid);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let tensor = sample();
        let mut buf = Vec::new();
        export_csv(&tensor, &mut buf).unwrap();
        let back = import_csv(buf.as_slice()).unwrap();
        assert_eq!(bits(&tensor), bits(&back));
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let tensor = sample();
        let mut buf = Vec::new();
        write_tensor(&tensor, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_tensor(buf.as_slice()), Err(TensorizeError::CorruptTensor(_))));
        assert!(read_tensor(&b"not a tensor at all"[..]).is_err());
    }
}
