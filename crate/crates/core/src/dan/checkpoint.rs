//! Checkpoint container:
//!
//! ```text
//! magic "OASISCKP" | version u32 LE | payload length u64 LE | JSON payload | SHA-256(payload)
//! ```
//!
//! The model version tag is the first 16 hex digits of the payload digest.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::discriminator::Discriminator;
use super::generator::Generator;
use super::train::{History, TrainConfig, TrainedModel};
use super::DanError;
use crate::scheduler::ScheduleParams;
use crate::tensorize::TrajectorySet;
use crate::tide::TideModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OASISCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

/// Bounding box requests must fall inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Region {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }

    /// Bounding box of the records, widened by `margin` of each extent.
    pub fn around(set: &TrajectorySet, margin: f64) -> Option<Self> {
        let first = set.records.first()?;
        let mut r = Region {
            lat_min: first.lat,
            lat_max: first.lat,
            lon_min: first.lon,
            lon_max: first.lon,
        };
        for rec in &set.records {
            r.lat_min = r.lat_min.min(rec.lat);
            r.lat_max = r.lat_max.max(rec.lat);
            r.lon_min = r.lon_min.min(rec.lon);
            r.lon_max = r.lon_max.max(rec.lon);
        }
        let dl = ((r.lat_max - r.lat_min) * margin).max(1e-3);
        let dn = ((r.lon_max - r.lon_min) * margin).max(1e-3);
        Some(Region {
            lat_min: (r.lat_min - dl).max(-90.0),
            lat_max: (r.lat_max + dl).min(90.0),
            lon_min: (r.lon_min - dn).max(-180.0),
            lon_max: (r.lon_max + dn).min(180.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub region: Region,
    /// Fallback tide model used when no live or recorded source answers.
    pub tide: Option<TideModel>,
    pub tide_station: Option<String>,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub schedule: ScheduleParams,
    pub config: TrainConfig,
    pub config_hash: String,
    pub metadata: ModelMetadata,
}

impl Checkpoint {
    pub fn from_trained(model: &TrainedModel, region: Region, tide: Option<TideModel>, station: Option<String>) -> Self {
        Self {
            generator: model.generator.clone(),
            discriminator: model.discriminator.clone(),
            schedule: model.config.schedule,
            config: model.config.clone(),
            config_hash: model.config.hash(),
            metadata: ModelMetadata {
                region,
                tide,
                tide_station: station,
                history: model.history.clone(),
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(self).expect("checkpoint serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    /// Decode and verify; returns the checkpoint and its version tag.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String), DanError> {
        let corrupt = |m: &str| DanError::CorruptCheckpoint(m.to_string());
        if bytes.len() < HEADER_LEN + DIGEST_LEN {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(DanError::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() != HEADER_LEN + len + DIGEST_LEN {
            return Err(corrupt("length does not match header (truncated?)"));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
        let digest = Sha256::digest(payload);
        if digest.as_slice() != &bytes[HEADER_LEN + len..] {
            return Err(corrupt("payload digest mismatch"));
        }
        let ckpt: Checkpoint = serde_json::from_slice(payload).map_err(|e| corrupt(&format!("payload: {e}")))?;
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(corrupt("config hash does not match stored config"));
        }
        if ckpt.config.schedule != ckpt.schedule {
            return Err(corrupt("schedule parameters disagree with config"));
        }
        Ok((ckpt, hex::encode(&digest[..8])))
    }

    /// Write atomically (temp file + rename); returns the version tag.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String, DanError> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        let tag = version_tag(&bytes);
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(tag)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String), DanError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn version_tag(container: &[u8]) -> String {
    let payload = &container[HEADER_LEN..container.len() - DIGEST_LEN];
    hex::encode(&Sha256::digest(payload)[..8])
}
