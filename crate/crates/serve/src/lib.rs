//! Salinity imputation service.
//!
//! Loads a verified checkpoint, answers single-point and batch requests
//! (tide from an override, recorded/live NOAA predictions, or the
//! checkpoint's own tide model), and swaps checkpoints atomically under load.

mod batch;
mod config;
mod error;
pub mod http;
mod model;
mod service;
mod tide;

pub use batch::{parse_batch_csv, parse_batch_json, BatchItem, BatchResponse};
pub use config::{run, ServeConfig, ENV_ADMIN_TOKEN, ENV_BIND, ENV_CKPT, ENV_FIXTURE_DIR, ENV_STATION};
pub use error::{ErrorBody, ServeError};
pub use http::{router, AppState};
pub use model::{load_checkpoint, ImputeRequest, ImputeResponse, ModelInfo, ServingModel, TideSource};
pub use service::{impute_batch, impute_point, ImputeService};
pub use tide::TideResolver;
