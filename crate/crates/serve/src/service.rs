use std::path::Path;
use std::sync::{Arc, RwLock};

use oasis_core::par::map_slice;
use oasis_core::Exec;

use crate::batch::BatchResponse;
use crate::model::{load_checkpoint, ImputeRequest, ImputeResponse, ServingModel};
use crate::tide::TideResolver;
use crate::ServeError;

/// Impute one point against a fixed model snapshot.
pub fn impute_point(req: &ImputeRequest, model: &ServingModel, tide: &TideResolver) -> Result<ImputeResponse, ServeError> {
    model.check_region(req)?;
    let (tide_used, tide_source) = if model.uses_tide() {
        let (h, src) = tide.resolve(model, req.timestamp, req.tide_override)?;
        (Some(h), Some(src))
    } else {
        (None, None)
    };
    let salinity = model.predict(req.timestamp, req.lat, req.lon, tide_used)?;
    Ok(ImputeResponse {
        salinity,
        tide_used,
        tide_source,
        model_version: model.version.clone(),
    })
}

/// Impute already-parsed rows; rows that failed parsing keep their error.
pub fn impute_batch(
    rows: Vec<Result<ImputeRequest, ServeError>>,
    model: &ServingModel,
    tide: &TideResolver,
    exec: Exec,
) -> BatchResponse {
    let results = map_slice(exec, &rows, |row| match row {
        Ok(req) => impute_point(req, model, tide),
        Err(e) => Err(e.clone()),
    });
    BatchResponse::from_results(model.version.clone(), results)
}

/// Shared serving state. Readers take a snapshot `Arc` and never hold the
/// lock while predicting, so a swap never blocks on inference and
/// in-flight requests finish on the model they started with.
#[derive(Debug)]
pub struct ImputeService {
    model: RwLock<Arc<ServingModel>>,
    tide: TideResolver,
}

impl ImputeService {
    pub fn new(model: ServingModel, tide: TideResolver) -> Self {
        Self {
            model: RwLock::new(Arc::new(model)),
            tide,
        }
    }

    pub fn open(path: impl AsRef<Path>, tide: TideResolver) -> Result<Self, ServeError> {
        Ok(Self::new(load_checkpoint(path)?, tide))
    }

    pub fn snapshot(&self) -> Arc<ServingModel> {
        self.model.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn version(&self) -> String {
        self.snapshot().version.clone()
    }

    pub fn tide(&self) -> &TideResolver {
        &self.tide
    }

    pub fn impute_point(&self, req: &ImputeRequest) -> Result<ImputeResponse, ServeError> {
        impute_point(req, &self.snapshot(), &self.tide)
    }

    pub fn impute_batch(&self, rows: Vec<Result<ImputeRequest, ServeError>>, exec: Exec) -> BatchResponse {
        impute_batch(rows, &self.snapshot(), &self.tide, exec)
    }

    /// Load and verify `path`, then publish it. On any error the current
    /// model keeps serving.
    pub fn swap_checkpoint(&self, path: impl AsRef<Path>) -> Result<String, ServeError> {
        let next = load_checkpoint(path)?;
        Ok(self.install(next))
    }

    /// Publish an already-verified model; returns its version.
    pub fn install(&self, next: ServingModel) -> String {
        let version = next.version.clone();
        let next = Arc::new(next);
        *self.model.write().unwrap_or_else(|p| p.into_inner()) = next;
        tracing::info!(%version, "model swapped");
        version
    }
}
