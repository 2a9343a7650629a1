use std::sync::Arc;

use chrono::{DateTime, Utc};
use oasis_core::tide::{fetch_noaa_predictions, fit_sinusoid, NoaaClient, OmegaMode, DEFAULT_STATION};

use crate::model::{ServingModel, TideSource};
use crate::ServeError;

/// Where tide heights come from, in priority order: request override, NOAA
/// (one sinusoid fitted to the query day's events), then the tide model
/// stored in the checkpoint.
#[derive(Clone, Default)]
pub struct TideResolver {
    pub client: Option<Arc<dyn NoaaClient>>,
    /// Overrides the checkpoint's station.
    pub station: Option<String>,
}

impl std::fmt::Debug for TideResolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TideResolver")
            .field("client", &self.client.is_some())
            .field("station", &self.station)
            .finish()
    }
}

impl TideResolver {
    pub fn offline() -> Self {
        Self::default()
    }

    pub fn with_client(client: Arc<dyn NoaaClient>, station: Option<String>) -> Self {
        Self {
            client: Some(client),
            station,
        }
    }

    fn station_for(&self, model: &ServingModel) -> String {
        self.station
            .clone()
            .or_else(|| model.checkpoint.metadata.tide_station.clone())
            .unwrap_or_else(|| DEFAULT_STATION.to_string())
    }

    pub fn noaa_height(&self, model: &ServingModel, t: DateTime<Utc>) -> Result<f64, String> {
        let client = self.client.as_ref().ok_or("no NOAA client configured")?;
        let day = t.date_naive();
        let events = fetch_noaa_predictions(client.as_ref(), &self.station_for(model), day, day).map_err(|e| e.to_string())?;
        let fit = fit_sinusoid(&events, OmegaMode::default()).map_err(|e| e.to_string())?;
        Ok(fit.height(t))
    }

    pub fn resolve(
        &self,
        model: &ServingModel,
        t: DateTime<Utc>,
        tide_override: Option<f64>,
    ) -> Result<(f64, TideSource), ServeError> {
        if let Some(h) = tide_override {
            return Ok((h, TideSource::Override));
        }
        let mut reasons = Vec::new();
        match self.noaa_height(model, t) {
            Ok(h) => return Ok((h, TideSource::Noaa)),
            Err(e) => reasons.push(e),
        }
        if let Some(m) = model.tide_model() {
            return Ok((m.height(t), TideSource::ModelExtrapolated));
        }
        reasons.push("checkpoint carries no tide model".into());
        Err(ServeError::TideUnavailable {
            timestamp: t.to_rfc3339(),
            reason: reasons.join("; "),
        })
    }
}
