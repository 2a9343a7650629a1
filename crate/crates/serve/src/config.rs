use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use oasis_core::tide::FixtureClient;

use crate::http::AppState;
use crate::service::ImputeService;
use crate::tide::TideResolver;
use crate::ServeError;

pub const ENV_CKPT: &str = "OASIS_CKPT";
pub const ENV_BIND: &str = "OASIS_BIND";
pub const ENV_STATION: &str = "OASIS_STATION";
pub const ENV_FIXTURE_DIR: &str = "OASIS_FIXTURE_DIR";
pub const ENV_ADMIN_TOKEN: &str = "OASIS_ADMIN_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    pub checkpoint: PathBuf,
    pub bind: SocketAddr,
    pub station: Option<String>,
    /// Recorded NOAA responses; without it only overrides and the
    /// checkpoint's tide model are used.
    pub fixture_dir: Option<PathBuf>,
    pub admin_token: Option<String>,
}

impl ServeConfig {
    pub fn new(checkpoint: impl Into<PathBuf>, bind: SocketAddr) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            bind,
            station: None,
            fixture_dir: None,
            admin_token: None,
        }
    }

    /// Read every setting from `OASIS_*` variables. Unset fields stay `None`.
    pub fn from_env() -> Result<Self, ServeError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let checkpoint = var(ENV_CKPT).ok_or_else(|| ServeError::InvalidRequest(format!("{ENV_CKPT} is not set")))?;
        let bind = var(ENV_BIND)
            .unwrap_or_else(|| "127.0.0.1:8080".into())
            .parse()
            .map_err(|e| ServeError::InvalidRequest(format!("{ENV_BIND}: {e}")))?;
        Ok(Self {
            checkpoint: checkpoint.into(),
            bind,
            station: var(ENV_STATION),
            fixture_dir: var(ENV_FIXTURE_DIR).map(PathBuf::from),
            admin_token: var(ENV_ADMIN_TOKEN),
        })
    }

    /// Fill unset fields from the environment.
    pub fn with_env_defaults(mut self) -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        self.station = self.station.or_else(|| var(ENV_STATION));
        self.fixture_dir = self.fixture_dir.or_else(|| var(ENV_FIXTURE_DIR).map(PathBuf::from));
        self.admin_token = self.admin_token.or_else(|| var(ENV_ADMIN_TOKEN));
        self
    }

    pub fn tide_resolver(&self) -> TideResolver {
        match &self.fixture_dir {
            Some(dir) => TideResolver::with_client(Arc::new(FixtureClient::new(dir)), self.station.clone()),
            None => TideResolver {
                client: None,
                station: self.station.clone(),
            },
        }
    }

    pub fn state(&self) -> Result<AppState, ServeError> {
        Ok(AppState {
            service: Arc::new(ImputeService::open(&self.checkpoint, self.tide_resolver())?),
            admin_token: self.admin_token.clone(),
        })
    }
}

/// Load the checkpoint and serve until Ctrl-C.
pub async fn run(config: ServeConfig) -> Result<(), ServeError> {
    let state = config.state()?;
    crate::http::serve(state, config.bind)
        .await
        .map_err(|e| ServeError::Io(e.to_string()))
}
