#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use oasis_core::dan::{train, Checkpoint, DiscriminatorConfig, GeneratorConfig, Region, TrainConfig};
use oasis_core::tensorize::{generate_synthetic, split_trajectories, SplitRatios, SyntheticConfig, TrajectorySet};
use oasis_core::tide::{NoaaClient, PredictionRequest, TideError};
use oasis_serve::{ImputeRequest, ServingModel};

pub fn data() -> (TrajectorySet, TrajectorySet, oasis_core::tensorize::SyntheticField) {
    let cfg = SyntheticConfig {
        n_trajectories: 6,
        steps_per_trajectory: 40,
        ..Default::default()
    };
    let (set, field) = generate_synthetic(&cfg).unwrap();
    let split = split_trajectories(&set, SplitRatios::default(), 42).unwrap();
    (set.subset(&split.train_ids), set.subset(&split.val_ids), field)
}

/// A small trained checkpoint; different seeds give different weights.
pub fn checkpoint(seed: u64, use_tide: bool) -> Checkpoint {
    let (tr, va, field) = data();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        seed,
        use_tide,
        generator: GeneratorConfig {
            hidden: vec![8],
            d_model: 8,
            n_heads: 2,
            window: 8,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig {
            hidden: vec![8, 4],
            ..Default::default()
        },
        ..Default::default()
    };
    let model = train(&tr, &va, &cfg).unwrap();
    Checkpoint::from_trained(&model, Region::around(&tr, 0.1).unwrap(), Some(field.tide.clone()), None)
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> String {
    ckpt.save(path).unwrap()
}

pub fn serving(ckpt: &Checkpoint) -> ServingModel {
    ServingModel::from_bytes(&ckpt.to_bytes()).unwrap()
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2016, 6, 16, 6, 0, 0).unwrap()
}

/// Requests spread over the model region and the first two days.
pub fn probe(model: &ServingModel, n: usize) -> Vec<ImputeRequest> {
    let r = model.region();
    (0..n)
        .map(|i| {
            let f = (i as f64 + 0.5) / n as f64;
            let g = ((i * 37) % n) as f64 / n as f64;
            ImputeRequest::new(
                t0() + Duration::minutes(29 * i as i64),
                r.lat_min + f * (r.lat_max - r.lat_min),
                r.lon_min + g * (r.lon_max - r.lon_min),
            )
        })
        .collect()
}

/// Fails every fetch and counts the attempts.
#[derive(Default)]
pub struct CountingClient {
    pub calls: AtomicUsize,
    pub body: Option<String>,
}

impl CountingClient {
    pub fn serving(body: &str) -> Arc<Self> {
        Arc::new(Self {
            calls: AtomicUsize::new(0),
            body: Some(body.to_string()),
        })
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl NoaaClient for CountingClient {
    fn fetch_raw(&self, request: &PredictionRequest) -> Result<String, TideError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.body.clone().ok_or_else(|| TideError::NetworkError {
            station: request.station.clone(),
            range: request.range_label(),
            message: "offline".into(),
        })
    }
}

/// Four events for 2016-06-16 from h(t) = 0.4·sin(ω·Δt + 0.3) + 0.5.
pub const DAY_EVENTS: &str = r#"{ "predictions" : [
    {"t":"2016-06-16 02:42", "v":"0.215", "type":"L"},
    {"t":"2016-06-16 08:51", "v":"0.893", "type":"H"},
    {"t":"2016-06-16 15:05", "v":"0.171", "type":"L"},
    {"t":"2016-06-16 21:13", "v":"0.958", "type":"H"}
]}"#;
