mod common;

use std::sync::Arc;

use chrono::Duration;
use common::*;
use oasis_core::dan::CHECKPOINT_VERSION;
use oasis_core::tide::{fit_sinusoid, parse_predictions, FixtureClient, OmegaMode, PredictionRequest};
use oasis_core::Exec;
use oasis_serve::*;

#[test]
fn save_load_round_trip_on_probe() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = checkpoint(1, true);
    let saved_version = save(&ckpt, &path);
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.version, saved_version);
    let original = ServingModel::new(ckpt, saved_version).unwrap();
    let tide = TideResolver::offline();
    let probe = probe(&original, 100);
    for req in &probe {
        let a = impute_point(req, &original, &tide).unwrap();
        let b = impute_point(req, &loaded, &tide).unwrap();
        assert!((a.salinity - b.salinity).abs() <= 1e-9, "{} vs {}", a.salinity, b.salinity);
        assert_eq!(a.tide_used, b.tide_used);
    }
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save(&checkpoint(1, true), &path);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(ServeError::CorruptCheckpoint(_))));

    let mut bumped = bytes.clone();
    bumped[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match ServingModel::from_bytes(&bumped) {
        Err(ServeError::VersionMismatch { expected, found }) => {
            assert_eq!((expected, found), (CHECKPOINT_VERSION, CHECKPOINT_VERSION + 1))
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(ServeError::Io(_))));
}

#[test]
fn override_never_contacts_noaa() {
    let model = serving(&checkpoint(1, true));
    let client = Arc::new(CountingClient::default());
    let tide = TideResolver::with_client(client.clone(), None);
    for req in probe(&model, 10) {
        let out = impute_point(&req.with_tide(0.7), &model, &tide).unwrap();
        assert_eq!(out.tide_source, Some(TideSource::Override));
        assert_eq!(out.tide_used, Some(0.7));
    }
    assert_eq!(client.count(), 0);
}

#[test]
fn noaa_day_fit_is_used_when_available() {
    let model = serving(&checkpoint(1, true));
    let client = CountingClient::serving(DAY_EVENTS);
    let tide = TideResolver::with_client(client.clone(), Some("8722212".into()));
    let req = probe(&model, 1).remove(0);
    let out = impute_point(&req, &model, &tide).unwrap();
    assert_eq!(out.tide_source, Some(TideSource::Noaa));
    assert_eq!(client.count(), 1);
    let fit = fit_sinusoid(&parse_predictions(DAY_EVENTS).unwrap(), OmegaMode::default()).unwrap();
    assert_eq!(out.tide_used, Some(fit.height(req.timestamp)));
}

#[test]
fn fixture_directory_client() {
    let dir = tempfile::tempdir().unwrap();
    let day = t0().date_naive();
    let client = FixtureClient::new(dir.path());
    std::fs::write(client.path_for(&PredictionRequest::new("8722212", day, day)), DAY_EVENTS).unwrap();
    let model = serving(&checkpoint(1, true));
    let tide = TideResolver::with_client(Arc::new(client), None);
    let mut req = probe(&model, 1).remove(0);
    assert_eq!(impute_point(&req, &model, &tide).unwrap().tide_source, Some(TideSource::Noaa));
    req.timestamp += Duration::days(3);
    assert_eq!(
        impute_point(&req, &model, &tide).unwrap().tide_source,
        Some(TideSource::ModelExtrapolated)
    );
}

#[test]
fn falls_back_to_checkpoint_tide_then_fails() {
    let ckpt = checkpoint(1, true);
    let model = serving(&ckpt);
    let client = Arc::new(CountingClient::default());
    let tide = TideResolver::with_client(client.clone(), None);
    let req = probe(&model, 1).remove(0);
    let out = impute_point(&req, &model, &tide).unwrap();
    assert_eq!(out.tide_source, Some(TideSource::ModelExtrapolated));
    assert_eq!(out.tide_used, Some(ckpt.metadata.tide.as_ref().unwrap().height(req.timestamp)));

    let mut bare = ckpt.clone();
    bare.metadata.tide = None;
    let bare = serving(&bare);
    match impute_point(&req, &bare, &tide) {
        Err(e @ ServeError::TideUnavailable { .. }) => {
            assert_eq!(e.code(), "tide_unavailable");
            assert!(e.to_string().contains("offline"));
        }
        other => panic!("{other:?}"),
    }
    assert!(impute_point(&req.clone().with_tide(0.1), &bare, &tide).is_ok());
}

#[test]
fn model_without_tide_ignores_tide_sources() {
    let model = serving(&checkpoint(1, false));
    let client = Arc::new(CountingClient::default());
    let tide = TideResolver::with_client(client.clone(), None);
    let out = impute_point(&probe(&model, 1)[0], &model, &tide).unwrap();
    assert_eq!((out.tide_used, out.tide_source), (None, None));
    assert_eq!(client.count(), 0);
}

#[test]
fn region_and_validation() {
    let model = serving(&checkpoint(1, true));
    let tide = TideResolver::offline();
    let r = model.region();
    let mut req = probe(&model, 1).remove(0);
    req.lon = r.lon_max + 1.0;
    assert!(matches!(impute_point(&req, &model, &tide), Err(ServeError::OutOfRegion { .. })));
    req.lat = 999.0;
    assert!(matches!(impute_point(&req, &model, &tide), Err(ServeError::InvalidRequest(_))));
}

#[test]
fn identical_requests_identical_responses() {
    let model = serving(&checkpoint(1, true));
    let tide = TideResolver::offline();
    let req = probe(&model, 1).remove(0);
    assert_eq!(impute_point(&req, &model, &tide).unwrap(), impute_point(&req, &model, &tide).unwrap());
}

#[test]
fn batch_of_one_equals_point_and_order_is_kept() {
    let model = serving(&checkpoint(1, true));
    let tide = TideResolver::offline();
    let reqs = probe(&model, 3);
    for req in &reqs {
        let single = impute_point(req, &model, &tide).unwrap();
        let batch = impute_batch(vec![Ok(req.clone())], &model, &tide, Exec::Parallel);
        assert_eq!(batch.results[0].response.as_ref(), Some(&single));
    }
    let batch = impute_batch(reqs.iter().cloned().map(Ok).collect(), &model, &tide, Exec::Parallel);
    assert_eq!(batch.succeeded, 3);
    for (i, item) in batch.results.iter().enumerate() {
        assert_eq!(item.index, i);
        assert_eq!(item.response.as_ref().unwrap(), &impute_point(&reqs[i], &model, &tide).unwrap());
    }
}

#[test]
fn csv_batch_with_bad_middle_row() {
    let model = serving(&checkpoint(1, true));
    let tide = TideResolver::offline();
    let reqs = probe(&model, 3);
    let line = |r: &ImputeRequest, lat: f64| format!("{},{lat},{}\n", r.timestamp.to_rfc3339(), r.lon);
    let text = format!(
        "timestamp,lat,lon\n{}{}{}",
        line(&reqs[0], reqs[0].lat),
        line(&reqs[1], 999.0),
        line(&reqs[2], reqs[2].lat)
    );
    let out = impute_batch(parse_batch_csv(&text).unwrap(), &model, &tide, Exec::Sequential);
    assert_eq!((out.succeeded, out.failed), (2, 1));
    assert_eq!(out.results[1].error.as_ref().unwrap().code, "invalid_request");
    assert_eq!(out.results[0].response.as_ref().unwrap(), &impute_point(&reqs[0], &model, &tide).unwrap());
    assert_eq!(out.results[2].response.as_ref().unwrap(), &impute_point(&reqs[2], &model, &tide).unwrap());
    assert!(matches!(parse_batch_csv("time,lat,lon\n"), Err(ServeError::MalformedHeader(_))));
}

#[test]
fn swap_changes_version_and_corrupt_swap_keeps_old() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, bad) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("bad"));
    let va = save(&checkpoint(1, true), &a);
    let vb = save(&checkpoint(2, true), &b);
    assert_ne!(va, vb);
    std::fs::write(&bad, b"OASISCKP garbage").unwrap();

    let svc = ImputeService::open(&a, TideResolver::offline()).unwrap();
    let req = probe(&svc.snapshot(), 1).remove(0);
    let before = svc.impute_point(&req).unwrap();
    assert_eq!(before.model_version, va);

    assert!(matches!(svc.swap_checkpoint(&bad), Err(ServeError::CorruptCheckpoint(_))));
    assert_eq!(svc.impute_point(&req).unwrap(), before);

    assert_eq!(svc.swap_checkpoint(&b).unwrap(), vb);
    let after = svc.impute_point(&req).unwrap();
    assert_eq!(after.model_version, vb);
    assert_ne!(after.salinity, before.salinity);
}

#[test]
fn in_flight_snapshot_survives_swap() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let va = save(&checkpoint(1, true), &a);
    save(&checkpoint(2, true), &b);
    let svc = ImputeService::open(&a, TideResolver::offline()).unwrap();
    let held = svc.snapshot();
    svc.swap_checkpoint(&b).unwrap();
    let req = probe(&held, 1).remove(0);
    assert_eq!(impute_point(&req, &held, svc.tide()).unwrap().model_version, va);
}
