use oasis_core::baselines::{BaselineConfig, BaselineKind, BaselineModel, LstmConfig};
use oasis_core::dan::{train_with, Checkpoint, DiscriminatorConfig, GeneratorConfig, Region, TrainConfig};
use oasis_core::tensorize::{
    generate_synthetic, parse_trajectories, rasterize, read_tensor, split_trajectories, write_tensor, write_trajectories,
    ColumnSchema, GridSpec, SplitRatios, SyntheticConfig, TrajectorySet, SALINITY,
};
use oasis_core::Exec;

fn data() -> TrajectorySet {
    generate_synthetic(&SyntheticConfig {
        n_trajectories: 6,
        steps_per_trajectory: 30,
        ..Default::default()
    })
    .unwrap()
    .0
}

fn small() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        generator: GeneratorConfig {
            hidden: vec![8],
            d_model: 8,
            n_heads: 2,
            window: 4,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig {
            hidden: vec![8, 4],
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn csv_and_tensor_round_trip() {
    let set = data();
    let mut buf = Vec::new();
    write_trajectories(&set, &mut buf).unwrap();
    let parsed = parse_trajectories(buf.as_slice(), &ColumnSchema::default()).unwrap();
    assert!(parsed.rejected.is_empty());
    assert_eq!(parsed.set.len(), set.len());
    for (a, b) in parsed.set.records.iter().zip(&set.records) {
        assert_eq!(a.trajectory_id, b.trajectory_id);
        assert_eq!(a.timestamp, b.timestamp);
        assert!((a.salinity.unwrap() - b.salinity.unwrap()).abs() < 1e-9);
    }

    let grid = GridSpec::covering(&set, 8, 8, None).unwrap();
    let raster = rasterize(&set, &grid, &[SALINITY.to_string()]).unwrap();
    let mut bytes = Vec::new();
    write_tensor(&raster.tensor, &mut bytes).unwrap();
    let back = read_tensor(bytes.as_slice()).unwrap();
    assert_eq!(back.grid, raster.tensor.grid);
    assert_eq!(back.mask, raster.tensor.mask);
    assert!(back.observed() > 0);
    for (a, b) in back.values.iter().zip(raster.tensor.values.iter()) {
        assert!(a == b || (a.is_nan() && b.is_nan()));
    }
}

#[test]
fn train_checkpoint_predict() {
    let set = data();
    let split = split_trajectories(&set, SplitRatios::default(), 42).unwrap();
    let (tr, va, te) = (set.subset(&split.train_ids), set.subset(&split.val_ids), set.subset(&split.test_ids));
    let model = train_with(&tr, &va, &small(), Exec::Parallel).unwrap();
    assert_eq!(model.history.epochs.len(), 3);

    let ckpt = Checkpoint::from_trained(&model, Region::around(&tr, 0.1).unwrap(), None, None);
    let (back, _) = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
    let a = model.generator.predict_set(&te, Exec::Parallel).unwrap();
    let b = back.generator.predict_set(&te, Exec::Sequential).unwrap();
    assert_eq!(a.len(), te.len());
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
}

#[test]
fn every_baseline_fits_and_predicts() {
    let set = data();
    let split = split_trajectories(&set, SplitRatios::default(), 42).unwrap();
    let (tr, va, te) = (set.subset(&split.train_ids), set.subset(&split.val_ids), set.subset(&split.test_ids));
    let cfg = BaselineConfig {
        neural: small(),
        lstm: LstmConfig { hidden: 4, window: 4 },
        ..Default::default()
    };
    for kind in BaselineKind::ALL {
        let mut m = BaselineModel::new(kind, cfg.clone());
        m.fit(&tr, &va, Exec::Parallel).unwrap();
        let p = m.predict(&te, Exec::Parallel).unwrap();
        let q = m.predict(&te, Exec::Sequential).unwrap();
        assert_eq!(p.len(), te.len(), "{kind:?}");
        assert!(p.iter().all(|v| v.is_finite()), "{kind:?}");
        assert_eq!(p, q, "{kind:?}");
    }
}
