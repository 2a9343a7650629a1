use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oasis_core::baselines::{gwr_fit, kriging_fit, GwrConfig, GwrPoint, GwrQuery, KrigingConfig};
use oasis_core::dan::{train_with, TrainConfig};
use oasis_core::tensorize::{generate_synthetic, split_trajectories, SplitRatios, SyntheticConfig, TrajectorySet};
use oasis_core::Exec;
use std::hint::black_box;

fn data() -> (TrajectorySet, TrajectorySet, TrajectorySet) {
    let (set, _) = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let split = split_trajectories(&set, SplitRatios::default(), 42).unwrap();
    (set.subset(&split.train_ids), set.subset(&split.val_ids), set.subset(&split.test_ids))
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn kriging(c: &mut Criterion) {
    let (train, _, test) = data();
    let pts: Vec<_> = train.records.iter().map(|r| (r.lat, r.lon, r.salinity.unwrap())).collect();
    let model = kriging_fit(&pts, &KrigingConfig::default()).unwrap();
    let queries: Vec<_> = test.records.iter().map(|r| (r.lat, r.lon)).collect();
    let mut g = c.benchmark_group("kriging_predict");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.predict_many(&queries, exec).unwrap()))
        });
    }
    g.finish();
}

fn gwr(c: &mut Criterion) {
    let (train, _, test) = data();
    let pts: Vec<_> = train
        .records
        .iter()
        .map(|r| GwrPoint { lat: r.lat, lon: r.lon, tide: r.channel("tide"), value: r.salinity.unwrap() })
        .collect();
    let model = gwr_fit(&pts, &GwrConfig::default(), Exec::Parallel).unwrap();
    let queries: Vec<_> = test.records.iter().map(|r| GwrQuery { lat: r.lat, lon: r.lon, tide: r.channel("tide") }).collect();
    let mut g = c.benchmark_group("gwr_predict");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.predict(&queries, exec).unwrap()))
        });
    }
    g.finish();
}

fn generator(c: &mut Criterion) {
    let (train, val, test) = data();
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let model = train_with(&train, &val, &cfg, Exec::Parallel).unwrap();
    let mut g = c.benchmark_group("generator_predict");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.generator.predict_set(&test, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, kriging, gwr, generator);
criterion_main!(benches);
