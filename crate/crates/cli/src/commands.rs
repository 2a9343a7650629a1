use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::Duration;
use oasis_core::baselines::{BaselineConfig, BaselineModel};
use oasis_core::dan::{train_with, Checkpoint, Region, TrainConfig};
use oasis_core::evalharness::{
    ablation_sweep, emit_field_plot, run_experiment, run_seeds, ExperimentConfig, ExperimentOutcome, PlotSpec,
    ResultsTable,
};
use oasis_core::tensorize::{
    export_csv, generate_synthetic, parse_timestamp, rasterize, split_trajectories, write_tensor, write_trajectories,
    ColumnSchema, GridSpec, SplitRatios, SyntheticConfig, TrajectorySet, SALINITY, TIDE,
};
use oasis_core::tide::{fetch_noaa_predictions, fit_sinusoid, FixtureClient, NoaaClient, OmegaMode, TideEvent, TideModel};
use oasis_core::Exec;

use crate::io::{load_queries, load_records, read_json};
use crate::Command;

pub fn run(command: Command, exec: Exec) -> Result<()> {
    match command {
        Command::Ingest {
            input,
            grid,
            out,
            schema,
        } => ingest(&input, &grid, &out, schema.as_deref()),
        Command::Synth { config, out, truth } => synth(config.as_deref(), &out, truth.as_deref()),
        Command::Train {
            data,
            config,
            out,
            ablate,
            no_tide,
            epochs,
            seed,
            station,
        } => {
            let mut cfg: TrainConfig = read_json(config.as_deref())?;
            for a in ablate {
                cfg = cfg.ablated(a);
            }
            if no_tide {
                cfg.use_tide = false;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            train(&data, &cfg, &out, station, exec)
        }
        Command::Tide {
            station,
            date,
            fixture,
            every,
        } => tide(&station, date, fixture, every),
        Command::Baseline {
            kind,
            data,
            queries,
            out,
            config,
        } => {
            let cfg: BaselineConfig = read_json(config.as_deref())?;
            baseline(BaselineModel::new(kind, cfg), &data, &queries, &out, exec)
        }
        Command::Eval {
            config,
            seeds,
            model,
            out,
        } => {
            let mut cfg = experiment_config(config.as_deref(), out)?;
            if let Some(m) = model {
                cfg.model = m;
            }
            let outcomes = if seeds.is_empty() {
                vec![run_experiment(&cfg, exec)?]
            } else {
                run_seeds(&cfg, &seeds, exec)?
            };
            report(&cfg, &outcomes, &seeds)
        }
        Command::Ablate { config, out } => {
            let cfg = experiment_config(config.as_deref(), out)?;
            let (_, outcomes) = ablation_sweep(&cfg, exec)?;
            report(&cfg, &outcomes, &[])
        }
        Command::Plot {
            ckpt,
            time,
            out,
            nx,
            ny,
            tide,
        } => plot(&ckpt, &time, &out, nx, ny, tide, exec),
        Command::Serve {
            ckpt,
            port,
            host,
            fixture,
            station,
        } => {
            let mut cfg = oasis_serve::ServeConfig::new(ckpt, SocketAddr::new(host, port));
            cfg.fixture_dir = fixture;
            cfg.station = station;
            let cfg = cfg.with_env_defaults();
            tokio::runtime::Runtime::new()?.block_on(oasis_serve::run(cfg))?;
            Ok(())
        }
    }
}

fn parse_grid(spec: &str, set: &TrajectorySet) -> Result<GridSpec> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return serde_json::from_str(&text).with_context(|| format!("parsing grid {spec}"));
    }
    let (cells, step) = match spec.split_once('@') {
        Some((c, s)) => (c, Some(s.parse::<i64>().context("grid time step must be whole seconds")?)),
        None => (spec, None),
    };
    let Some((u, v)) = cells.split_once(['x', 'X']) else {
        bail!("grid `{spec}` is neither a file nor UxV[@SECONDS]");
    };
    Ok(GridSpec::covering(set, u.parse()?, v.parse()?, step)?)
}

fn ingest(input: &Path, grid: &str, out: &Path, schema: Option<&Path>) -> Result<()> {
    let schema: ColumnSchema = read_json(schema)?;
    let set = load_records(input, &schema)?;
    let grid = parse_grid(grid, &set)?;
    let mut channels = vec![SALINITY.to_string()];
    channels.extend(set.covariate_names());
    let raster = rasterize(&set, &grid, &channels)?;
    let file = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    if out.extension().is_some_and(|e| e == "csv") {
        export_csv(&raster.tensor, file)?;
    } else {
        write_tensor(&raster.tensor, file)?;
    }
    let (t, u, v, d) = raster.tensor.shape();
    println!(
        "{} records -> tensor {t}x{u}x{v}x{d} ({} observed entries, {} records outside the grid)",
        set.len(),
        raster.tensor.observed(),
        raster.skipped
    );
    Ok(())
}

fn synth(config: Option<&Path>, out: &Path, truth: Option<&Path>) -> Result<()> {
    let cfg: SyntheticConfig = read_json(config)?;
    let (set, field) = generate_synthetic(&cfg)?;
    write_trajectories(&set, BufWriter::new(File::create(out)?))?;
    if let Some(path) = truth {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trajectory_id", "timestamp", "lat", "lon", "salinity_true"])?;
        for r in &set.records {
            w.write_record([
                r.trajectory_id.clone(),
                oasis_core::tensorize::format_timestamp(&r.timestamp),
                r.lat.to_string(),
                r.lon.to_string(),
                field.salinity(r.timestamp, r.lat, r.lon).to_string(),
            ])?;
        }
        w.flush()?;
    }
    println!("{} records in {} trajectories -> {}", set.len(), set.trajectory_ids.len(), out.display());
    Ok(())
}

/// Tide sinusoid fitted to the data's own tide column, kept in the
/// checkpoint as the serving fallback.
fn tide_from_records(set: &TrajectorySet) -> Option<TideModel> {
    let events: Vec<TideEvent> = set
        .records
        .iter()
        .filter_map(|r| {
            r.covariates.get(TIDE).map(|&height| TideEvent {
                timestamp: r.timestamp,
                height,
                kind: None,
            })
        })
        .collect();
    fit_sinusoid(&events, OmegaMode::default()).ok()
}

fn split(set: &TrajectorySet, seed: u64) -> Result<(TrajectorySet, TrajectorySet, TrajectorySet)> {
    if set.trajectory_ids.len() < 3 {
        return Ok((set.clone(), TrajectorySet::default(), TrajectorySet::default()));
    }
    let s = split_trajectories(set, SplitRatios::default(), seed)?;
    Ok((set.subset(&s.train_ids), set.subset(&s.val_ids), set.subset(&s.test_ids)))
}

fn train(data: &Path, cfg: &TrainConfig, out: &Path, station: Option<String>, exec: Exec) -> Result<()> {
    let set = load_records(data, &ColumnSchema::default())?;
    let (tr, va, te) = split(&set, 42)?;
    let model = train_with(&tr, &va, cfg, exec)?;
    let region = Region::around(&tr, 0.1).context("empty training set")?;
    let tide = if cfg.use_tide { tide_from_records(&tr) } else { None };
    let version = Checkpoint::from_trained(&model, region, tide, station).save(out)?;
    let h = &model.history;
    if let (Some(first), Some(last)) = (h.epochs.first(), h.epochs.last()) {
        println!("epoch 1: mse {:.5}  epoch {}: mse {:.5}", first.mse, last.epoch, last.mse);
    }
    if let Some(v) = h.best_val_mae {
        println!("kept epoch {} (validation MAE {v:.4})", h.best_epoch);
    }
    if !te.is_empty() {
        let pred = model.generator.predict_set(&te, exec)?;
        let truth: Vec<f64> = te.records.iter().map(|r| r.salinity.unwrap_or(f64::NAN)).collect();
        let (y, yhat): (Vec<f64>, Vec<f64>) = truth.into_iter().zip(pred).filter(|(y, _)| y.is_finite()).unzip();
        if !y.is_empty() {
            let m = oasis_core::evalharness::metrics(&y, &yhat)?;
            println!("test MAE {:.4}  RMSE {:.4}  MAPE {:.3}%", m.mae, m.rmse, m.mape);
        }
    }
    println!("wrote {} (version {version})", out.display());
    Ok(())
}

fn tide(station: &str, date: chrono::NaiveDate, fixture: Option<PathBuf>, every: i64) -> Result<()> {
    let client: Box<dyn NoaaClient> = match fixture {
        Some(dir) => Box::new(FixtureClient::new(dir)),
        None => live_client()?,
    };
    let events = fetch_noaa_predictions(client.as_ref(), station, date, date)?;
    let model = fit_sinusoid(&events, OmegaMode::default())?;
    println!("station {station}, {date}: {} events (MLLW, metres)", events.len());
    for e in &events {
        println!("  {}  {:>7.3}  {}", e.timestamp.format("%H:%M"), e.height, e.kind.as_deref().unwrap_or(""));
    }
    println!(
        "h(t) = {:.4}·sin({:.5}·Δt + {:.4}) + {:.4}   (Δt hours from {}, fit RMSE {:.4})",
        model.amplitude,
        model.omega,
        model.phase,
        model.offset,
        model.fit_window.0.format("%H:%M"),
        model.rmse_fit
    );
    let start = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let every = every.max(1);
    for k in 0..=(24 * 60 / every) {
        let t = start + Duration::minutes(k * every);
        println!("{}  {:>7.3}", t.format("%Y-%m-%dT%H:%M"), model.height(t));
    }
    Ok(())
}

#[cfg(feature = "live-noaa")]
fn live_client() -> Result<Box<dyn NoaaClient>> {
    Ok(Box::new(oasis_core::tide::HttpClient))
}

#[cfg(not(feature = "live-noaa"))]
fn live_client() -> Result<Box<dyn NoaaClient>> {
    bail!("no --fixture given and this build has no live NOAA client (enable the `live-noaa` feature)")
}

fn baseline(mut model: BaselineModel, data: &Path, queries: &Path, out: &Path, exec: Exec) -> Result<()> {
    let set = load_records(data, &ColumnSchema::default())?;
    let (tr, va, _) = split(&set, 42)?;
    model.fit(&tr, &va, exec)?;
    let rows = load_queries(queries)?;
    let qset = TrajectorySet::from_records(rows.clone());
    let pred = model.predict(&qset, exec)?;
    let by_key: HashMap<(&str, i64), f64> = qset
        .records
        .iter()
        .zip(&pred)
        .map(|(r, &p)| ((r.trajectory_id.as_str(), r.timestamp.timestamp()), p))
        .collect();
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["trajectory_id", "timestamp", "lat", "lon", "salinity_hat"])?;
    for r in &rows {
        let p = by_key[&(r.trajectory_id.as_str(), r.timestamp.timestamp())];
        w.write_record([
            r.trajectory_id.clone(),
            oasis_core::tensorize::format_timestamp(&r.timestamp),
            r.lat.to_string(),
            r.lon.to_string(),
            p.to_string(),
        ])?;
    }
    w.flush()?;
    println!("{}: {} predictions -> {}", model.kind, rows.len(), out.display());
    Ok(())
}

fn experiment_config(path: Option<&Path>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    if out.is_some() {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

/// `seeds`, when given, labels each outcome in order.
fn report(cfg: &ExperimentConfig, outcomes: &[ExperimentOutcome], seeds: &[u64]) -> Result<()> {
    let rows = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut row = o.row.clone();
            if let Some(seed) = seeds.get(i) {
                row.model = format!("{} (seed {seed})", row.model);
            }
            row
        })
        .collect();
    let table = ResultsTable { rows };
    print!("{}", table.to_text());
    for o in outcomes {
        if let Some(t) = &o.truth_metrics {
            println!("{}: MAE vs noiseless field {:.4}", o.row.model, t.mae);
        }
        if let Some(dir) = &o.run_dir {
            println!("{}: {}", o.row.model, dir.display());
        }
    }
    if let Some(dir) = &cfg.output_dir {
        table.write(dir)?;
    }
    Ok(())
}

fn plot(ckpt: &Path, time: &str, out: &Path, nx: usize, ny: usize, tide: Option<f64>, exec: Exec) -> Result<()> {
    let (ckpt, version) = Checkpoint::load(ckpt)?;
    let time = parse_timestamp(time).with_context(|| format!("bad --time `{time}`"))?;
    let mut covariates = BTreeMap::new();
    if ckpt.generator.features.covariates.iter().any(|c| c == TIDE) {
        let h = match (tide, &ckpt.metadata.tide) {
            (Some(h), _) => h,
            (None, Some(m)) => m.height(time),
            (None, None) => bail!("model uses tide but the checkpoint has no tide model; pass --tide"),
        };
        covariates.insert(TIDE.to_string(), h);
    }
    let r = ckpt.metadata.region;
    let spec = PlotSpec {
        lat_min: r.lat_min,
        lat_max: r.lat_max,
        lon_min: r.lon_min,
        lon_max: r.lon_max,
        nx,
        ny,
        cell_px: 8,
    };
    let summary = emit_field_plot(&ckpt.generator, &spec, time, &covariates, &[], out, exec)?;
    println!(
        "model {version}: {}x{} px, salinity {:.3}..{:.3} psu -> {}",
        summary.width,
        summary.height,
        summary.scale_min,
        summary.scale_max,
        out.display()
    );
    Ok(())
}
