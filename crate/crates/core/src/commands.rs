//! Batch subcommands behind the `gridsec` binary.
//!
//! Each command reads its inputs, writes CSV (or text) outputs into `--out`,
//! and finishes with a JSON manifest `manifest_<command>.json` listing the
//! resolved configuration, input digests and every file written.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::FixedOffset;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attack::{self, build_scenario, simulate_scenario, write_sweep_csv, AttackKind};
use crate::config::{calibration_fragment, RunConfig};
use crate::error::{Error, Result};
use crate::forecast::{
    build_samples, correlation_table, evaluate, score, split_dataset, train_forest, write_correlation_csv,
    write_importance_csv, FeatureSet, ForestModel, Target,
};
use crate::freqsim::{calibrate_inertia, DEFAULT_TAU_GRID_S};
use crate::market_data::{
    filter_min_dpv, format_timestamp, join_records, parse_facility_csv, parse_joined_csv, parse_timestamp, read_dispatch,
    read_weather, write_dispatch_csv, write_facility_csv, write_joined_csv, write_weather_csv, DispatchInterval,
    DispatchSchema, Direction, JoinedInterval, OpacityUnit, WeatherSchema,
};
use crate::metrics::{
    joint_distribution, linear_edges, ratio_points, scan_vulnerable, seasonal_profile, write_ratio_csv,
    write_windows_csv, Quantity, RatioField, DEFAULT_SLOT_MINUTES,
};
use crate::reference::{read_reference_scenarios, ReferenceScenario, REFERENCE_SCENARIOS_CSV};
use crate::synthetic::demo_year;

#[derive(Debug, Parser)]
#[command(name = "gridsec", version, about = "Grid-frequency security analysis for high-DPV systems")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw; overrides `seed` in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for sweeps and training (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Where dispatch intervals come from. Exactly one source is required.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct DispatchSource {
    /// Joined dispatch + weather CSV written by `ingest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Canonical dispatch CSV.
    #[arg(long)]
    pub dispatch: Option<PathBuf>,
    /// Attack scenario table, or `builtin` for the bundled one.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Generate the seeded demo year.
    #[arg(long)]
    pub demo: bool,
}

/// Joined dispatch + weather records. Exactly one source is required.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct JoinedSource {
    /// Joined CSV written by `ingest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate the seeded demo year.
    #[arg(long)]
    pub demo: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and join dispatch, weather and facility files.
    Ingest {
        #[arg(long, required_unless_present = "demo", requires = "weather_file")]
        dispatch_file: Option<PathBuf>,
        #[arg(long, requires = "dispatch_file")]
        weather_file: Option<PathBuf>,
        #[arg(long)]
        facilities: Option<PathBuf>,
        /// Write the seeded demo year instead of reading files.
        #[arg(long, conflicts_with_all = ["dispatch_file", "weather_file"])]
        demo: bool,
        /// Map a canonical dispatch field to a file column, `field=column`.
        #[arg(long = "rename", value_parser = parse_pair)]
        renames: Vec<(String, String)>,
        /// Cloud opacity is given in percent.
        #[arg(long)]
        cloud_percent: bool,
        /// UTC offset (hours) for timestamps without one.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        utc_offset_h: i32,
    },
    /// Ratio series, vulnerable windows, joint distributions and daily profiles.
    Scan {
        #[command(flatten)]
        source: DispatchSource,
        /// Scan only one direction (default: both).
        #[arg(long)]
        direction: Option<Direction>,
    },
    /// Simulate one attack scenario.
    Simulate {
        #[command(flatten)]
        source: DispatchSource,
        #[arg(long)]
        timestamp: String,
        #[arg(long)]
        kind: AttackKind,
        #[arg(long)]
        overshoot: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Disable load shedding and OFGS tripping.
        #[arg(long)]
        no_emergency: bool,
    },
    /// Simulate an attack on every interval and rank the outcomes.
    Sweep {
        #[command(flatten)]
        source: DispatchSource,
        #[arg(long)]
        kind: AttackKind,
        #[arg(long)]
        overshoot: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Only intervals flagged by the vulnerable-regime scan.
        #[arg(long)]
        vulnerable_only: bool,
    },
    /// Fit the load-inertia model and reserve speed factors to observed times.
    Calibrate {
        /// Scenario table with observed times, or `builtin`.
        #[arg(long, default_value = "builtin")]
        rows: PathBuf,
        /// Comma-separated speed factor grid, seconds.
        #[arg(long, value_delimiter = ',')]
        tau_grid: Option<Vec<f64>>,
    },
    /// Train a forest on a target and evaluate it on a held-out split.
    Train {
        #[command(flatten)]
        source: JoinedSource,
        #[arg(long, default_value = "ess_raise_dpv")]
        target: Target,
        #[arg(long, default_value = "weather,market")]
        features: FeatureSet,
    },
    /// Apply a saved model to every interval.
    Predict {
        #[command(flatten)]
        source: JoinedSource,
        #[arg(long)]
        model: PathBuf,
        /// Also report the actual target and the fit.
        #[arg(long)]
        target: Option<Target>,
    },
    /// Pearson correlation of features against targets.
    Correlate {
        #[command(flatten)]
        source: JoinedSource,
        /// One target (default: both ESS/DPV ratios).
        #[arg(long)]
        target: Option<Target>,
        #[arg(long, default_value = "weather,market")]
        features: FeatureSet,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Scan { .. } => "scan",
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::Calibrate { .. } => "calibrate",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Correlate { .. } => "correlate",
        }
    }
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| format!("expected field=column, got `{s}`"))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub runtime_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Run {
    out: PathBuf,
    config: RunConfig,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Run {
    fn digest(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    fn digest_builtin(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.push(InputDigest { path: format!("builtin:{name}"), sha256: sha256_hex(bytes) });
    }

    /// Write one output file through `body`.
    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn scenarios(&mut self, path: &Path) -> Result<Vec<ReferenceScenario>> {
        if path == Path::new("builtin") {
            self.digest_builtin("reference_scenarios.csv", REFERENCE_SCENARIOS_CSV.as_bytes());
            return read_reference_scenarios(REFERENCE_SCENARIOS_CSV.as_bytes());
        }
        self.digest(path)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_reference_scenarios(file)
    }

    /// Dispatch intervals from the chosen source. Scenario tables are
    /// restricted to `kind` when given.
    fn dispatch(&mut self, src: &DispatchSource, kind: Option<AttackKind>) -> Result<Vec<DispatchInterval>> {
        if let Some(path) = &src.data {
            self.digest(path)?;
            return Ok(parse_joined_csv(path)?.into_iter().map(|r| r.dispatch).collect());
        }
        if let Some(path) = &src.dispatch {
            self.digest(path)?;
            return crate::market_data::parse_dispatch_csv(path, &DispatchSchema::canonical());
        }
        if let Some(path) = &src.scenarios {
            return Ok(self
                .scenarios(path)?
                .iter()
                .filter(|s| kind.is_none_or(|k| s.kind == k))
                .map(ReferenceScenario::interval)
                .collect());
        }
        Ok(demo_year(self.config.seed).dispatch)
    }

    fn joined(&mut self, src: &JoinedSource) -> Result<Vec<JoinedInterval>> {
        match &src.data {
            Some(path) => {
                self.digest(path)?;
                parse_joined_csv(path)
            }
            None => Ok(demo_year(self.config.seed).joined()),
        }
    }
}

/// Resolve configuration, run the command inside a sized thread pool and
/// write its manifest.
pub fn run(cli: &Cli) -> Result<RunManifest> {
    let started = Instant::now();
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let mut run = Run { out: cli.out.clone(), config, inputs: Vec::new(), outputs: Vec::new() };
    if let Some(path) = &cli.config {
        run.digest(path)?;
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| dispatch_command(&mut run, &cli.command))?;

    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        arguments: format!("{:?}", cli.command),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: run.config.resolved(),
        inputs: run.inputs,
        outputs: run.outputs,
        runtime_s: started.elapsed().as_secs_f64(),
    };
    let path = cli.out.join(format!("manifest_{}.json", manifest.command));
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn dispatch_command(run: &mut Run, command: &Command) -> Result<()> {
    match command {
        Command::Ingest { dispatch_file, weather_file, facilities, demo, renames, cloud_percent, utc_offset_h } => {
            let offset = FixedOffset::east_opt(utc_offset_h * 3600)
                .ok_or_else(|| Error::Config(format!("UTC offset {utc_offset_h} h out of range")))?;
            let mut schema = DispatchSchema::canonical().with_default_offset(offset);
            for (field, column) in renames {
                schema = schema.rename(field, column.clone())?;
            }
            let weather_schema = WeatherSchema {
                cloud_unit: if *cloud_percent { OpacityUnit::Percent } else { OpacityUnit::Fraction },
                default_offset: offset,
            };
            ingest(run, dispatch_file.as_deref(), weather_file.as_deref(), facilities.as_deref(), *demo, &schema, &weather_schema)
        }
        Command::Scan { source, direction } => scan(run, source, *direction),
        Command::Simulate { source, timestamp, kind, overshoot, step, horizon, no_emergency } => {
            if let Some(s) = step {
                run.config.sim.step_s = *s;
            }
            if let Some(h) = horizon {
                run.config.sim.horizon_s = *h;
            }
            if *no_emergency {
                run.config.sim.emergency_actions_enabled = false;
            }
            if let Some(o) = overshoot {
                run.config.overshoot = *o;
            }
            run.config.validate()?;
            simulate(run, source, timestamp, *kind)
        }
        Command::Sweep { source, kind, overshoot, top_k, vulnerable_only } => {
            if let Some(o) = overshoot {
                run.config.overshoot = *o;
            }
            run.config.validate()?;
            sweep(run, source, *kind, *top_k, *vulnerable_only)
        }
        Command::Calibrate { rows, tau_grid } => calibrate(run, rows, tau_grid.as_deref().unwrap_or(&DEFAULT_TAU_GRID_S)),
        Command::Train { source, target, features } => train(run, source, *target, *features),
        Command::Predict { source, model, target } => predict(run, source, model, *target),
        Command::Correlate { source, target, features } => correlate(run, source, *target, *features),
    }
}

fn ingest(
    run: &mut Run,
    dispatch_file: Option<&Path>,
    weather_file: Option<&Path>,
    facilities: Option<&Path>,
    demo: bool,
    schema: &DispatchSchema,
    weather_schema: &WeatherSchema,
) -> Result<()> {
    let mut rejections: Vec<(String, u64, String)> = Vec::new();
    let (dispatch, weather) = if demo {
        let year = demo_year(run.config.seed);
        (year.dispatch, year.weather)
    } else {
        let (dpath, wpath) = dispatch_file.zip(weather_file).ok_or_else(|| Error::Config("ingest needs --dispatch-file and --weather-file".into()))?;
        run.digest(dpath)?;
        run.digest(wpath)?;
        let d = read_dispatch(File::open(dpath).map_err(|e| Error::io(dpath, e))?, schema)?;
        let w = read_weather(File::open(wpath).map_err(|e| Error::io(wpath, e))?, weather_schema)?;
        for (file, rej) in [(dpath, &d.rejected), (wpath, &w.rejected)] {
            rejections.extend(rej.iter().map(|r| (file.display().to_string(), r.row, r.reason.clone())));
        }
        (d.records, w.records)
    };
    let joined = join_records(&dispatch, &weather, run.config.join_tolerance_s);
    if joined.omitted > 0 {
        eprintln!("warning: {} dispatch intervals had no weather record within {} s", joined.omitted, run.config.join_tolerance_s);
    }
    if !rejections.is_empty() {
        eprintln!("warning: {} rows rejected, see rejections.csv", rejections.len());
    }
    run.write("dispatch.csv", |w| write_dispatch_csv(w, &dispatch))?;
    run.write("weather.csv", |w| write_weather_csv(w, &weather))?;
    run.write("joined.csv", |w| write_joined_csv(w, &joined.joined))?;
    run.write("rejections.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["file", "row", "reason"])?;
        for (file, row, reason) in &rejections {
            c.write_record([file.as_str(), &row.to_string(), reason.as_str()])?;
        }
        c.flush().map_err(|e| Error::io("rejections.csv", e))
    })?;
    if let Some(path) = facilities {
        run.digest(path)?;
        let records = parse_facility_csv(path)?;
        run.write("facilities.csv", |w| write_facility_csv(w, &records))?;
    }
    println!("joined {} of {} dispatch intervals", joined.joined.len(), dispatch.len());
    Ok(())
}

fn scan(run: &mut Run, source: &DispatchSource, direction: Option<Direction>) -> Result<()> {
    let records = run.dispatch(source, None)?;
    let (points, skipped) = ratio_points(&records, run.config.dpv_floor_mw);
    run.write("ratios.csv", |w| write_ratio_csv(w, &points))?;
    let directions = match direction {
        Some(d) => vec![d],
        None => vec![Direction::Raise, Direction::Lower],
    };
    for d in directions {
        let thresholds = match d {
            Direction::Raise => run.config.raise_scan,
            Direction::Lower => run.config.lower_scan,
        };
        let windows = scan_vulnerable(&points, d, thresholds);
        println!("{}: {} vulnerable of {} intervals", d.name(), windows.len(), points.len());
        run.write(&format!("vulnerable_{}.csv", d.name()), |w| write_windows_csv(w, &windows))?;
    }
    let ratio = linear_edges(0.0, 1.0, 20);
    let share = linear_edges(0.0, 1.2, 24);
    let inertia = linear_edges(0.0, 20000.0, 20);
    let panels = [
        (RatioField::EssRaiseDpv, RatioField::RocofControl, &ratio, &inertia),
        (RatioField::EssLowerDpv, RatioField::RocofControl, &ratio, &inertia),
        (RatioField::DpvLoad, RatioField::EssRaiseDpv, &share, &ratio),
        (RatioField::DpvLoad, RatioField::EssLowerDpv, &share, &ratio),
    ];
    for (x, y, xe, ye) in panels {
        let h = joint_distribution(&points, x, y, xe, ye)?;
        run.write(&format!("joint_{}_{}.csv", x.name(), y.name()), |w| h.write_csv(w))?;
    }
    for q in Quantity::ALL {
        let profile = seasonal_profile(&records, q, DEFAULT_SLOT_MINUTES)?;
        run.write(&format!("profile_{}.csv", q.name()), |w| profile.write_csv(w))?;
    }
    if skipped > 0 {
        eprintln!("note: {skipped} intervals below the DPV floor were left out of the ratios");
    }
    Ok(())
}

fn simulate(run: &mut Run, source: &DispatchSource, timestamp: &str, kind: AttackKind) -> Result<()> {
    let records = run.dispatch(source, Some(kind))?;
    let offset = records.first().map_or(FixedOffset::east_opt(0).unwrap(), |r| *r.timestamp.offset());
    let ts = parse_timestamp(timestamp, offset).ok_or_else(|| Error::Config(format!("cannot parse timestamp `{timestamp}`")))?;
    let interval = records
        .iter()
        .find(|r| r.timestamp == ts)
        .ok_or_else(|| Error::Config(format!("no interval at {}", format_timestamp(&ts))))?;
    let scenario = build_scenario(interval, kind, run.config.overshoot)?;
    let (outcome, traj) = simulate_scenario(&scenario, interval, &run.config.sim)?;
    let tag = outcome.trajectory_ref.clone();
    run.write(&format!("trajectory_{tag}.csv"), |w| traj.write_csv(w))?;
    run.write(&format!("events_{tag}.csv"), |w| traj.write_events_csv(w))?;
    match outcome.time_to_emergency_s {
        Some(t) => println!("{tag}: {:.0} MW attack reaches {} after {t:.2} s", scenario.magnitude_mw, outcome.emergency_kind.name()),
        None => println!("{tag}: {:.0} MW attack does not reach an emergency threshold", scenario.magnitude_mw),
    }
    Ok(())
}

fn sweep(run: &mut Run, source: &DispatchSource, kind: AttackKind, top_k: Option<usize>, vulnerable_only: bool) -> Result<()> {
    let mut records = run.dispatch(source, Some(kind))?;
    if vulnerable_only {
        let (points, _) = ratio_points(&records, run.config.dpv_floor_mw);
        let d = kind.opposing();
        let thresholds = match d {
            Direction::Raise => run.config.raise_scan,
            Direction::Lower => run.config.lower_scan,
        };
        let flagged: Vec<_> = scan_vulnerable(&points, d, thresholds).into_iter().map(|w| w.timestamp).collect();
        records.retain(|r| flagged.contains(&r.timestamp));
    }
    let report = attack::sweep(&records, kind, run.config.overshoot, &run.config.sim, top_k)?;
    run.write(&format!("sweep_{}.csv", kind.name()), |w| write_sweep_csv(w, &report.ranked))?;
    run.write(&format!("skipped_{}.csv", kind.name()), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["timestamp", "reason"])?;
        for s in &report.skipped {
            c.write_record([format_timestamp(&s.timestamp), s.reason.clone()])?;
        }
        c.flush().map_err(|e| Error::io("skipped output", e))
    })?;
    println!("{}: evaluated {} intervals, skipped {}", kind.name(), report.evaluated, report.skipped.len());
    Ok(())
}

fn calibrate(run: &mut Run, rows_path: &Path, tau_grid: &[f64]) -> Result<()> {
    let scenarios = run.scenarios(rows_path)?;
    let rows = scenarios
        .iter()
        .map(|s| s.calibration_row(run.config.overshoot))
        .collect::<Result<Vec<_>>>()?;
    let cal = calibrate_inertia(&rows, tau_grid, &run.config.sim)?;
    for (a, b) in &cal.degenerate {
        eprintln!("warning: rows {} and {} have identical inputs but different observed times", a + 1, b + 1);
    }
    if cal.underdetermined {
        eprintln!("warning: load does not vary across rows; only c0 was fitted");
    }
    run.write("calibration.toml", |w| {
        w.write_all(calibration_fragment(&cal).as_bytes()).map_err(|e| Error::io("calibration.toml", e))
    })?;
    run.write("calibration_residuals.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["row", "kind", "timestamp", "observed_s", "simulated_s", "rel_error"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &cal.residuals {
            let s = &scenarios[r.index];
            c.write_record([
                (r.index + 1).to_string(),
                s.kind.name().to_string(),
                format_timestamp(&s.timestamp),
                r.observed_s.to_string(),
                opt(r.simulated_s),
                opt(r.rel_error),
            ])?;
        }
        c.flush().map_err(|e| Error::io("calibration_residuals.csv", e))
    })?;
    run.config = cal_applied(&run.config, &cal);
    println!(
        "c0 = {:.2} MWs, c1 = {:.4} s, max |relative error| = {:.1}%",
        cal.model.c0_mws,
        cal.model.c1_s,
        100.0 * cal.max_abs_rel_error().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cal_applied(config: &RunConfig, cal: &crate::freqsim::Calibration) -> RunConfig {
    let mut c = config.clone();
    c.sim = cal.apply(&c.sim);
    c
}

fn train(run: &mut Run, source: &JoinedSource, target: Target, features: FeatureSet) -> Result<()> {
    let records = filter_min_dpv(&run.joined(source)?, run.config.dpv_floor_mw);
    let samples = build_samples(&records, features, target, &run.config.sim)?;
    let (train, test) = split_dataset(&samples, run.config.train_fraction, run.config.seed)?;
    let model = train_forest(&train, &run.config.forest, run.config.seed)?;
    let eval = evaluate(&model, &test)?;
    let name = target.name();
    run.write(&format!("model_{name}.txt"), |w| model.write_to(w))?;
    run.write(&format!("importance_{name}.csv"), |w| write_importance_csv(w, &model))?;
    run.write(&format!("evaluation_{name}.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["target", "n_train", "n_test", "r_squared", "mean_abs_error"])?;
        c.write_record([
            name.to_string(),
            train.len().to_string(),
            test.len().to_string(),
            eval.r_squared.map(|v| v.to_string()).unwrap_or_default(),
            eval.mean_abs_error.to_string(),
        ])?;
        c.flush().map_err(|e| Error::io("evaluation output", e))
    })?;
    println!(
        "{name}: trained on {}, tested on {}, R2 = {}, MAE = {:.4}",
        train.len(),
        test.len(),
        eval.r_squared.map_or("n/a".to_string(), |r| format!("{r:.3}")),
        eval.mean_abs_error
    );
    Ok(())
}

fn predict(run: &mut Run, source: &JoinedSource, model_path: &Path, target: Option<Target>) -> Result<()> {
    run.digest(model_path)?;
    let file = File::open(model_path).map_err(|e| Error::io(model_path, e))?;
    let model = ForestModel::read_from(std::io::BufReader::new(file))?;
    let records = filter_min_dpv(&run.joined(source)?, run.config.dpv_floor_mw);
    let mut predicted = Vec::with_capacity(records.len());
    for r in &records {
        predicted.push(model.predict(&FeatureSet::ALL.extract(r))?);
    }
    let actual = match target {
        Some(t) => Some(records.iter().map(|r| t.value(&r.dispatch, &run.config.sim)).collect::<Result<Vec<f64>>>()?),
        None => None,
    };
    let stem = model_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    run.write(&format!("predictions_{stem}.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["timestamp", "prediction"];
        if actual.is_some() {
            header.push("actual");
        }
        c.write_record(&header)?;
        for (i, r) in records.iter().enumerate() {
            let mut row = vec![format_timestamp(&r.dispatch.timestamp), predicted[i].to_string()];
            if let Some(a) = &actual {
                row.push(a[i].to_string());
            }
            c.write_record(&row)?;
        }
        c.flush().map_err(|e| Error::io("predictions output", e))
    })?;
    if let Some(a) = &actual {
        let eval = score(a, &predicted);
        println!(
            "{} intervals, R2 = {}, MAE = {:.4}",
            eval.n,
            eval.r_squared.map_or("n/a".to_string(), |r| format!("{r:.3}")),
            eval.mean_abs_error
        );
    } else {
        println!("{} predictions", predicted.len());
    }
    Ok(())
}

fn correlate(run: &mut Run, source: &JoinedSource, target: Option<Target>, features: FeatureSet) -> Result<()> {
    let records = filter_min_dpv(&run.joined(source)?, run.config.dpv_floor_mw);
    let targets = match target {
        Some(t) => vec![t],
        None => vec![Target::EssRaiseDpv, Target::EssLowerDpv],
    };
    let rows = correlation_table(&records, features, &targets, &run.config.sim)?;
    run.write("correlations.csv", |w| write_correlation_csv(w, &rows))?;
    println!("{} correlations over {} intervals", rows.len(), records.len());
    Ok(())
}
