use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};

use super::config::{require, RunConfig};
use super::output::{Manifest, Staging};
use super::{
    AttentionArgs, CliError, Common, EvalArgs, ExplainArgs, IngestArgs, PredictArgs, SimulateArgs,
    TrainArgs,
};
use crate::explain::{attention_profile, groups_for, shapley_series, BeeswarmTable, ValueMode};
use crate::features::{encode_scaled, make_windows_strided, prepare, MinMaxScaler};
use crate::ingest::{
    attach_calendar, join_temperature, parse_grid, parse_holidays, parse_series, parse_sessions,
    parse_temperature, step, write_series, DemandGrid, HolidayCalendar, IntervalSeries,
    STEP_MINUTES,
};
use crate::model::{Checkpoint, ModelParams};
use crate::nn::Matrix;
use crate::synth::{export, generate};
use crate::train::{train_with, EpochSummary, MetricsReport, TrainError, Variant};

const SCALER_FILE: &str = "scaler.json";

/// Accepts `YYYY-MM-DD`, `YYYY-MM-DD HH:MM` or `YYYY-MM-DDTHH:MM`.
pub fn parse_time_arg(raw: &str) -> Result<NaiveDateTime, String> {
    let raw = raw.trim();
    for fmt in ["%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(|d| d.and_time(NaiveTime::MIN))
        .map_err(|_| format!("cannot parse time `{raw}`"))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load_or_default(common.config.as_deref())?.with_seed(common.seed))
}

fn load_series(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<IntervalSeries, CliError> {
    let path = require(flag.clone().or_else(|| cfg.data.series.clone()), "series")?;
    Ok(parse_series(open(&path)?)?)
}

fn to_json(value: &impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("config types serialize")
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(days) = args.days {
        cfg.synth.days = days;
    }
    if let Some(start) = args.start {
        cfg.synth.start = start;
    }
    let (series, holidays) = generate(&cfg.synth)?;
    let mut staging = Staging::new(&args.common.out)?;
    let dir = staging.path("grid.csv");
    let dir = dir.parent().expect("staged file has a parent").to_path_buf();
    export(&series, &holidays, &dir)?;
    staging.path("temperature.csv");
    staging.path("holidays.csv");
    staging.write_json("synth_config.json", &cfg.synth)?;
    staging.finish(Manifest::new("simulate", cfg.hash(), Some(cfg.synth.seed)))
}

fn floor_to_midnight(t: NaiveDateTime) -> NaiveDateTime {
    t.date().and_time(NaiveTime::MIN)
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    let paths = &mut cfg.data;
    if args.sessions.is_some() || args.grid.is_some() {
        paths.sessions = args.sessions.clone();
        paths.grid = args.grid.clone();
    }
    paths.temperature = args.temperature.clone().or(paths.temperature.take());
    paths.holidays = args.holidays.clone().or(paths.holidays.take());
    let settings = paths.time;

    let mut rejected = Vec::new();
    let grid = match (&paths.grid, &paths.sessions) {
        (Some(grid), _) => parse_grid(open(grid)?, &settings)?,
        (None, Some(sessions)) => {
            let parsed = parse_sessions(open(sessions)?, &settings)?;
            rejected = parsed.errors;
            let first = parsed.records.iter().map(|r| r.start).min();
            let last = parsed.records.iter().map(|r| r.charge_end).max();
            let (Some(first), Some(last)) = (first, last) else {
                return Err(CliError::new("ingest", "no valid sessions"));
            };
            let origin = floor_to_midnight(first);
            let end = floor_to_midnight(last) + Duration::days(1);
            let n = ((end - origin).num_minutes() / STEP_MINUTES) as usize;
            DemandGrid::from_sessions(&parsed.records, origin, n)?
        }
        (None, None) => return Err(CliError::new("usage", "ingest needs --sessions or --grid")),
    };
    let temps = parse_temperature(open(&require(paths.temperature.clone(), "temperature")?)?, &settings)?;
    let holidays = match &paths.holidays {
        Some(p) => parse_holidays(open(p)?)?,
        None => HolidayCalendar::default(),
    };
    let series = attach_calendar(join_temperature(&grid, &temps)?, &holidays);

    let mut staging = Staging::new(&args.common.out)?;
    write_series(&series, staging.create("series.csv")?)?;
    let mut w = csv::Writer::from_writer(staging.create("rejected_rows.csv")?);
    w.write_record(["line", "message"])?;
    for r in &rejected {
        w.write_record([r.line.to_string(), r.message.clone()])?;
    }
    w.flush().map_err(|e| CliError::new("io", e.to_string()))?;
    drop(w);
    staging.finish(Manifest::new("ingest", cfg.hash(), cfg.seed))
}

/// Row per (variant, seed): every column is deterministic given the inputs.
pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], sink: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "variant",
        "seed",
        "train_windows",
        "test_windows",
        "train_mse",
        "test_mse",
        "epoch_losses",
    ])?;
    for r in reports {
        let losses: Vec<String> = r.epoch_losses.iter().map(f64::to_string).collect();
        w.write_record([
            r.variant.label().to_string(),
            r.seed.to_string(),
            r.train_windows.to_string(),
            r.test_windows.to_string(),
            r.train_mse.to_string(),
            r.test_mse.to_string(),
            losses.join(";"),
        ])?;
    }
    w.flush().map_err(|e| CliError::new("io", e.to_string()))
}

/// Seed-mean test MSE and wall time per variant, in `variants` order.
pub fn write_comparison_csv<W: Write>(
    reports: &[MetricsReport],
    variants: &[Variant],
    sink: W,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["variant", "test_mse", "wall_time_s"])?;
    for v in variants {
        let runs: Vec<&MetricsReport> = reports.iter().filter(|r| r.variant == *v).collect();
        if runs.is_empty() {
            continue;
        }
        let n = runs.len() as f64;
        let mse = runs.iter().map(|r| r.test_mse).sum::<f64>() / n;
        let secs = runs.iter().map(|r| r.wall_time_secs).sum::<f64>() / n;
        w.write_record([v.label().to_string(), mse.to_string(), format!("{secs:.3}")])?;
    }
    w.flush().map_err(|e| CliError::new("io", e.to_string()))
}

fn checkpoint_for(
    params: &ModelParams,
    cfg: &RunConfig,
    epoch: Option<usize>,
) -> Checkpoint {
    let schema = cfg.feature_schema();
    let columns = cfg.train.variant.input_columns(schema.width());
    Checkpoint::new(
        params,
        schema,
        columns,
        serde_json::json!({ "train": to_json(&cfg.train), "prepare": to_json(&cfg.prepare) }),
        SCALER_FILE,
        cfg.train.seed,
        epoch,
    )
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(v) = args.variant {
        cfg.train.variant = v;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.shuffle |= args.shuffle;
    let series = load_series(&args.series, &cfg)?;
    let prepared = prepare(&series, &cfg.feature_schema(), &cfg.prepare)?;

    let mut staging = Staging::new(&args.common.out)?;
    staging.write_json(SCALER_FILE, &prepared.scaler)?;
    let (params, report) = train_with(&prepared.split, &cfg.train, |e: &EpochSummary, p| {
        let ck = checkpoint_for(p, &cfg, Some(e.epoch));
        staging
            .write_json(&format!("checkpoint_epoch_{:03}.json", e.epoch), &ck)
            .map_err(|err| TrainError::Callback(err.message))
    })?;
    staging.write_json("checkpoint.json", &checkpoint_for(&params, &cfg, None))?;
    staging.write_json("metrics.json", &report)?;
    write_metrics_csv(std::slice::from_ref(&report), staging.create("metrics.csv")?)?;
    staging.finish(Manifest::new("train", cfg.hash(), Some(cfg.train.seed)))
}

/// Trains every configured variant for every seed, in seed-major order.
pub fn eval_runs(
    series: &IntervalSeries,
    cfg: &RunConfig,
) -> Result<Vec<(ModelParams, MetricsReport)>, CliError> {
    let prepared = prepare(series, &cfg.feature_schema(), &cfg.prepare)?;
    let mut reports = Vec::new();
    for seed in cfg.seeds() {
        for variant in cfg.variants() {
            let tc = crate::train::TrainConfig {
                variant,
                seed,
                ..cfg.train
            };
            reports.push(train_with(&prepared.split, &tc, |_, _| Ok(()))?);
        }
    }
    Ok(reports)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    if !args.seeds.is_empty() {
        cfg.eval_seeds = args.seeds.clone();
    }
    let series = load_series(&args.series, &cfg)?;
    let reports: Vec<MetricsReport> = eval_runs(&series, &cfg)?.into_iter().map(|(_, r)| r).collect();
    let mut staging = Staging::new(&args.common.out)?;
    write_comparison_csv(&reports, &cfg.variants(), staging.create("comparison.csv")?)?;
    write_metrics_csv(&reports, staging.create("metrics.csv")?)?;
    staging.write_json("metrics.json", &reports)?;
    staging.finish(Manifest::new("eval", cfg.hash(), Some(cfg.train.seed)))
}

/// A checkpoint with its scaler, ready to score a series.
struct LoadedModel {
    checkpoint: Checkpoint,
    params: ModelParams,
    scaler: MinMaxScaler,
    clamp: crate::features::ClampBounds,
}

impl LoadedModel {
    fn load(path: &Path) -> Result<Self, CliError> {
        let checkpoint: Checkpoint = serde_json::from_reader(open(path)?)?;
        let params = checkpoint.to_params()?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let scaler: MinMaxScaler = serde_json::from_reader(open(&dir.join(&checkpoint.scaler))?)?;
        let clamp = checkpoint
            .hyperparams
            .get("prepare")
            .and_then(|p| serde_json::from_value::<crate::features::PrepareOptions>(p.clone()).ok())
            .map(|p| p.clamp)
            .unwrap_or_default();
        Ok(Self {
            checkpoint,
            params,
            scaler,
            clamp,
        })
    }

    /// Scaled series restricted to the model's input columns.
    fn encode(&self, series: &IntervalSeries) -> Result<Matrix, CliError> {
        let full = encode_scaled(series, &self.checkpoint.schema, &self.scaler, self.clamp)?;
        Ok(full.select_columns(&self.checkpoint.input_columns))
    }

    fn lookback(&self) -> usize {
        self.params.config.lookback
    }

    fn window<'a>(&self, data: &'a Matrix, start: usize) -> Result<&'a [f64], CliError> {
        let (p, n) = (self.lookback(), data.cols());
        if start + p > data.rows() {
            return Err(CliError::new(
                "usage",
                format!("window at row {start} needs {p} rows but the series has {}", data.rows()),
            ));
        }
        Ok(&data.as_slice()[start * n..(start + p) * n])
    }
}

/// Row of `t` on the series grid, allowing one past the end.
fn grid_row(series: &IntervalSeries, t: NaiveDateTime) -> Result<usize, CliError> {
    let minutes = (t - series.origin()).num_minutes();
    let aligned = t >= series.origin() && minutes % STEP_MINUTES == 0 && (t - series.origin()).num_seconds() % 60 == 0;
    let row = (minutes / STEP_MINUTES) as usize;
    if !aligned || row > series.len() {
        return Err(CliError::new(
            "usage",
            format!("{t} is not a 15-minute step within the series"),
        ));
    }
    Ok(row)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(&args.common)?;
    let model = LoadedModel::load(&args.checkpoint)?;
    let series = load_series(&args.series, &cfg)?;
    let data = model.encode(&series)?;
    let p = model.lookback();
    let at = match args.at {
        Some(t) => grid_row(&series, t)?,
        None => series.len(),
    };
    if at < p {
        return Err(CliError::new("usage", format!("forecast start needs {p} rows of history")));
    }
    let scaled = model.params.predict(model.window(&data, at - p)?)?;
    let demand = model.scaler.inverse_transform(0, &scaled)?;

    let mut staging = Staging::new(&args.common.out)?;
    let mut w = csv::Writer::from_writer(staging.create("forecast.csv")?);
    w.write_record(["timestamp", "scaled", "demand", "actual"])?;
    for (j, (s, d)) in scaled.iter().zip(&demand).enumerate() {
        let row = at + j;
        let actual = series.demand().get(row).map(u32::to_string).unwrap_or_default();
        let time = series.origin() + step() * row as i32;
        w.write_record([
            time.format(crate::ingest::TIMESTAMP_FORMAT).to_string(),
            s.to_string(),
            d.to_string(),
            actual,
        ])?;
    }
    w.flush().map_err(|e| CliError::new("io", e.to_string()))?;
    drop(w);
    staging.finish(Manifest::new("predict", cfg.hash(), Some(model.checkpoint.seed)))
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(&args.common)?;
    let model = LoadedModel::load(&args.checkpoint)?;
    let series = load_series(&args.series, &cfg)?;
    let data = model.encode(&series)?;
    let groups = groups_for(&model.checkpoint.schema, &model.checkpoint.input_columns);
    let mode = args.step.map_or(ValueMode::Mean, ValueMode::Step);

    let rows = |times: &[NaiveDateTime]| -> Result<Vec<usize>, CliError> {
        times.iter().map(|t| grid_row(&series, *t)).collect()
    };
    let test_rows = rows(&args.test)?;
    let bg_rows = rows(&args.background)?;
    let instances: Vec<(usize, &[f64])> = test_rows
        .iter()
        .map(|&r| Ok((r, model.window(&data, r)?)))
        .collect::<Result<_, CliError>>()?;
    let backgrounds: Vec<&[f64]> = bg_rows
        .iter()
        .map(|&r| model.window(&data, r))
        .collect::<Result<_, CliError>>()?;
    let (_, mut reports) = shapley_series(&model.params, &instances, &backgrounds, &groups, mode)?;
    if let [single] = bg_rows.as_slice() {
        reports.iter_mut().for_each(|r| r.background_id = Some(*single));
    }

    let mut staging = Staging::new(&args.common.out)?;
    BeeswarmTable::from_reports(&reports, &groups).write_csv(staging.create("shap.csv")?)?;
    staging.write_json("shap_reports.json", &reports)?;
    staging.finish(Manifest::new("explain", cfg.hash(), Some(model.checkpoint.seed)))
}

pub fn cmd_attention(args: &AttentionArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(&args.common)?;
    let model = LoadedModel::load(&args.checkpoint)?;
    let series = load_series(&args.series, &cfg)?;
    let data = model.encode(&series)?;
    let windows = make_windows_strided(data, model.lookback(), 1, args.stride.max(1))?
        .with_origin(series.origin());
    let profile = attention_profile(&model.params, &windows)?;
    let mut staging = Staging::new(&args.common.out)?;
    profile.write_csv(staging.create("attention_hourly.csv")?)?;
    staging.finish(Manifest::new("attention", cfg.hash(), Some(model.checkpoint.seed)))
}
