//! File-level front end: config ingestion, the run/tune/compare commands and
//! every artifact they write.
//!
//! Exit codes: 0 success, 2 bad config or arguments, 3 simulation failure,
//! 4 output I/O failure.

use std::fs;
use std::path::{Path, PathBuf};

use hcbf::filters::{FilterMode, FilterStatus};
use hcbf::parallel::Execution;
use hcbf::sim::{builtin_scenario, run_scenario, ScenarioConfig, SimError, SimRun, SimSummary, SimTrace};
use hcbf::tuner::{tune, TuneConfig, TuneReport};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HCBF_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "hcbf-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Simulation(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Config file

/// Raw config file. `[scenario]` may name a `builtin` and override any of its
/// fields; `[tune]` overrides the default tune settings.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub scenario: Option<toml::Table>,
    #[serde(default)]
    pub tune: Option<toml::Table>,
    /// File text, kept to point field errors at a line.
    #[serde(skip)]
    pub source: Option<String>,
}

/// Output file for a scenario that `run` reads back unchanged.
#[derive(Debug, Clone, Serialize)]
struct ScenarioFile<'a> {
    scenario: &'a ScenarioConfig,
}

pub fn parse_config(text: &str) -> Result<ConfigFile, CliError> {
    let mut config: ConfigFile =
        toml::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
    config.source = Some(text.to_string());
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Field errors come from the merged table and carry no position; find the
/// first line assigning the offending key instead.
fn field_error(config: &ConfigFile, block: &str, err: toml::de::Error) -> CliError {
    let msg = err.to_string();
    let key = msg
        .split_once("in `")
        .and_then(|(_, rest)| rest.split_once('`'))
        .map(|(path, _)| {
            path.rsplit('.')
                .next()
                .unwrap_or(path)
                .split('[')
                .next()
                .unwrap_or(path)
                .to_string()
        });
    let line = key.as_deref().zip(config.source.as_deref()).and_then(|(key, text)| {
        text.lines().position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
    });
    let msg = msg.trim_end().replace('\n', " ");
    match line {
        Some(i) => CliError::Config(format!("{block}: line {}: {msg}", i + 1)),
        None => CliError::Config(format!("{block}: {msg}")),
    }
}

/// `over` laid onto `base`, recursing into tables; arrays and scalars replace.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table, CliError> {
    toml::Table::try_from(value).map_err(|e| CliError::Config(format!("cannot encode config: {e}")))
}

/// Scenario from the config's `[scenario]` block, with `builtin` (or the
/// command-line name, which wins) as the starting point.
pub fn resolve_scenario(
    config: &ConfigFile,
    scenario_name: Option<&str>,
    mode: Option<FilterMode>,
) -> Result<ScenarioConfig, CliError> {
    let mut block = config.scenario.clone().unwrap_or_default();
    let builtin = match block.remove("builtin") {
        Some(toml::Value::String(s)) => Some(s),
        Some(other) => {
            return Err(CliError::Config(format!(
                "scenario.builtin must be a string, got {other}"
            )))
        }
        None => None,
    };
    let name = scenario_name.map(str::to_string).or(builtin);
    let mut table = match &name {
        Some(n) => to_table(&builtin_scenario(n).map_err(|e| CliError::Config(e.to_string()))?)?,
        None if block.is_empty() => {
            return Err(CliError::Config(
                "no scenario: pass --scenario or give a [scenario] block".into(),
            ))
        }
        None => toml::Table::new(),
    };
    merge(&mut table, &block);
    let mut scenario: ScenarioConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| field_error(config, "scenario", e))?;
    if let Some(m) = mode {
        scenario.mode = m;
    }
    scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(scenario)
}

pub fn resolve_tune(config: &ConfigFile, scenario: ScenarioConfig) -> Result<TuneConfig, CliError> {
    let mut table = to_table(&TuneConfig::with_defaults(scenario.clone()))?;
    table.remove("scenario");
    if let Some(block) = &config.tune {
        if block.contains_key("scenario") {
            return Err(CliError::Config(
                "tune.scenario is not allowed; use the [scenario] block".into(),
            ));
        }
        merge(&mut table, block);
    }
    table.insert("scenario".into(), toml::Value::Table(to_table(&scenario)?));
    let cfg: TuneConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| field_error(config, "tune", e))?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn scenario_to_toml(scenario: &ScenarioConfig) -> Result<String, CliError> {
    toml::to_string(&ScenarioFile { scenario }).map_err(|e| CliError::Config(format!("cannot encode scenario: {e}")))
}

pub fn parse_modes(list: &str) -> Result<Vec<FilterMode>, CliError> {
    let modes = list
        .split(',')
        .map(|m| {
            m.trim()
                .parse::<FilterMode>()
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if modes.len() < 2 {
        return Err(CliError::Config(format!(
            "compare needs at least two modes, got {}",
            modes.len()
        )));
    }
    Ok(modes)
}

// ---------------------------------------------------------------------------
// Number formatting and CSV

/// Nine significant digits, independent of locale; plain notation for
/// moderate magnitudes and exponent form otherwise.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_fraction(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_fraction(mantissa.to_string()))
    }
}

fn trim_fraction(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

fn status_name(s: FilterStatus) -> &'static str {
    match s {
        FilterStatus::Ok => "ok",
        FilterStatus::StrictInfeasible => "strict_infeasible",
    }
}

/// Header of trace.csv for `relaxed` relaxation columns and `barriers` barrier
/// columns.
pub fn trace_header(relaxed: usize, barriers: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "t", "px", "py", "vx", "vy", "pdx", "pdy", "ustar_x", "ustar_y", "ux", "uy",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=relaxed).map(|k| format!("delta_{k}")));
    h.extend((1..=barriers).map(|k| format!("h{k}")));
    h.push("status".into());
    h.push("heading".into());
    h
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn trace_csv(trace: &SimTrace) -> Vec<u8> {
    let barriers = trace.records.first().map_or(0, |r| r.h.len());
    let header = trace_header(trace.relaxed_count, barriers);
    csv_bytes(
        &header,
        trace.records.iter().map(|r| {
            let mut row: Vec<String> = [
                r.t, r.x.p.x, r.x.p.y, r.x.v.x, r.x.v.y, r.pd.x, r.pd.y, r.u_star.x, r.u_star.y, r.u.x, r.u.y,
            ]
            .iter()
            .map(|v| fmt_sig(*v))
            .collect();
            row.extend(r.delta.iter().map(|v| fmt_sig(*v)));
            row.extend(r.h.iter().map(|v| fmt_sig(*v)));
            row.push(status_name(r.status).into());
            row.push(fmt_sig(r.heading));
            row
        }),
    )
}

fn plot_files(trace: &SimTrace) -> Vec<(String, Vec<u8>)> {
    let f = |v: f64| fmt_sig(v);
    let trajectory = csv_bytes(
        &["t", "px", "py", "pdx", "pdy", "heading"].map(String::from),
        trace
            .records
            .iter()
            .map(|r| vec![f(r.t), f(r.x.p.x), f(r.x.p.y), f(r.pd.x), f(r.pd.y), f(r.heading)]),
    );
    let m = trace.records.first().map_or(0, |r| r.h.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|k| format!("h{k}")));
    header.extend((1..=trace.relaxed_count).map(|k| format!("delta_{k}")));
    let barriers = csv_bytes(
        &header,
        trace.records.iter().map(|r| {
            let mut row = vec![f(r.t)];
            row.extend(r.h.iter().map(|v| f(*v)));
            row.extend(r.delta.iter().map(|v| f(*v)));
            row
        }),
    );
    let error = csv_bytes(
        &["t", "error", "position_error"].map(String::from),
        trace
            .records
            .iter()
            .map(|r| vec![f(r.t), f(r.tracking_error()), f((r.pd - r.x.p).norm())]),
    );
    vec![
        ("plotdata/trajectory.csv".into(), trajectory),
        ("plotdata/barriers.csv".into(), barriers),
        ("plotdata/error.csv".into(), error),
    ]
}

// ---------------------------------------------------------------------------
// Output directory and manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub resolved: serde_json::Value,
    pub files: Vec<ManifestEntry>,
}

/// Collects artifacts in memory so a failed command leaves no half-written set.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Write every file plus manifest.json under `dir`.
    pub fn write(
        self,
        dir: &Path,
        command: &str,
        config: Option<&Path>,
        resolved: serde_json::Value,
    ) -> Result<RunManifest, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut entries = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&path, bytes).map_err(io_err(&path))?;
            entries.push(ManifestEntry {
                path: name.clone(),
                sha256: hex::encode(Sha256::digest(bytes)),
                bytes: bytes.len(),
            });
        }
        let manifest = RunManifest {
            command: command.into(),
            config_path: config.map(|p| p.display().to_string()),
            output_dir: dir.display().to_string(),
            resolved,
            files: entries,
        };
        let path = dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

/// `--out`, else the environment variable, else `hcbf-out`.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| {
            std::env::var_os(OUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn json_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable config")
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: FilterMode,
    pub steps: usize,
    pub dt: f64,
    pub final_error: f64,
    pub mean_error: f64,
    /// Keyed h1, h2, … in scenario order.
    pub min_h: serde_json::Map<String, serde_json::Value>,
    pub integrated_violation: serde_json::Map<String, serde_json::Value>,
    pub infeasible_steps: usize,
    pub hat_fallbacks: usize,
    pub cost: f64,
    pub cost_weights: hcbf::tuner::CostWeights,
}

fn keyed(values: &[f64]) -> serde_json::Map<String, serde_json::Value> {
    values
        .iter()
        .enumerate()
        .map(|(k, v)| (format!("h{}", k + 1), json_value(v)))
        .collect()
}

impl RunReport {
    fn new(scenario: &ScenarioConfig, s: &SimSummary) -> Self {
        Self {
            scenario: scenario.name.clone(),
            mode: scenario.mode,
            steps: scenario.steps(),
            dt: scenario.dt,
            final_error: s.final_error,
            mean_error: s.mean_error,
            min_h: keyed(&s.min_h),
            integrated_violation: keyed(&s.integrated_violation),
            infeasible_steps: s.infeasible_steps,
            hat_fallbacks: s.hat_fallbacks,
            cost: s.cost,
            cost_weights: scenario.cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeComparison {
    pub mode: FilterMode,
    /// Integrated violation of each relaxed barrier, keyed by barrier name.
    pub relaxed_violation: serde_json::Map<String, serde_json::Value>,
    pub final_error: f64,
    pub mean_error: f64,
    pub summary: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub modes: Vec<ModeComparison>,
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub mode: Option<FilterMode>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct TuneArgs {
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub out: PathBuf,
    pub serial: bool,
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub modes: Vec<FilterMode>,
    pub out: PathBuf,
}

fn load(config: Option<&Path>) -> Result<ConfigFile, CliError> {
    config.map_or_else(|| Ok(ConfigFile::default()), read_config)
}

fn simulate(scenario: &ScenarioConfig) -> Result<SimRun, (CliError, Option<Box<SimTrace>>)> {
    run_scenario(scenario).map_err(|e| match e {
        SimError::NumericalBlowup { t, partial } => {
            (CliError::Simulation(format!("numerical blowup at t = {t}")), partial)
        }
        SimError::InvalidScenario(_) | SimError::UnknownScenario(_) => (CliError::Config(e.to_string()), None),
        other => (CliError::Simulation(other.to_string()), None),
    })
}

/// Simulate one scenario and write trace.csv, summary.json and plot data.
pub fn cmd_run(args: &RunArgs) -> Result<RunManifest, CliError> {
    let config = load(args.config.as_deref())?;
    let scenario = resolve_scenario(&config, args.scenario.as_deref(), args.mode)?;
    let resolved = json_value(&scenario);
    let run = match simulate(&scenario) {
        Ok(run) => run,
        Err((err, partial)) => {
            if let Some(trace) = partial {
                let mut out = Artifacts::default();
                out.add("trace.csv", trace_csv(&trace));
                out.write(&args.out, "run", args.config.as_deref(), resolved)?;
            }
            return Err(err);
        }
    };
    let mut out = Artifacts::default();
    out.add("trace.csv", trace_csv(&run.trace));
    out.add_json("summary.json", &RunReport::new(&scenario, &run.summary));
    for (name, bytes) in plot_files(&run.trace) {
        out.add(name, bytes);
    }
    out.write(&args.out, "run", args.config.as_deref(), resolved)
}

fn costmap_csv(report: &TuneReport) -> Vec<u8> {
    let header = ["set", "index", "gamma0", "delta_gamma", "cost", "offset_cost"].map(String::from);
    let grid = report
        .cost_map
        .iter()
        .flat_map(|m| m.points.iter().map(|p| ("grid", p)));
    let rows = report
        .samples
        .iter()
        .map(|p| ("sample", p))
        .chain(grid)
        .map(|(set, p)| {
            vec![
                set.to_string(),
                p.index.to_string(),
                fmt_sig(p.gamma0),
                fmt_sig(p.delta_gamma),
                fmt_sig(p.cost),
                fmt_sig(p.offset_cost),
            ]
        });
    csv_bytes(&header, rows)
}

/// Sample (γ₀, Δγ), simulate each, and write the report, cost map and the
/// best scenario.
pub fn cmd_tune(args: &TuneArgs) -> Result<(RunManifest, TuneReport), CliError> {
    let config = load(args.config.as_deref())?;
    let scenario = resolve_scenario(&config, args.scenario.as_deref(), None)?;
    let cfg = resolve_tune(&config, scenario)?;
    let execution = if args.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    let report = tune(&cfg, execution).map_err(|e| CliError::Config(e.to_string()))?;
    if !report.best_cost.is_finite() {
        return Err(CliError::Simulation("every tuning sample failed".into()));
    }
    let best = cfg.scenario.with_schedule(report.best.0, report.best.1);
    let mut out = Artifacts::default();
    out.add_json("tune_report.json", &report);
    out.add("costmap.csv", costmap_csv(&report));
    out.add("best_scenario.toml", scenario_to_toml(&best)?.into_bytes());
    let manifest = out.write(&args.out, "tune", args.config.as_deref(), json_value(&cfg))?;
    Ok((manifest, report))
}

/// Run the same scenario under each mode and write comparison.json plus
/// overlaid plot data.
pub fn cmd_compare(args: &CompareArgs) -> Result<(RunManifest, ComparisonReport), CliError> {
    if args.modes.len() < 2 {
        return Err(CliError::Config("compare needs at least two modes".into()));
    }
    let config = load(args.config.as_deref())?;
    let base = resolve_scenario(&config, args.scenario.as_deref(), None)?;
    let mut runs = Vec::new();
    for &mode in &args.modes {
        let scenario = base.with_mode(mode);
        scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let run = simulate(&scenario).map_err(|(e, _)| e)?;
        runs.push((scenario, run));
    }
    let modes = runs
        .iter()
        .map(|(s, run)| ModeComparison {
            mode: s.mode,
            relaxed_violation: s
                .relaxed
                .iter()
                .map(|&k| (format!("h{}", k + 1), json_value(&run.summary.integrated_violation[k])))
                .collect(),
            final_error: run.summary.final_error,
            mean_error: run.summary.mean_error,
            summary: RunReport::new(s, &run.summary),
        })
        .collect();
    let report = ComparisonReport {
        scenario: base.name.clone(),
        modes,
    };

    let mut header = vec!["t".to_string()];
    for (i, (s, _)) in runs.iter().enumerate() {
        header.push(format!("px_{i}_{}", s.mode));
        header.push(format!("py_{i}_{}", s.mode));
        header.push(format!("error_{i}_{}", s.mode));
        header.extend((0..base.barriers.len()).map(|k| format!("h{}_{i}_{}", k + 1, s.mode)));
    }
    let first = &runs[0].1.trace;
    let rows = (0..first.records.len()).map(|j| {
        let mut row = vec![fmt_sig(first.records[j].t)];
        for (_, run) in &runs {
            let r = &run.trace.records[j];
            row.push(fmt_sig(r.x.p.x));
            row.push(fmt_sig(r.x.p.y));
            row.push(fmt_sig(r.tracking_error()));
            row.extend(r.h.iter().map(|v| fmt_sig(*v)));
        }
        row
    });

    let mut out = Artifacts::default();
    out.add_json("comparison.json", &report);
    out.add("plotdata/overlay.csv", csv_bytes(&header, rows));
    let manifest = out.write(&args.out, "compare", args.config.as_deref(), json_value(&base))?;
    Ok((manifest, report))
}
