//! Experiment orchestration: convergence traces, beampatterns, sum-rate
//! sweeps over the SCNR threshold and raw Monte Carlo tables, all as CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{build_radar_environment, sample_channels, ChannelError};
use crate::optimizer::{audit_solution, run_scheme, BeamformingSolution, OptimizerError, SchemeId};
use crate::scenario::{default_config, sample_geometry, ConfigError, RngStream, SystemConfig};
use crate::sensing::{beampattern, default_theta_grid, SensingError};

/// Version string written into every output file.
pub const ARTIFACT_VERSION: &str = concat!("isac-d2d ", env!("CARGO_PKG_VERSION"));

pub const CONVERGENCE_COLUMNS: [&str; 3] = ["scheme", "iteration", "objective_bps_hz"];
pub const BEAMPATTERN_COLUMNS: [&str; 4] = ["scheme", "eta_db", "theta_rad", "power_db"];
pub const SWEEP_COLUMNS: [&str; 6] = ["scheme", "eta_db", "mean_rate", "std_rate", "trials", "infeasible_rate"];
pub const GAIN_COLUMNS: [&str; 4] = ["eta_db", "scheme", "baseline", "relative_gain"];
pub const TRIAL_COLUMNS: [&str; 11] = [
    "scheme",
    "eta_db",
    "trial",
    "seed",
    "feasible",
    "sum_rate",
    "extracted_rate",
    "scnr_db",
    "iterations",
    "converged",
    "audit_failures",
];

/// Scheme pairs reported in `gains.csv` as `(scheme, baseline)`.
pub const GAIN_PAIRS: [(SchemeId, SchemeId); 3] = [
    (SchemeId::Proposed, SchemeId::FixedD2d),
    (SchemeId::Proposed, SchemeId::ZeroForcing),
    (SchemeId::CommunicationOnly, SchemeId::Proposed),
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("{scheme} infeasible: {source}")]
    Infeasible { scheme: SchemeId, source: OptimizerError },
    #[error("{scheme}: {source}")]
    Optimizer { scheme: SchemeId, source: OptimizerError },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error("aggregation: {0}")]
    ColumnMismatch(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
    Beampattern,
    Montecarlo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Beampattern => "beampattern",
            Command::Montecarlo => "montecarlo",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub command: Command,
    /// JSON configuration; `None` uses [`default_config`].
    pub config_path: Option<PathBuf>,
    pub schemes: Vec<SchemeId>,
    /// SCNR thresholds, dB. Empty means the configured threshold.
    pub eta_grid: Vec<f64>,
    pub trials: usize,
    pub seed_base: u64,
    /// Where CSVs are written; `None` keeps results in memory only.
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(command: Command) -> Self {
        ExperimentSpec {
            command,
            config_path: None,
            schemes: default_schemes(command),
            eta_grid: match command {
                Command::Sweep => default_eta_grid(),
                _ => Vec::new(),
            },
            trials: 1,
            seed_base: 1,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Spec("trials must be at least 1".into()));
        }
        if self.command == Command::Sweep && self.eta_grid.is_empty() {
            return Err(HarnessError::Spec("sweep needs a nonempty eta grid".into()));
        }
        if self.schemes.is_empty() {
            return Err(HarnessError::Spec("no schemes selected".into()));
        }
        if self.eta_grid.iter().any(|e| !e.is_finite()) {
            return Err(HarnessError::Spec("eta grid has non-finite values".into()));
        }
        Ok(())
    }
}

pub fn default_schemes(command: Command) -> Vec<SchemeId> {
    match command {
        Command::Run => vec![SchemeId::Proposed, SchemeId::ZeroForcing],
        Command::Beampattern => vec![SchemeId::Proposed, SchemeId::SensingOnly],
        Command::Sweep | Command::Montecarlo => vec![
            SchemeId::CommunicationOnly,
            SchemeId::Proposed,
            SchemeId::ZeroForcing,
            SchemeId::FixedD2d,
        ],
    }
}

/// 28..=38 dB in 1 dB steps.
pub fn default_eta_grid() -> Vec<f64> {
    (28..=38).map(f64::from).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma list.
pub fn parse_eta_grid(text: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = |m: &str| HarnessError::Spec(format!("eta grid '{text}': {m}"));
    let num = |s: &str| f64::from_str(s.trim()).map_err(|_| bad("not a number"));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.len() {
        1 => text.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        3 => {
            let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || stop < start {
                return Err(bad("need step > 0 and stop >= start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + step * i as f64).collect()
        }
        _ => return Err(bad("expected start:stop:step or a comma list")),
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(bad("empty or non-finite"));
    }
    Ok(grid)
}

/// Parses a comma-separated scheme list.
pub fn parse_schemes(text: &str) -> Result<Vec<SchemeId>, HarnessError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<SchemeId>().map_err(|e| HarnessError::Spec(e.to_string())))
        .collect()
}

/// One (scheme, eta, trial) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub scheme: SchemeId,
    pub eta_db: f64,
    pub trial: usize,
    pub seed: u64,
    pub feasible: bool,
    pub sum_rate: Option<f64>,
    pub extracted_rate: Option<f64>,
    pub scnr_db: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub audit_failures: usize,
}

/// A trial record together with the solution that produced it.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub solution: Option<BeamformingSolution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: SchemeId,
    pub eta_db: f64,
    /// Mean over feasible trials; absent when none is feasible.
    pub mean_rate: Option<f64>,
    /// Population standard deviation over feasible trials.
    pub std_rate: Option<f64>,
    pub trials: usize,
    pub infeasible_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub eta_db: f64,
    pub scheme: SchemeId,
    pub baseline: SchemeId,
    /// `mean(scheme) / mean(baseline) - 1`.
    pub relative_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub gains: Vec<GainRow>,
}

impl Summary {
    pub fn get(&self, scheme: SchemeId, eta_db: f64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.eta_db == eta_db)
    }

    pub fn gain(&self, scheme: SchemeId, baseline: SchemeId, eta_db: f64) -> Option<f64> {
        self.gains
            .iter()
            .find(|g| g.scheme == scheme && g.baseline == baseline && g.eta_db == eta_db)
            .and_then(|g| g.relative_gain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub config_json: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub command: Command,
}

/// A CSV table as written: header plus string rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metadata: Metadata,
    pub tables: Vec<Table>,
    pub outcomes: Vec<TrialOutcome>,
    pub summary: Option<Summary>,
    /// Per-scheme traces for `run`.
    pub convergence: Vec<(SchemeId, Vec<f64>)>,
}

impl ExperimentResult {
    pub fn table(&self, file_name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file_name == file_name)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn trial_seed(seed_base: u64, trial: usize) -> u64 {
    seed_base.wrapping_add(trial as u64)
}

fn trial_config(base: &SystemConfig, seed: u64, eta_db: f64) -> SystemConfig {
    let mut cfg = base.with_scnr_threshold(eta_db);
    cfg.rng_seed = seed;
    cfg
}

/// Runs every scheme at every threshold on one channel draw.
///
/// Communication-only and sensing-only ignore the threshold, so they are
/// solved once and replicated across the grid.
pub fn run_trial(
    base: &SystemConfig,
    trial: usize,
    seed_base: u64,
    eta_grid: &[f64],
    schemes: &[SchemeId],
) -> Result<Vec<TrialOutcome>, HarnessError> {
    let seed = trial_seed(seed_base, trial);
    let geo = sample_geometry(base, &RngStream::new(seed, "geometry"));
    let ch = sample_channels(base, &geo, &RngStream::new(seed, "fading"))?;
    let env = build_radar_environment(base);
    let mut shared: BTreeMap<SchemeId, Result<BeamformingSolution, String>> = BTreeMap::new();
    let mut out = Vec::with_capacity(eta_grid.len() * schemes.len());
    for &eta in eta_grid {
        let cfg = trial_config(base, seed, eta);
        for &scheme in schemes {
            let result = if scheme.enforces_sensing() {
                run_scheme(&ch, &env, &cfg, scheme)
            } else {
                let entry = shared
                    .entry(scheme)
                    .or_insert_with(|| run_scheme(&ch, &env, &cfg, scheme).map_err(|e| e.to_string()));
                match entry {
                    Ok(sol) => Ok(sol.clone()),
                    Err(msg) => return Err(HarnessError::Spec(format!("{scheme} failed: {msg}"))),
                }
            };
            let outcome = match result {
                Ok(sol) => {
                    let audit = audit_solution(&ch, &cfg, &sol).len();
                    TrialOutcome {
                        record: TrialRecord {
                            scheme,
                            eta_db: eta,
                            trial,
                            seed,
                            feasible: true,
                            sum_rate: Some(sol.relaxed_sum_rate),
                            extracted_rate: Some(sol.extracted_sum_rate),
                            scnr_db: Some(sol.achieved_scnr),
                            iterations: sol.iterations_used,
                            converged: sol.converged,
                            audit_failures: audit,
                        },
                        solution: Some(sol),
                    }
                }
                Err(OptimizerError::Infeasible { .. }) => TrialOutcome {
                    record: TrialRecord {
                        scheme,
                        eta_db: eta,
                        trial,
                        seed,
                        feasible: false,
                        sum_rate: None,
                        extracted_rate: None,
                        scnr_db: None,
                        iterations: 0,
                        converged: false,
                        audit_failures: 0,
                    },
                    solution: None,
                },
                Err(source) => return Err(HarnessError::Optimizer { scheme, source }),
            };
            out.push(outcome);
        }
    }
    Ok(out)
}

/// Runs `trials` independent draws on the rayon pool; output order is the
/// trial order regardless of completion order.
pub fn run_trials(
    base: &SystemConfig,
    trials: usize,
    seed_base: u64,
    eta_grid: &[f64],
    schemes: &[SchemeId],
) -> Result<Vec<TrialOutcome>, HarnessError> {
    let per_trial: Vec<Result<Vec<TrialOutcome>, HarnessError>> =
        (0..trials).into_par_iter().map(|i| run_trial(base, i, seed_base, eta_grid, schemes)).collect();
    let mut out = Vec::new();
    for r in per_trial {
        out.extend(r?);
    }
    Ok(out)
}

fn mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

/// Groups records by (scheme, eta) and reports feasible-trial statistics
/// plus the relative gains of [`GAIN_PAIRS`]. Invariant under record order.
pub fn summarize(records: &[TrialRecord]) -> Summary {
    let mut groups: BTreeMap<(SchemeId, u64), (f64, Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let key = (r.scheme, r.eta_db.to_bits());
        let entry = groups.entry(key).or_insert((r.eta_db, Vec::new(), 0));
        entry.2 += 1;
        if let (true, Some(v)) = (r.feasible, r.sum_rate) {
            entry.1.push(v);
        }
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((scheme, _), (eta_db, mut values, total))| {
            let feasible = values.len();
            let (mean_rate, std_rate) = if feasible == 0 {
                (None, None)
            } else {
                let (m, s) = mean_std(&mut values);
                (Some(m), Some(s))
            };
            SummaryRow {
                scheme,
                eta_db,
                mean_rate,
                std_rate,
                trials: total,
                infeasible_rate: (total - feasible) as f64 / total as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.eta_db.total_cmp(&b.eta_db)));
    let mut etas: Vec<f64> = rows.iter().map(|r| r.eta_db).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let mut gains = Vec::new();
    for &eta in &etas {
        for (scheme, baseline) in GAIN_PAIRS {
            let find = |s: SchemeId| rows.iter().find(|r| r.scheme == s && r.eta_db == eta);
            if let (Some(a), Some(b)) = (find(scheme), find(baseline)) {
                let relative_gain = match (a.mean_rate, b.mean_rate) {
                    (Some(x), Some(y)) if y != 0.0 => Some(x / y - 1.0),
                    _ => None,
                };
                gains.push(GainRow { eta_db: eta, scheme, baseline, relative_gain });
            }
        }
    }
    Summary { rows, gains }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Aggregates raw trial tables (the `trials.csv` schema). Every table must
/// carry exactly [`TRIAL_COLUMNS`] and every row must match its header.
pub fn aggregate(tables: &[Table]) -> Result<Summary, HarnessError> {
    if tables.is_empty() {
        return Err(HarnessError::ColumnMismatch("no input tables".into()));
    }
    let mut records = Vec::new();
    for t in tables {
        if t.header.iter().map(String::as_str).ne(TRIAL_COLUMNS.iter().copied()) {
            return Err(HarnessError::ColumnMismatch(format!(
                "{}: expected columns {:?}, found {:?}",
                t.file_name, TRIAL_COLUMNS, t.header
            )));
        }
        for (i, row) in t.rows.iter().enumerate() {
            if row.len() != t.header.len() {
                return Err(HarnessError::ColumnMismatch(format!(
                    "{} row {i}: {} fields for {} columns",
                    t.file_name,
                    row.len(),
                    t.header.len()
                )));
            }
            let bad = |col: &str| HarnessError::ColumnMismatch(format!("{} row {i}: bad {col} '{}'", t.file_name, row.join(",")));
            let opt = |s: &str, col: &str| -> Result<Option<f64>, HarnessError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(col))
                }
            };
            records.push(TrialRecord {
                scheme: row[0].parse().map_err(|_| bad("scheme"))?,
                eta_db: row[1].parse().map_err(|_| bad("eta_db"))?,
                trial: row[2].parse().map_err(|_| bad("trial"))?,
                seed: row[3].parse().map_err(|_| bad("seed"))?,
                feasible: parse_bool(&row[4]).ok_or_else(|| bad("feasible"))?,
                sum_rate: opt(&row[5], "sum_rate")?,
                extracted_rate: opt(&row[6], "extracted_rate")?,
                scnr_db: opt(&row[7], "scnr_db")?,
                iterations: row[8].parse().map_err(|_| bad("iterations"))?,
                converged: parse_bool(&row[9]).ok_or_else(|| bad("converged"))?,
                audit_failures: row[10].parse().map_err(|_| bad("audit_failures"))?,
            });
        }
    }
    Ok(summarize(&records))
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn trials_table(records: &[TrialRecord]) -> Table {
    Table {
        file_name: "trials.csv".into(),
        header: header(&TRIAL_COLUMNS),
        rows: records
            .iter()
            .map(|r| {
                vec![
                    r.scheme.name().to_string(),
                    fmt_f64(r.eta_db),
                    r.trial.to_string(),
                    r.seed.to_string(),
                    r.feasible.to_string(),
                    fmt_opt(r.sum_rate),
                    fmt_opt(r.extracted_rate),
                    fmt_opt(r.scnr_db),
                    r.iterations.to_string(),
                    r.converged.to_string(),
                    r.audit_failures.to_string(),
                ]
            })
            .collect(),
    }
}

pub fn sweep_table(summary: &Summary) -> Table {
    Table {
        file_name: "sweep.csv".into(),
        header: header(&SWEEP_COLUMNS),
        rows: summary
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.scheme.name().to_string(),
                    fmt_f64(r.eta_db),
                    fmt_opt(r.mean_rate),
                    fmt_opt(r.std_rate),
                    r.trials.to_string(),
                    fmt_f64(r.infeasible_rate),
                ]
            })
            .collect(),
    }
}

pub fn gains_table(summary: &Summary) -> Table {
    Table {
        file_name: "gains.csv".into(),
        header: header(&GAIN_COLUMNS),
        rows: summary
            .gains
            .iter()
            .map(|g| {
                vec![fmt_f64(g.eta_db), g.scheme.name().to_string(), g.baseline.name().to_string(), fmt_opt(g.relative_gain)]
            })
            .collect(),
    }
}

fn load_config(spec: &ExperimentSpec) -> Result<SystemConfig, HarnessError> {
    let cfg = match &spec.config_path {
        Some(p) => SystemConfig::from_path(p)?,
        None => default_config(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the configuration named by `spec` and runs the experiment.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, HarnessError> {
    let cfg = load_config(spec)?;
    run_experiment_with_config(spec, &cfg)
}

/// Runs the experiment against an already-built configuration.
pub fn run_experiment_with_config(spec: &ExperimentSpec, cfg: &SystemConfig) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    cfg.validate()?;
    let grid = if spec.eta_grid.is_empty() { vec![cfg.scnr_threshold] } else { spec.eta_grid.clone() };
    let mut result = match spec.command {
        Command::Run => run_command(spec, cfg, &grid)?,
        Command::Beampattern => beampattern_command(spec, cfg, &grid)?,
        Command::Sweep | Command::Montecarlo => {
            let outcomes = run_trials(cfg, spec.trials, spec.seed_base, &grid, &spec.schemes)?;
            let records: Vec<TrialRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
            let mut tables = vec![trials_table(&records)];
            let mut summary = None;
            if spec.command == Command::Sweep {
                let s = summarize(&records);
                tables.insert(0, sweep_table(&s));
                tables.insert(1, gains_table(&s));
                summary = Some(s);
            }
            ExperimentResult { metadata: metadata(spec, cfg), tables, outcomes, summary, convergence: Vec::new() }
        }
    };
    result.metadata = metadata(spec, cfg);
    if let Some(dir) = &spec.output_dir {
        write_tables(dir, &result.metadata, &result.tables)?;
    }
    Ok(result)
}

fn metadata(spec: &ExperimentSpec, cfg: &SystemConfig) -> Metadata {
    let trials = match spec.command {
        Command::Sweep | Command::Montecarlo => spec.trials,
        _ => 1,
    };
    Metadata {
        config_json: cfg.to_json_string().replace('\n', " "),
        version: ARTIFACT_VERSION.to_string(),
        seeds: (0..trials).map(|i| trial_seed(spec.seed_base, i)).collect(),
        command: spec.command,
    }
}

fn run_command(spec: &ExperimentSpec, cfg: &SystemConfig, grid: &[f64]) -> Result<ExperimentResult, HarnessError> {
    let seed = spec.seed_base;
    let run_cfg = trial_config(cfg, seed, grid[0]);
    let geo = sample_geometry(&run_cfg, &RngStream::new(seed, "geometry"));
    let ch = sample_channels(&run_cfg, &geo, &RngStream::new(seed, "fading"))?;
    let env = build_radar_environment(&run_cfg);
    let mut rows = Vec::new();
    let mut convergence = Vec::new();
    for &scheme in &spec.schemes {
        let sol = match run_scheme(&ch, &env, &run_cfg, scheme) {
            Ok(s) => s,
            Err(e @ OptimizerError::Infeasible { .. }) => return Err(HarnessError::Infeasible { scheme, source: e }),
            Err(source) => return Err(HarnessError::Optimizer { scheme, source }),
        };
        for (i, v) in sol.iteration_trace.iter().enumerate() {
            rows.push(vec![scheme.name().to_string(), (i + 1).to_string(), fmt_f64(*v)]);
        }
        convergence.push((scheme, sol.iteration_trace.clone()));
    }
    Ok(ExperimentResult {
        metadata: metadata(spec, cfg),
        tables: vec![Table { file_name: "convergence.csv".into(), header: header(&CONVERGENCE_COLUMNS), rows }],
        outcomes: Vec::new(),
        summary: None,
        convergence,
    })
}

fn beampattern_command(spec: &ExperimentSpec, cfg: &SystemConfig, grid: &[f64]) -> Result<ExperimentResult, HarnessError> {
    let outcomes = run_trial(cfg, 0, spec.seed_base, grid, &spec.schemes)?;
    let env = build_radar_environment(cfg);
    let thetas = default_theta_grid();
    let mut rows = Vec::new();
    for o in &outcomes {
        if let Some(sol) = &o.solution {
            for p in beampattern(&env, &sol.cov, &thetas)? {
                rows.push(vec![
                    o.record.scheme.name().to_string(),
                    fmt_f64(o.record.eta_db),
                    fmt_f64(p.theta),
                    fmt_f64(p.power_db),
                ]);
            }
        }
    }
    Ok(ExperimentResult {
        metadata: metadata(spec, cfg),
        tables: vec![Table { file_name: "beampattern.csv".into(), header: header(&BEAMPATTERN_COLUMNS), rows }],
        outcomes,
        summary: None,
        convergence: Vec::new(),
    })
}

/// Writes one table with the `# key: value` provenance preamble.
pub fn write_table<W: Write>(out: W, meta: &Metadata, table: &Table) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(out);
    writeln!(out, "# version: {}", meta.version)?;
    writeln!(out, "# command: {}", meta.command)?;
    writeln!(out, "# config: {}", meta.config_json)?;
    let seeds: Vec<String> = meta.seeds.iter().map(u64::to_string).collect();
    writeln!(out, "# seeds: {}", seeds.join(" "))?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tables(dir: &Path, meta: &Metadata, tables: &[Table]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    for t in tables {
        write_table(File::create(dir.join(&t.file_name))?, meta, t)?;
    }
    Ok(())
}

/// Reads a table written by [`write_table`], skipping the `#` preamble.
pub fn read_table(path: &Path) -> Result<Table, HarnessError> {
    let text = fs::read_to_string(path)?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Table { file_name, header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scheme: SchemeId, eta: f64, trial: usize, rate: Option<f64>) -> TrialRecord {
        TrialRecord {
            scheme,
            eta_db: eta,
            trial,
            seed: trial as u64,
            feasible: rate.is_some(),
            sum_rate: rate,
            extracted_rate: rate,
            scnr_db: rate.map(|_| 40.0),
            iterations: 3,
            converged: true,
            audit_failures: 0,
        }
    }

    #[test]
    fn eta_grid_parsing() {
        assert_eq!(parse_eta_grid("28:38:1").unwrap(), default_eta_grid());
        assert_eq!(parse_eta_grid("30").unwrap(), vec![30.0]);
        assert_eq!(parse_eta_grid("30,32.5").unwrap(), vec![30.0, 32.5]);
        assert_eq!(parse_eta_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_eta_grid("3:1:1").is_err());
        assert!(parse_eta_grid("a").is_err());
        assert!(parse_eta_grid("1:2").is_err());
    }

    #[test]
    fn scheme_list_parsing() {
        assert_eq!(parse_schemes("proposed,zf").unwrap(), vec![SchemeId::Proposed, SchemeId::ZeroForcing]);
        assert!(parse_schemes("proposed,bogus").is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new(Command::Sweep);
        spec.trials = 0;
        assert!(spec.validate().is_err());
        spec.trials = 1;
        spec.eta_grid.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_trial_has_zero_std() {
        let s = summarize(&[record(SchemeId::Proposed, 30.0, 0, Some(12.5))]);
        assert_eq!(s.rows[0].mean_rate, Some(12.5));
        assert_eq!(s.rows[0].std_rate, Some(0.0));
        assert_eq!(s.rows[0].trials, 1);
    }

    #[test]
    fn all_infeasible_reports_absent_mean() {
        let recs = vec![record(SchemeId::Proposed, 40.0, 0, None), record(SchemeId::Proposed, 40.0, 1, None)];
        let s = summarize(&recs);
        assert_eq!(s.rows[0].mean_rate, None);
        assert_eq!(s.rows[0].infeasible_rate, 1.0);
        let t = sweep_table(&s);
        assert_eq!(t.rows[0][2], "");
    }

    #[test]
    fn infeasible_trials_excluded_from_mean() {
        let recs = vec![
            record(SchemeId::Proposed, 30.0, 0, Some(10.0)),
            record(SchemeId::Proposed, 30.0, 1, None),
            record(SchemeId::Proposed, 30.0, 2, Some(14.0)),
            record(SchemeId::FixedD2d, 30.0, 0, Some(8.0)),
        ];
        let s = summarize(&recs);
        let row = s.get(SchemeId::Proposed, 30.0).unwrap();
        assert_eq!(row.mean_rate, Some(12.0));
        assert_eq!(row.std_rate, Some(2.0));
        assert!((row.infeasible_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.gain(SchemeId::Proposed, SchemeId::FixedD2d, 30.0), Some(0.5));
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let mut recs: Vec<TrialRecord> = (0..40)
            .map(|i| record(SchemeId::Proposed, 30.0 + (i % 3) as f64, i, Some(1.0 + (i as f64).sin() * 1e3)))
            .collect();
        let a = summarize(&recs);
        recs.reverse();
        recs.swap(3, 17);
        let b = summarize(&recs);
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_rejects_mismatched_columns() {
        let recs = vec![record(SchemeId::Proposed, 30.0, 0, Some(1.0))];
        let good = trials_table(&recs);
        assert_eq!(aggregate(std::slice::from_ref(&good)).unwrap(), summarize(&recs));
        let mut bad = good.clone();
        bad.header.pop();
        assert!(matches!(aggregate(&[bad]), Err(HarnessError::ColumnMismatch(_))));
        let mut short = good.clone();
        short.rows[0].pop();
        assert!(matches!(aggregate(&[short]), Err(HarnessError::ColumnMismatch(_))));
        assert!(matches!(aggregate(&[]), Err(HarnessError::ColumnMismatch(_))));
    }

    #[test]
    fn trials_table_round_trips_through_csv() {
        let recs = vec![record(SchemeId::Proposed, 30.0, 0, Some(1.25)), record(SchemeId::FixedD2d, 30.0, 0, None)];
        let table = trials_table(&recs);
        let meta = Metadata { config_json: "{}".into(), version: "v".into(), seeds: vec![0], command: Command::Montecarlo };
        let dir = std::env::temp_dir().join(format!("isac-harness-{}", std::process::id()));
        write_tables(&dir, &meta, std::slice::from_ref(&table)).unwrap();
        let back = read_table(&dir.join("trials.csv")).unwrap();
        assert_eq!(back, table);
        let _ = fs::remove_dir_all(&dir);
    }
}
