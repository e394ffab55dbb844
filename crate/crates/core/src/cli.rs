//! Scenario files, batch runs, and log export.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::RobotParams;
use crate::replan::max_safe_speed;
use crate::sim::{run_trials, LogLine, Metrics, RunMode, Scenario, SimError, SimLog};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("simulation failed: {0}")]
    Simulation(#[from] SimError),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("bad log line {line} in {path}: {message}")]
    Log { path: String, line: usize, message: String },
}

impl CliError {
    /// Process exit code: 1 for unusable input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) => 1,
            CliError::Simulation(_) | CliError::Io(..) | CliError::Log { .. } => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e)
}

/// Parses and validates scenario JSON. `origin` is only used in messages.
pub fn parse_scenario_str(text: &str, origin: &str) -> Result<Scenario, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        CliError::Parse {
            path: origin.to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    scenario.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(scenario)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario_str(&text, &path.display().to_string())
}

/// Canonical form: every field written out, defaults included.
pub fn serialize_scenario(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenario serializes")
}

/// Mean and sample standard deviation of each metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub t_end: f64,
    pub path_length: f64,
    pub control_energy: f64,
    pub collisions: f64,
    pub goal_error: f64,
}

impl MetricStats {
    fn from_fn(f: impl Fn(&dyn Fn(&Metrics) -> f64) -> f64) -> Self {
        MetricStats {
            t_end: f(&|m| m.t_end),
            path_length: f(&|m| m.path_length),
            control_energy: f(&|m| m.control_energy),
            collisions: f(&|m| m.collisions as f64),
            goal_error: f(&|m| m.goal_error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    pub reached: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<TrialRow>,
    /// Trials that reached the goal.
    pub reached: usize,
    /// Aggregates over the trials that finished without error.
    pub mean: Option<MetricStats>,
    pub std: Option<MetricStats>,
}

impl RunReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn aggregate(metrics: &[Metrics]) -> Option<(MetricStats, MetricStats)> {
    if metrics.is_empty() {
        return None;
    }
    let n = metrics.len() as f64;
    let mean = MetricStats::from_fn(|f| metrics.iter().map(f).sum::<f64>() / n);
    let std = MetricStats::from_fn(|f| {
        if metrics.len() < 2 {
            return 0.0;
        }
        let mu = metrics.iter().map(f).sum::<f64>() / n;
        (metrics.iter().map(|m| (f(m) - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    Some((mean, std))
}

/// Runs `trials` seeded simulations (seed + i). Failed trials are recorded in
/// the report and do not stop the batch. With `out`, writes one JSON-lines
/// log per trial and `report.json`.
pub fn run(scenario: &Scenario, trials: usize, seed: u64, mode: RunMode, out: Option<&Path>) -> Result<RunReport, CliError> {
    if trials == 0 {
        return Err(CliError::Validation("trials must be at least 1".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let results = run_trials(scenario, trials, seed, mode);
    let mut rows = Vec::with_capacity(trials);
    for (i, result) in results.into_iter().enumerate() {
        let trial_seed = seed.wrapping_add(i as u64);
        let row = match result {
            Ok((log, metrics)) => {
                let log_path = match out {
                    Some(dir) => {
                        let p = dir.join(format!("trial_{i:03}.jsonl"));
                        write_log(&p, &log)?;
                        Some(p)
                    }
                    None => None,
                };
                TrialRow {
                    trial: i,
                    seed: trial_seed,
                    metrics: Some(metrics),
                    reached: log.arrival.is_some(),
                    error: None,
                    log: log_path,
                }
            }
            Err(e) => {
                log::error!("trial {i} (seed {trial_seed}) failed: {e}");
                TrialRow { trial: i, seed: trial_seed, metrics: None, reached: false, error: Some(e.to_string()), log: None }
            }
        };
        rows.push(row);
    }
    let ok: Vec<Metrics> = rows.iter().filter_map(|r| r.metrics).collect();
    let agg = aggregate(&ok);
    let report = RunReport {
        mode,
        seed,
        trials,
        reached: rows.iter().filter(|r| r.reached).count(),
        rows,
        mean: agg.map(|a| a.0),
        std: agg.map(|a| a.1),
    };
    if let Some(dir) = out {
        let p = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&p, text + "\n").map_err(io_err(&p))?;
    }
    Ok(report)
}

pub fn write_log(path: &Path, log: &SimLog) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for line in log.lines() {
        serde_json::to_writer(&mut w, &line).expect("log line serializes");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| CliError::Log {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        lines.push(parsed);
    }
    Ok(lines)
}

/// Writes the step records of a JSON-lines log as CSV and returns the number
/// of data rows. Event lines are skipped.
pub fn export_csv(log_path: &Path, csv_path: &Path) -> Result<usize, CliError> {
    let records: Vec<_> = read_log(log_path)?
        .into_iter()
        .filter_map(|l| match l {
            LogLine::Step(r) => Some(r),
            LogLine::Event(_) => None,
        })
        .collect();
    let arms = records.first().map_or(RobotParams::default().num_arms(), |r| r.arms.len());
    let file = File::create(csv_path).map_err(io_err(csv_path))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CliError::Io(csv_path.to_path_buf(), e.into());
    let mut header: Vec<String> = ["t", "x", "y", "heading", "vx", "vy"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=arms).map(|i| format!("arm{i}")));
    header.extend(["mode", "ax", "ay"].iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for r in &records {
        let mode = serde_json::to_value(r.mode).expect("mode serializes");
        let mut row: Vec<String> = [r.t, r.x, r.y, r.heading, r.vx, r.vy].iter().map(f64::to_string).collect();
        row.extend((0..arms).map(|i| r.arms.get(i).copied().unwrap_or(0.0).to_string()));
        row.push(mode.as_str().unwrap_or_default().to_string());
        row.push(r.ax.to_string());
        row.push(r.ay.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(csv_path))?;
    Ok(records.len())
}

/// Largest approach speed the arms can absorb for the scenario's robot.
pub fn vmax(path: &Path) -> Result<f64, CliError> {
    let scenario = parse_scenario(path)?;
    max_safe_speed(&scenario.params).map_err(|e| CliError::Validation(e.to_string()))
}
