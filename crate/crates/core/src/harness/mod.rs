//! Scenario sweeps, with/without comparisons and reports.

mod compare;
mod report;

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::spec::error_line;
use crate::engine::{run, EngineError, ReservedLaneMode, RunMetrics, ScenarioConfig};
use crate::reservation::LosClass;

pub use compare::{compare, crossover, ComparisonRow};
pub use report::{emit_report, ReportFormat};

/// File holding the finished matrix, sorted by scenario key.
pub const MATRIX_FILE: &str = "matrix.csv";
/// Rows appended as runs finish; read back to resume.
pub const JOURNAL_FILE: &str = "matrix.journal.csv";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid sweep: {0}")]
    ConfigInvalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("run {key} failed: {source}")]
    Run { key: String, source: EngineError },
    #[error("incomplete matrix: {0}")]
    IncompleteMatrix(String),
    #[error("nothing to report")]
    EmptyRows,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn default_testbeds() -> Vec<String> {
    vec!["princeton".to_string()]
}
fn default_mp_levels() -> Vec<f64> {
    (0..=10).map(|k| f64::from(k) / 10.0).collect()
}
fn default_lane_modes() -> Vec<ReservedLaneMode> {
    vec![ReservedLaneMode::Off, ReservedLaneMode::Auto]
}
fn default_los_levels() -> Vec<LosClass> {
    vec![LosClass::AToC]
}
fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}
fn default_warmup() -> f64 {
    900.0
}
fn default_duration() -> f64 {
    3600.0
}
fn default_dt() -> f64 {
    0.1
}

/// The evaluation matrix: every combination of the listed values is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_testbeds")]
    pub testbeds: Vec<String>,
    #[serde(default = "default_mp_levels")]
    pub mp_levels: Vec<f64>,
    #[serde(default = "default_lane_modes")]
    pub lane_modes: Vec<ReservedLaneMode>,
    #[serde(default = "default_los_levels")]
    pub los_levels: Vec<LosClass>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            testbeds: default_testbeds(),
            mp_levels: default_mp_levels(),
            lane_modes: default_lane_modes(),
            los_levels: default_los_levels(),
            seeds: default_seeds(),
            output: None,
            warmup: default_warmup(),
            duration: default_duration(),
            dt: default_dt(),
        }
    }
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Parse {
            line: error_line(text, e.span()),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("sweep is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::ConfigInvalid(m.to_string()));
        if self.testbeds.is_empty() || self.lane_modes.is_empty() || self.los_levels.is_empty() {
            return bad("testbeds, lane_modes and los_levels must be nonempty");
        }
        if self.mp_levels.is_empty() {
            return bad("mp_levels must be nonempty");
        }
        if self.mp_levels.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("mp_levels must lie in [0, 1]");
        }
        if self.mp_levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("mp_levels must be sorted and unique");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be unique");
        }
        for (k, _) in self.lane_modes.iter().enumerate() {
            if self.lane_modes[..k].contains(&self.lane_modes[k]) {
                return bad("lane_modes must be unique");
            }
        }
        for (k, _) in self.los_levels.iter().enumerate() {
            if self.los_levels[..k].contains(&self.los_levels[k]) {
                return bad("los_levels must be unique");
            }
        }
        for (k, _) in self.testbeds.iter().enumerate() {
            if self.testbeds[..k].contains(&self.testbeds[k]) {
                return bad("testbeds must be unique");
            }
        }
        // the scenario checks cover warmup, duration and dt
        self.scenario(&self.keys()[0]).validate().map_err(|e| HarnessError::ConfigInvalid(e.to_string()))
    }

    /// All scenario keys in report order.
    pub fn keys(&self) -> Vec<RunKey> {
        let mut out = Vec::new();
        for testbed in &self.testbeds {
            for &los in &self.los_levels {
                for &mp in &self.mp_levels {
                    for &mode in &self.lane_modes {
                        for &seed in &self.seeds {
                            out.push(RunKey {
                                testbed: testbed.clone(),
                                los,
                                mp,
                                mode,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn scenario(&self, key: &RunKey) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(&key.testbed, key.los, key.mp, key.mode, key.seed);
        c.warmup = self.warmup;
        c.duration = self.duration;
        c.dt = self.dt;
        c
    }
}

/// Identifies one run of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RunKey {
    pub testbed: String,
    pub los: LosClass,
    pub mp: f64,
    pub mode: ReservedLaneMode,
    pub seed: u64,
}

impl std::fmt::Display for RunKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/mp={}/{}/seed={}", self.testbed, self.los, self.mp, self.mode, self.seed)
    }
}

/// One line of the result matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub testbed: String,
    pub los: LosClass,
    pub mp: f64,
    pub reserved_mode: ReservedLaneMode,
    pub reserved_count: usize,
    pub seed: u64,
    pub avg_delay_s: f64,
    pub vehicles_served: u64,
    pub total_travel_time_vh: f64,
}

impl ResultRow {
    pub fn new(key: &RunKey, m: &RunMetrics) -> Self {
        Self {
            testbed: key.testbed.clone(),
            los: key.los,
            mp: key.mp,
            reserved_mode: key.mode,
            reserved_count: m.reserved_count,
            seed: key.seed,
            avg_delay_s: m.avg_delay_per_vehicle,
            vehicles_served: m.vehicles_served,
            total_travel_time_vh: m.total_travel_time,
        }
    }

    pub fn key(&self) -> RunKey {
        RunKey {
            testbed: self.testbed.clone(),
            los: self.los,
            mp: self.mp,
            mode: self.reserved_mode,
            seed: self.seed,
        }
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (k, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e| HarnessError::Parse {
            line: k + 2,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Rows from a journal. A torn final line from an interrupted write is
/// dropped; any other malformed line is an error.
fn read_journal(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    // a line without its newline was cut off mid-write, even if it parses
    if let Some(cut) = text.rfind('\n') {
        text.truncate(cut + 1);
    } else {
        text.clear();
    }
    let lines: Vec<&str> = text.lines().collect();
    let Some((header, body)) = lines.split_first() else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for (k, line) in body.iter().enumerate() {
        let text = format!("{header}\n{line}\n");
        let mut r = csv::Reader::from_reader(text.as_bytes());
        match r.deserialize::<ResultRow>().next() {
            Some(Ok(row)) => rows.push(row),
            _ => {
                return Err(HarnessError::Parse {
                    line: k + 2,
                    message: format!("malformed journal line {line:?}"),
                })
            }
        }
    }
    Ok(rows)
}

/// Runs every scenario of `config`, `workers` at a time, and returns the
/// rows in key order.
///
/// With an output directory, finished runs are appended to
/// [`JOURNAL_FILE`] and skipped when the sweep is started again; the sorted
/// matrix is written to [`MATRIX_FILE`] at the end.
pub fn sweep(config: &SweepConfig, workers: usize) -> Result<Vec<ResultRow>, HarnessError> {
    sweep_with(config, workers, |_, _| {})
}

/// [`sweep`], calling `observe` with the full metrics of every run it
/// executes. Resumed runs are not observed.
pub fn sweep_with<F>(config: &SweepConfig, workers: usize, observe: F) -> Result<Vec<ResultRow>, HarnessError>
where
    F: Fn(&RunKey, &RunMetrics) + Sync,
{
    config.validate()?;
    let keys = config.keys();
    let mut done: Vec<ResultRow> = Vec::new();
    let journal = match &config.output {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let path = dir.join(JOURNAL_FILE);
            if path.exists() {
                done = read_journal(&path)?;
                // rewrite so a torn tail never precedes new rows
                let mut buf = Vec::new();
                write_rows(&mut buf, &done).map_err(|e| io_err(&path, e))?;
                fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| io_err(&path, e))?;
            Some((path, Mutex::new((file, done.is_empty()))))
        }
        None => None,
    };
    done.retain(|r| keys.contains(&r.key()));
    let todo: Vec<&RunKey> = keys.iter().filter(|k| !done.iter().any(|r| &r.key() == *k)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
    let fresh: Vec<ResultRow> = pool.install(|| {
        todo.par_iter()
            .map(|key| {
                let metrics = run(&config.scenario(key)).map_err(|source| HarnessError::Run {
                    key: key.to_string(),
                    source,
                })?;
                observe(key, &metrics);
                let row = ResultRow::new(key, &metrics);
                if let Some((path, lock)) = &journal {
                    let mut guard = lock.lock().expect("journal lock");
                    let (file, need_header) = &mut *guard;
                    let mut w = csv::WriterBuilder::new().has_headers(*need_header).from_writer(Vec::new());
                    w.serialize(&row).map_err(|e| io_err(path, e))?;
                    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
                    file.write_all(&bytes).and_then(|_| file.flush()).map_err(|e| io_err(path, e))?;
                    *need_header = false;
                }
                Ok(row)
            })
            .collect::<Result<_, HarnessError>>()
    })?;

    done.extend(fresh);
    let mut rows: Vec<ResultRow> = keys
        .iter()
        .map(|k| {
            done.iter()
                .find(|r| &r.key() == k)
                .cloned()
                .expect("every key was run or resumed")
        })
        .collect();
    rows.dedup();
    if let Some(dir) = &config.output {
        let path = dir.join(MATRIX_FILE);
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).map_err(|e| io_err(&path, e))?;
        fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
    }
    Ok(rows)
}
