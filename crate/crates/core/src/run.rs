//! Running scenarios to files and sweeping one parameter across seeds.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunSpec, ScenarioConfig};
use crate::frame::Modulation;
use crate::summary::{csv_header, summarize, Summary, SummaryError};
use crate::trace::{to_jsonl, TraceRecord};
use crate::world::{simulate, RunMeta};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error("unknown sweep axis {0}; expected one of mcs, bandwidth, sp_duty, n_stations, rts_threshold")]
    UnknownAxis(String),
    #[error("bad value {value} for axis {axis}")]
    BadValue { axis: String, value: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub meta: RunMeta,
    pub summary: Summary,
}

/// Runs one simulation in memory.
pub fn run_config(cfg: &ScenarioConfig, seed: Option<u64>) -> Result<RunResult, RunError> {
    let out = simulate(resolve_seeded(cfg, seed)?);
    let summary = summarize(&out.trace, &out.meta)?;
    Ok(RunResult { trace: out.trace, meta: out.meta, summary })
}

/// Resolves `cfg` with the seed replaced, so seed-dependent expansion follows the override.
pub fn resolve_seeded(cfg: &ScenarioConfig, seed: Option<u64>) -> Result<RunSpec, ConfigError> {
    match seed {
        Some(s) if s != cfg.sim.seed => {
            let mut c = cfg.clone();
            c.sim.seed = s;
            c.resolve()
        }
        _ => cfg.resolve(),
    }
}

pub fn output_stem(cfg: &ScenarioConfig, seed: u64) -> String {
    format!("{}-{}-s{}", cfg.name, cfg.mac.variant.label(), seed)
}

/// Runs one simulation and writes `<stem>.trace.jsonl` and `<stem>.summary.csv` under `dir`.
pub fn run_scenario(cfg: &ScenarioConfig, seed: Option<u64>, dir: &Path) -> Result<(PathBuf, PathBuf), RunError> {
    let r = run_config(cfg, seed)?;
    fs::create_dir_all(dir)?;
    let stem = output_stem(cfg, seed.unwrap_or(cfg.sim.seed));
    let trace_path = dir.join(format!("{stem}.trace.jsonl"));
    let summary_path = dir.join(format!("{stem}.summary.csv"));
    fs::write(&trace_path, to_jsonl(&r.trace))?;
    fs::write(&summary_path, r.summary.to_csv())?;
    Ok((trace_path, summary_path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Mcs,
    Bandwidth,
    SpDuty,
    NStations,
    RtsThreshold,
}

impl Axis {
    pub fn parse(name: &str) -> Result<Axis, RunError> {
        Ok(match name {
            "mcs" => Axis::Mcs,
            "bandwidth" => Axis::Bandwidth,
            "sp_duty" => Axis::SpDuty,
            "n_stations" => Axis::NStations,
            "rts_threshold" => Axis::RtsThreshold,
            _ => return Err(RunError::UnknownAxis(name.to_string())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Mcs => "mcs",
            Axis::Bandwidth => "bandwidth",
            Axis::SpDuty => "sp_duty",
            Axis::NStations => "n_stations",
            Axis::RtsThreshold => "rts_threshold",
        }
    }

    /// Copy of `cfg` with the axis set to `value`.
    pub fn apply(self, cfg: &ScenarioConfig, value: &str) -> Result<ScenarioConfig, RunError> {
        let bad = || RunError::BadValue { axis: self.name().to_string(), value: value.to_string() };
        let mut c = cfg.clone();
        match self {
            Axis::Mcs => c.mac.data_mcs = Modulation::parse(value).filter(|m| *m != Modulation::Basic).ok_or_else(bad)?,
            Axis::Bandwidth => {
                let w: u32 = value.parse().map_err(|_| bad())?;
                c.mac.capability_mhz = w;
                for v in c.mac.capability.values_mut() {
                    *v = w;
                }
            }
            Axis::SpDuty => {
                let d: f64 = value.parse().map_err(|_| bad())?;
                c.sp_pattern.as_mut().ok_or_else(bad)?.duty = d;
            }
            Axis::NStations => {
                let n: usize = value.parse().map_err(|_| bad())?;
                c.stations.as_mut().ok_or_else(bad)?.count = n;
            }
            Axis::RtsThreshold => c.mac.rts_threshold = value.parse().map_err(|_| bad())?,
        }
        c.resolve()?;
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub summary: Summary,
}

/// One summary per (value, seed), ordered by value position then seed.
pub fn sweep(cfg: &ScenarioConfig, axis: &str, values: &[String], seeds: &[u64]) -> Result<Vec<SweepRow>, RunError> {
    let axis = Axis::parse(axis)?;
    let mut points = Vec::new();
    for v in values {
        let c = axis.apply(cfg, v)?;
        for &s in seeds {
            points.push((v.clone(), s, c.clone()));
        }
    }
    let results: Vec<Result<SweepRow, RunError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .iter()
            .map(|(v, s, c)| {
                scope.spawn(move || {
                    run_config(c, Some(*s)).map(|r| SweepRow { value: v.clone(), seed: *s, summary: r.summary })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.into_iter().collect()
}

pub fn sweep_csv(axis: &str, rows: &[SweepRow]) -> String {
    let channels = rows.first().map(|r| r.summary.busy.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["axis".to_string(), "value".to_string(), "seed".to_string()];
    header.extend(csv_header(channels));
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![axis.to_string(), r.value.clone(), r.seed.to_string()];
        rec.extend(r.summary.csv_values());
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
