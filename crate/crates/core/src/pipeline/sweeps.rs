//! Experiment sweeps built on the task runner.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::PipelineConfig;
use super::dag::{TaskDag, TaskKind};
use super::grid::{get_f64, ParameterGrid};
use super::runner::{run_dag, write_atomic, RunOptions, RunSummary, TaskStatus, TASKS_DIR};
use super::tasks::{read_json, ChainEval, EVAL_FILE, SCHEDULE_FILE};
use crate::error::{Error, Result};
use crate::evalmetrics::{deviation_stats, BoxStats, MatchCounts};
use crate::waveforms::TransmissionSchedule;

pub const SNR_POINTS_DB: [f64; 5] = [-13.0, -3.0, 12.0, 29.0, 35.0];
pub const INTERFERER_POINTS_DB: [f64; 5] = [3.0, 11.0, 19.0, 27.0, 35.0];
pub const STUDY_BANDWIDTHS_HZ: [f64; 4] = [5e6, 10e6, 15e6, 20e6];
pub const STUDY_DURATIONS_S: [f64; 4] = [2e-3, 4e-3, 6e-3, 8e-3];
pub const STUDY_INTERVALS_S: [f64; 3] = [2e-3, 4e-3, 6e-3];
pub const SWEEPS_DIR: &str = "sweeps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Snr,
    Interference,
    Features,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Snr => "snr",
            SweepKind::Interference => "interference",
            SweepKind::Features => "features",
        }
    }

    /// The grid axis reported in the CSV's `snr_db` column.
    fn swept_axis(self) -> Option<&'static str> {
        match self {
            SweepKind::Snr => Some("snr_db"),
            SweepKind::Interference => Some("interferer_snr_db"),
            SweepKind::Features => None,
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(SweepKind::Snr),
            "interference" => Ok(SweepKind::Interference),
            "features" => Ok(SweepKind::Features),
            other => Err(Error::Config(format!("unknown sweep `{other}`"))),
        }
    }
}

fn numbers(values: &[f64]) -> Vec<Value> {
    values.iter().map(|&v| Value::from(v)).collect()
}

/// `base` with the sweep's grid. Axes already present in `base.grid` keep
/// their values.
pub fn sweep_config(kind: SweepKind, base: &PipelineConfig) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.run.name = format!("sweep-{}", kind.name());
    let reference = numbers(&[cfg.scene.reference_snr_db]);
    let mut defaults: Vec<(&str, Vec<Value>)> = vec![(
        "replicate",
        (0..cfg.sweep.replicates).map(Value::from).collect(),
    )];
    match kind {
        SweepKind::Snr => {
            defaults.push(("snr_db", numbers(&SNR_POINTS_DB)));
        }
        SweepKind::Interference => {
            defaults.push(("scene", vec![Value::from("interference")]));
            defaults.push(("snr_db", reference));
            defaults.push(("interferer_snr_db", numbers(&INTERFERER_POINTS_DB)));
        }
        SweepKind::Features => {
            defaults.push(("scene", vec![Value::from("periodic")]));
            defaults.push(("snr_db", reference));
            defaults.push(("bandwidth_hz", numbers(&STUDY_BANDWIDTHS_HZ)));
            defaults.push(("frame_duration_s", numbers(&STUDY_DURATIONS_S)));
            defaults.push(("frame_interval_s", numbers(&STUDY_INTERVALS_S)));
        }
    }
    for (key, values) in defaults {
        cfg.grid.entry(key.to_string()).or_insert(values);
    }
    cfg
}

/// One row of the detection sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub detection_rate: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub counts: MatchCounts,
    pub chains: usize,
    /// Chains that failed (typically sync after every retransmission); their
    /// frames count as missed.
    pub failed_chains: usize,
}

/// Box-plot statistics of one feature's deviation, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStatsRow {
    pub feature: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub min: f64,
    pub max: f64,
}

impl FeatureStatsRow {
    fn new(feature: &str, s: &BoxStats) -> Self {
        Self {
            feature: feature.to_string(),
            n: s.n,
            median: s.median,
            q1: s.q1,
            q3: s.q3,
            whisker_low: s.whisker_low,
            whisker_high: s.whisker_high,
            min: s.min,
            max: s.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
    pub features: Vec<FeatureStatsRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub summary: RunSummary,
    /// Absent when the run was interrupted.
    pub report: Option<SweepReport>,
    pub csv: Option<PathBuf>,
}

struct ChainResult {
    value: Option<f64>,
    eval: Option<ChainEval>,
    missed_frames: usize,
}

fn collect(dag: &TaskDag, run_dir: &Path, axis: Option<&str>, statuses: &BTreeMap<&str, TaskStatus>) -> Result<Vec<ChainResult>> {
    let tasks_dir = run_dir.join(TASKS_DIR);
    let mut out = Vec::with_capacity(dag.chains.len());
    for chain in &dag.chains {
        let value = axis.and_then(|a| get_f64(&chain.point, a));
        if statuses.get(chain.leaf()) == Some(&TaskStatus::Done) {
            let eval: ChainEval = read_json(&tasks_dir.join(chain.leaf()).join(EVAL_FILE))?;
            out.push(ChainResult { value, eval: Some(eval), missed_frames: 0 });
        } else {
            let synth = chain.task(TaskKind::Synth);
            let missed_frames = if statuses.get(synth) == Some(&TaskStatus::Done) {
                read_json::<TransmissionSchedule>(&tasks_dir.join(synth).join(SCHEDULE_FILE))?.frames.len()
            } else {
                0
            };
            out.push(ChainResult { value, eval: None, missed_frames });
        }
    }
    Ok(out)
}

fn detection_points(results: &[ChainResult]) -> Vec<SweepPoint> {
    let mut by_value: BTreeMap<i64, SweepPoint> = BTreeMap::new();
    for r in results {
        let v = r.value.unwrap_or(f64::NAN);
        // Sweep values are finite and distinct to well below 1e-6 dB.
        let key = (v * 1e6).round() as i64;
        let p = by_value.entry(key).or_insert_with(|| SweepPoint {
            snr_db: v,
            counts: MatchCounts::default(),
            chains: 0,
            failed_chains: 0,
        });
        p.chains += 1;
        match &r.eval {
            Some(e) => p.counts.add(&e.report.counts),
            None => {
                p.failed_chains += 1;
                p.counts.gt += r.missed_frames;
            }
        }
    }
    by_value.into_values().collect()
}

fn feature_stats(results: &[ChainResult]) -> Vec<FeatureStatsRow> {
    let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in results.iter().filter_map(|r| r.eval.as_ref()) {
        for p in &e.pairs {
            columns.entry("bandwidth").or_default().push(p.deviation.bandwidth.value);
            columns.entry("center").or_default().push(p.deviation.center.value);
            columns.entry("duration").or_default().push(p.deviation.duration.value);
        }
        if let Some(fi) = e.fi.filter(|d| !d.absolute) {
            columns.entry("interval").or_default().push(fi.value);
        }
    }
    ["bandwidth", "center", "duration", "interval"]
        .iter()
        .filter_map(|name| {
            let stats = deviation_stats(columns.get(name)?)?;
            Some(FeatureStatsRow::new(name, &stats))
        })
        .collect()
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

/// Runs the sweep's grid and writes `sweeps/<kind>.csv` and `.json` under
/// `run_dir`.
pub fn run_sweep(kind: SweepKind, base: &PipelineConfig, run_dir: &Path, opts: RunOptions) -> Result<SweepOutcome> {
    let cfg = sweep_config(kind, base);
    cfg.validate()?;
    let dag = TaskDag::expand(&ParameterGrid::new(&cfg.grid)?, &cfg)?;
    let summary = run_dag(&dag, &cfg, run_dir, opts)?;
    let Some(manifest) = &summary.manifest else {
        return Ok(SweepOutcome { summary, report: None, csv: None });
    };
    let statuses: BTreeMap<&str, TaskStatus> = manifest.tasks.iter().map(|t| (t.id.as_str(), t.status)).collect();
    let results = collect(&dag, run_dir, kind.swept_axis(), &statuses)?;

    let (points, features) = match kind {
        SweepKind::Features => (Vec::new(), feature_stats(&results)),
        _ => (detection_points(&results), feature_stats(&results)),
    };
    let csv = match kind {
        SweepKind::Features => csv_bytes(&features)?,
        _ => {
            let rows: Vec<SweepRow> = points
                .iter()
                .map(|p| SweepRow {
                    snr_db: p.snr_db,
                    detection_rate: p.counts.detection_rate(),
                    precision: p.counts.precision(),
                })
                .collect();
            csv_bytes(&rows)?
        }
    };
    let report = SweepReport { kind, points, features };

    let dir = run_dir.join(SWEEPS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let csv_path = dir.join(format!("{}.csv", kind.name()));
    write_atomic(&csv_path, &csv)?;
    write_atomic(
        &dir.join(format!("{}.json", kind.name())),
        format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes(),
    )?;
    Ok(SweepOutcome {
        summary,
        report: Some(report),
        csv: Some(csv_path),
    })
}
