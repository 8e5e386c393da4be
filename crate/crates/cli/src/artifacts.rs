//! Files written for each run: config.json, metrics.csv, summary.json and
//! validation.json.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use localams::analysis::{validate_trace, ValidationReport};
use localams::simulator::{MetricRecord, MetricsLog, RunOutput};
use localams::ExperimentConfig;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Summary {
    pub algorithm: String,
    pub total_iters: u64,
    pub records: usize,
    pub initial_f: f64,
    pub final_f: f64,
    /// Mean `‖∇f(x̄)‖²` over the recorded iterates before `T`.
    pub stationarity: f64,
    pub full_cadence: bool,
    pub comm_bytes: u64,
    pub sync_rounds: u64,
    pub wall_time_secs: f64,
    /// Final objective above the initial one, or the run aborted.
    pub diverged: bool,
    pub aborted_at: Option<u64>,
    pub abort_reason: Option<String>,
    pub initial_xbar_norm_inf: f64,
    pub final_xbar_norm_inf: f64,
    pub g_empirical: f64,
}

impl Summary {
    pub fn new(log: &MetricsLog, wall_time_secs: f64, abort: Option<(u64, String)>) -> Self {
        let first = log.records[0];
        let last = *log.last();
        let (aborted_at, abort_reason) = match abort {
            Some((t, why)) => (Some(t), Some(why)),
            None => (None, None),
        };
        Self {
            algorithm: log.algorithm.name().to_string(),
            total_iters: log.total_iters,
            records: log.records.len(),
            initial_f: first.f_xbar,
            final_f: last.f_xbar,
            stationarity: log.stationarity(),
            full_cadence: log.has_full_cadence(),
            comm_bytes: last.comm_bytes,
            sync_rounds: last.sync_rounds,
            wall_time_secs,
            diverged: aborted_at.is_some() || !(last.f_xbar <= first.f_xbar),
            aborted_at,
            abort_reason,
            initial_xbar_norm_inf: log.initial_xbar.norm_inf(),
            final_xbar_norm_inf: log.final_xbar.norm_inf(),
            g_empirical: log.g_empirical,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ValidationFile {
    pub enabled: bool,
    pub all_passed: bool,
    pub note: Option<String>,
    #[serde(flatten)]
    pub report: Option<ValidationReport>,
}

impl ValidationFile {
    pub fn from_run(output: &RunOutput) -> Result<Self> {
        match &output.trace {
            None => Ok(Self {
                enabled: false,
                all_passed: true,
                note: Some("validators disabled in config".into()),
                report: None,
            }),
            Some(trace) => {
                let report = validate_trace(trace, output.log.g_empirical)?;
                Ok(Self {
                    enabled: true,
                    all_passed: report.all_passed(),
                    note: None,
                    report: Some(report),
                })
            }
        }
    }

    pub fn aborted(enabled: bool, t: u64) -> Self {
        Self {
            enabled,
            all_passed: !enabled,
            note: Some(format!("run aborted at iteration {t}; no complete trace")),
            report: None,
        }
    }
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "t",
        "f_xbar",
        "grad_sq_norm",
        "consensus_max",
        "comm_bytes",
        "sync_rounds",
    ])?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            float(r.f_xbar),
            float(r.grad_sq_norm),
            float(r.consensus_max),
            r.comm_bytes.to_string(),
            r.sync_rounds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Everything a finished or aborted run leaves in `dir`.
pub struct RunArtifact {
    pub summary: Summary,
    pub validation: ValidationFile,
}

pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    log: &MetricsLog,
    summary: Summary,
    validation: ValidationFile,
) -> Result<RunArtifact> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.json"), config.to_json_pretty() + "\n")
        .with_context(|| format!("writing config snapshot in {}", dir.display()))?;
    write_metrics_csv(&dir.join("metrics.csv"), &log.records)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("validation.json"), &validation)?;
    Ok(RunArtifact {
        summary,
        validation,
    })
}
