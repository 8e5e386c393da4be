//! Command-line front end for the localams simulator.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 invalid config,
//! 3 run aborted on divergence, 4 a validator failed.

mod artifacts;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use localams::config::ConfigError;
use localams::simulator::{run_experiment, SimError, SweepAxis};
use localams::{Algorithm, ExperimentConfig};

use artifacts::{write_run, RunArtifact, Summary, ValidationFile};

#[derive(Parser)]
#[command(
    name = "localams",
    version,
    about = "Federated optimizer simulator with periodic model averaging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the divergence example under the naive and shared-v̂ algorithms
    Counterexample {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        iters: u64,
    },
    /// Run one experiment per value of a config axis
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// alpha, k, N or algorithm
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run with full tracing and report every validator
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(ConfigError),
    Diverged(String),
    Validation(String),
    Other(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::Validation(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "invalid config: {e}"),
            Failure::Diverged(msg) => write!(f, "diverged: {msg}"),
            Failure::Validation(msg) => write!(f, "validation failed: {msg}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

enum RunStatus {
    Completed,
    Aborted { t: u64, reason: String },
}

/// Runs `config` and writes its artifacts into `dir`, whatever the outcome.
fn execute(config: &ExperimentConfig, dir: &Path) -> Result<(RunArtifact, RunStatus), Failure> {
    let start = Instant::now();
    match run_experiment(config) {
        Ok(output) => {
            let elapsed = start.elapsed().as_secs_f64();
            let validation = ValidationFile::from_run(&output)?;
            let summary = Summary::new(&output.log, elapsed, None);
            let artifact = write_run(dir, config, &output.log, summary, validation)?;
            Ok((artifact, RunStatus::Completed))
        }
        Err(SimError::Diverged { t, reason, log }) => {
            let elapsed = start.elapsed().as_secs_f64();
            let summary = Summary::new(&log, elapsed, Some((t, reason.clone())));
            let validation = ValidationFile::aborted(config.validators, t);
            let artifact = write_run(dir, config, &log, summary, validation)?;
            Ok((artifact, RunStatus::Aborted { t, reason }))
        }
        Err(SimError::Config(e)) => Err(Failure::Config(e)),
        Err(e) => Err(Failure::Other(e.into())),
    }
}

fn check_status(artifact: &RunArtifact, status: RunStatus, dir: &Path) -> Result<(), Failure> {
    if let RunStatus::Aborted { t, reason } = status {
        return Err(Failure::Diverged(format!(
            "{} at iteration {t}: {reason}",
            dir.display()
        )));
    }
    if !artifact.validation.all_passed {
        return Err(Failure::Validation(format!(
            "see {}",
            dir.join("validation.json").display()
        )));
    }
    Ok(())
}

fn print_summary(dir: &Path, s: &Summary) {
    println!(
        "{}: {} T={} final_f={:.6e} stationarity={:.6e} comm_bytes={} sync_rounds={} diverged={}",
        dir.display(),
        s.algorithm,
        s.total_iters,
        s.final_f,
        s.stationarity,
        s.comm_bytes,
        s.sync_rounds,
        s.diverged
    );
}

fn cmd_run(config: &Path, out: &Path) -> Result<(), Failure> {
    let config = load_config(config)?;
    let (artifact, status) = execute(&config, out)?;
    print_summary(out, &artifact.summary);
    check_status(&artifact, status, out)
}

fn cmd_counterexample(out: &Path, iters: u64) -> Result<(), Failure> {
    let mut paths = Vec::new();
    let mut outcomes = Vec::new();
    for (name, alg) in [
        ("naive", Algorithm::NaiveLocalAmsgrad),
        ("shared", Algorithm::LocalAmsgrad),
    ] {
        let config = ExperimentConfig::counterexample(alg, iters);
        let dir = out.join(name);
        let start = Instant::now();
        let output = run_experiment(&config).map_err(|e| Failure::Other(e.into()))?;
        let trace = output
            .trace
            .as_ref()
            .context("counterexample preset keeps a trace")?;
        // x̄ after t updates, t = 0..=T
        let path: Vec<f64> = (1..=iters + 1).map(|t| trace.xbar(t)[0]).collect();
        let validation = ValidationFile::from_run(&output)?;
        let summary = Summary::new(&output.log, start.elapsed().as_secs_f64(), None);
        let artifact = write_run(&dir, &config, &output.log, summary, validation)?;
        paths.push(path);
        outcomes.push((name, artifact, dir));
    }

    println!("{:>4}  {:>22}  {:>22}", "t", "x̄ naive", "x̄ shared");
    for (t, (naive, shared)) in paths[0].iter().zip(&paths[1]).take(11).enumerate() {
        println!("{t:>4}  {naive:>22.16}  {shared:>22.16}");
    }
    println!();
    for ((name, artifact, _), path) in outcomes.iter().zip(&paths) {
        let s = &artifact.summary;
        let verdict = if s.diverged {
            "moves away from the stationary point x = 0"
        } else {
            "converges toward the stationary point x = 0"
        };
        println!(
            "{name}: x̄_T = {:.6e}, f(x̄_T) = {:.6e}, diverged = {} ({verdict})",
            path[iters as usize], s.final_f, s.diverged
        );
    }
    for (_, artifact, dir) in &outcomes {
        if !artifact.validation.all_passed {
            return Err(Failure::Validation(format!(
                "see {}",
                dir.join("validation.json").display()
            )));
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct SweepLine<'a> {
    value: &'a str,
    stationarity: f64,
    comm_bytes: u64,
}

fn cmd_sweep(config: &Path, axis: SweepAxis, values: &[String], out: &Path) -> Result<(), Failure> {
    let base = load_config(config)?;
    let configs = values
        .iter()
        .map(|v| axis.apply(&base, v).map(|c| (v.trim().to_string(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let axis_name = axis_name(axis);
    let mut first_failure = None;
    let mut rows = Vec::new();
    for (value, config) in &configs {
        let dir = out.join(format!("{axis_name}_{value}"));
        let (artifact, status) = execute(config, &dir)?;
        print_summary(&dir, &artifact.summary);
        rows.push((
            value.clone(),
            artifact.summary.stationarity,
            artifact.summary.comm_bytes,
        ));
        if let Err(f) = check_status(&artifact, status, &dir) {
            first_failure.get_or_insert(f);
        }
    }

    let path = out.join("sweep_summary.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .with_context(|| format!("creating {}", path.display()))?;
    for (value, stationarity, comm_bytes) in &rows {
        w.serialize(SweepLine {
            value,
            stationarity: *stationarity,
            comm_bytes: *comm_bytes,
        })
        .context("writing sweep summary")?;
    }
    w.flush().context("writing sweep summary")?;
    first_failure.map_or(Ok(()), Err)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Alpha => "alpha",
        SweepAxis::K => "k",
        SweepAxis::N => "N",
        SweepAxis::Algorithm => "algorithm",
    }
}

fn cmd_validate(config: &Path, out: &Path) -> Result<(), Failure> {
    let mut config = load_config(config)?;
    if config.cadence != 1 {
        return Err(
            ConfigError::new("cadence", "validation needs a full trace (cadence = 1)").into(),
        );
    }
    config.validators = true;
    let (artifact, status) = execute(&config, out)?;
    if let Some(report) = &artifact.validation.report {
        for c in &report.checks {
            let status = match c.status {
                localams::analysis::CheckStatus::Pass => "PASS",
                localams::analysis::CheckStatus::Fail => "FAIL",
                localams::analysis::CheckStatus::NotApplicable => "N/A ",
            };
            println!(
                "{status} {}: max = {:e} (threshold {:e}); {}",
                c.name, c.max_value, c.threshold, c.detail
            );
        }
    }
    check_status(&artifact, status, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Counterexample { out, iters } => cmd_counterexample(out, *iters),
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => cmd_sweep(config, *axis, values, out),
        Command::Validate { config, out } => cmd_validate(config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
