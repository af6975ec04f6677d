use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use shelldiss::experiment::{
    report_directory, run_experiment, sweep, write_outputs, ExperimentConfig, ExperimentKind,
    SweepAxis,
};
use shelldiss::schedule::{build_schedule, validate_schedule};

#[derive(Parser)]
#[command(
    name = "shelldiss",
    version,
    about = "Shell-noise dissipation experiments on the torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of schedule stages.
    #[arg(long)]
    stages: Option<u32>,
    /// Fourier cutoff K.
    #[arg(long)]
    grid: Option<u32>,
    #[arg(long)]
    paths: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the parameter schedule against the stage conditions.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Largest stage to check; defaults to the last stage.
        #[arg(long)]
        q_max: Option<u32>,
    },
    /// Run one experiment and write ledgers, summary and manifest.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat an experiment over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// One of nu, kappa (shell radius) or eps.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Verify an output directory and summarize its ledgers.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> shelldiss::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(s) = common.stages {
        config.schedule.stages = s;
    }
    if let Some(k) = common.grid {
        config.grid = k;
    }
    if let Some(p) = common.paths {
        config.paths = p;
    }
    Ok(config)
}

fn print(v: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_json(path: &Path, v: &serde_json::Value) -> shelldiss::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn execute(cli: Cli) -> shelldiss::Result<bool> {
    match cli.command {
        Command::Validate { common, q_max } => {
            let config = load(&common)?;
            let schedule = build_schedule(&config.schedule)?;
            let q_max = q_max.unwrap_or(config.schedule.stages.saturating_sub(1));
            let report = validate_schedule(&schedule, q_max)?;
            print(&json!({ "schedule": schedule, "validation": report }));
            Ok(report.all_pass)
        }
        Command::Run { common, out } => {
            let config = load(&common)?;
            let result = run_experiment(&config)?;
            let manifest = write_outputs(&out, &config, &result)?;
            eprintln!(
                "wrote {} files to {}",
                manifest.files.len() + 1,
                out.display()
            );
            if config.experiment == ExperimentKind::ScheduleCheck {
                return Ok(result.summary["validation"]["all_pass"]
                    .as_bool()
                    .unwrap_or(false));
            }
            Ok(true)
        }
        Command::Sweep {
            common,
            out,
            axis,
            values,
        } => {
            let config = load(&common)?;
            let result = sweep(&config, axis, &values)?;
            std::fs::create_dir_all(&out)?;
            for (i, (v, run)) in result.runs.iter().enumerate() {
                let c = shelldiss::experiment::with_axis_value(&config, axis, *v)?;
                write_outputs(&out.join(format!("run{i}")), &c, run)?;
            }
            write_json(&out.join("sweep.json"), &result.summary)?;
            print(&result.summary);
            Ok(true)
        }
        Command::Report { out } => {
            let report = report_directory(&out)?;
            print(&report);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
