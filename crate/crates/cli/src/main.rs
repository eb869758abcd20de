mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "floodmem", version, about = "Flood risk, awareness and home prices")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Awareness half-life: 7y, 10y, 17y or a day count.
    #[arg(long, global = true)]
    tau: Option<String>,
    /// Spatial fixed effects: municipality, omi or tract.
    #[arg(long, global = true)]
    fe: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for tagging and estimation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Merge contracts with cadastral units and keep the purchase sample.
    Ingest,
    /// Assign administrative units, risk levels and flood-hit classes.
    Tag,
    /// Attach sale-time awareness and export regional awareness series.
    Awareness,
    /// Estimate a cross-sectional design.
    Fit {
        /// baseline, region, awareness, quadruple, income, income_triple or risk_levels.
        design: String,
    },
    /// Event-study around one flood.
    Diffindiff {
        /// JSON file with `code`, `date` and optional `regions`.
        #[arg(long)]
        event: Option<PathBuf>,
    },
    /// Re-estimate a design over the robustness grid.
    Sweep {
        /// A design name or `diffindiff`; defaults to the configured design.
        #[arg(long)]
        design: Option<String>,
    },
    /// Residual spatial autocorrelation and pre/post balance.
    Diagnose {
        #[arg(long)]
        design: Option<String>,
    },
    /// Write a synthetic dataset with known coefficients.
    Synth,
}

/// Failure reported as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            kind: "config",
            stage: None,
            message: msg.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            stage: None,
            message: msg.into(),
        }
    }
}

impl From<floodmem::Error> for CliError {
    fn from(e: floodmem::Error) -> Self {
        let kind = match &e {
            floodmem::Error::MissingColumns(_) => "missing_columns",
            floodmem::Error::Stage { source, .. } if matches!(**source, floodmem::Error::MissingColumns(_)) => {
                "missing_columns"
            }
            floodmem::Error::Io(_) => "io",
            _ => "pipeline",
        };
        CliError {
            kind,
            stage: e.stage().map(str::to_string),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            kind: "io",
            stage: None,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError {
            kind: "io",
            stage: None,
            message: e.to_string(),
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = &cli.tau {
        cfg.tau = t.clone();
    }
    if let Some(f) = &cli.fe {
        cfg.fe = f.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let ctx = commands::Context::new(cfg)?;
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Tag => commands::tag(&ctx),
        Command::Awareness => commands::awareness(&ctx),
        Command::Fit { design } => commands::fit(&ctx, &design),
        Command::Diffindiff { event } => commands::diffindiff(&ctx, event.as_deref()),
        Command::Sweep { design } => commands::sweep(&ctx, design.as_deref()),
        Command::Diagnose { design } => commands::diagnose(&ctx, design.as_deref()),
        Command::Synth => commands::synth(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let err = CliError::usage(e.to_string().trim_end());
            eprintln!("{}", serde_json::to_string(&err).expect("error serializes"));
            return ExitCode::from(2);
        }
        Err(e) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
            ExitCode::from(if e.kind == "usage" { 2 } else { 1 })
        }
    }
}
