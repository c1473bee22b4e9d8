use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use senspace_cli::config::RunConfig;
use senspace_cli::error::{CliError, CliResult};
use senspace_cli::report::Summary;
use senspace_cli::{emit_report, output_dir, run_pipeline};

/// Numerics for the adiabatic gluing of Gibbons–Hawking and Atiyah–Hitchin spaces.
#[derive(Parser)]
#[command(name = "senspace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline of a config file.
    Run { config: PathBuf },
    /// Run one verification suite.
    Verify {
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one scan.
    Scan {
        kind: ScanKind,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Integrate the Atiyah–Hitchin profile and write it as CSV.
    ProfileAh {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rebuild summary.json from a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    AppendixA,
    Triples,
    Flux,
    ModeSolvers,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScanKind {
    Glue,
    Commutator,
    Defect,
}

fn load(config: Option<PathBuf>) -> CliResult<RunConfig> {
    match config {
        Some(p) => RunConfig::load(&p),
        None => Ok(RunConfig::default()),
    }
}

/// Runs `stage` alone; a failed criterion is a stage failure.
fn single(config: Option<PathBuf>, stage: &str) -> CliResult<Summary> {
    let mut cfg = load(config)?;
    cfg.pipeline = vec![stage.to_string()];
    let summary = run_pipeline(&cfg, &output_dir(&cfg))?;
    if let Some(c) = summary.criteria.iter().find(|c| !c.pass) {
        return Err(CliError::stage(stage, format!("criterion {} ({}) not met: {}", c.id, c.name, c.measured)));
    }
    Ok(summary)
}

fn dispatch(cli: Cli) -> CliResult<Summary> {
    match cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            run_pipeline(&cfg, &output_dir(&cfg))
        }
        Command::Verify { suite, config } => {
            let stage = match suite {
                Suite::AppendixA => "verify-appendix-a",
                Suite::Triples => "triples",
                Suite::Flux => "connection",
                Suite::ModeSolvers => "mode-solvers",
            };
            single(config, stage)
        }
        Command::Scan { kind, config } => {
            let stage = match kind {
                ScanKind::Glue => "glue-scan",
                ScanKind::Commutator => "commutator-scan",
                ScanKind::Defect => "defect-profile",
            };
            let mut cfg = load(config)?;
            cfg.pipeline = vec![stage.to_string()];
            run_pipeline(&cfg, &output_dir(&cfg))
        }
        Command::ProfileAh { config } => single(config, "profile-ah"),
        Command::Report { run_dir } => emit_report(&run_dir),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
