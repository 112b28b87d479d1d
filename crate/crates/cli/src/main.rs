use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minset::artifacts;
use minset::config::{parse_config, RunConfig};
use minset::error::CliError;
use minset::pipeline::{self, Status};

/// Certified outer approximations of parametric minimizer sets.
#[derive(Parser)]
#[command(name = "minset", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize and certify a tube; writes tube.csv and certificate.json.
    Certify(RunArgs),
    /// Sample the true dynamics and check containment; writes oracle.csv and containment.json.
    Oracle(RunArgs),
    /// Join earlier artifacts into figure_data.csv.
    Report(RunArgs),
    /// Run certify, oracle and report in order.
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the computed curvature bound on iterate rows.
    #[arg(long)]
    mu_override: Option<f64>,
    /// Bound the initial deviation by half the parameter diameter.
    #[arg(long)]
    half_diameter: bool,
}

fn load(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(mu) = args.mu_override {
        cfg.synthesis.mu_override = Some(mu);
        cfg.synthesis.validate()?;
    }
    if args.half_diameter {
        cfg.synthesis.half_diameter = true;
    }
    Ok(cfg)
}

type Stage = fn(&RunConfig) -> Result<Status, CliError>;

fn run(cli: &Cli) -> Result<Status, CliError> {
    let (args, stage): (&RunArgs, Stage) = match &cli.command {
        Command::Certify(a) => (a, pipeline::run_certify),
        Command::Oracle(a) => (a, pipeline::run_oracle),
        Command::Report(a) => (a, pipeline::run_report),
        Command::All(a) => (a, pipeline::run_all),
    };
    match load(args) {
        Ok(cfg) => stage(&cfg),
        Err(CliError::Infeasible {
            name,
            output_dir,
            error,
        }) => {
            let dir = args.out.clone().unwrap_or(output_dir);
            pipeline::write_failure(&dir, &artifacts::failure_json(&name, None, &error))?;
            eprintln!("minset: infeasible: {error}");
            Ok(Status::Infeasible)
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(status) => {
            match status {
                Status::Ok => {}
                Status::Infeasible => eprintln!("minset: certificate is not sound"),
                Status::ContainmentFailure => eprintln!("minset: containment check failed"),
            }
            ExitCode::from(status.exit_code())
        }
        Err(e) => {
            eprintln!("minset: {e}");
            ExitCode::from(1)
        }
    }
}
