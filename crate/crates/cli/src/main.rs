use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spiked_cli::config::{ConfigError, Experiment, ExperimentConfig};
use spiked_cli::experiments::{self as exp, Report, Row};
use spiked_cli::output::{describe_failure, write_csv, write_fisher_json};

#[derive(Parser)]
#[command(name = "simulate", version, about = "Simulate non-linear rank-one spiked matrix estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file; defaults to the config's `output`, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the config's `workers`, else all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fisher coefficients, critical order and scaling of the channel (JSON).
    FisherInfo(RunArgs),
    /// State-evolution trajectories from the spectral start.
    SeCurve(RunArgs),
    /// Asymptotic MMSE and estimator predictions over the grid.
    MmseCurve(RunArgs),
    /// Empirical matrix MSE of each estimator per (gamma0, seed).
    MseSweep(RunArgs),
    /// Top two eigenvalues of the Fisher and raw matrices per (gamma0, seed).
    EigengapSweep(RunArgs),
    /// Per-iteration AMP overlaps per (gamma0, seed).
    AmpRun(RunArgs),
}

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

enum Failure {
    Config(ConfigError),
    Io(io::Error),
    Run(String),
}

fn open_output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit<R: Row>(
    experiment: Experiment,
    cfg: &ExperimentConfig,
    out: Option<&PathBuf>,
    report: Report<R>,
) -> Result<usize, Failure> {
    write_csv(open_output(out).map_err(Failure::Io)?, experiment, cfg, &report).map_err(Failure::Io)?;
    for f in &report.failures {
        eprintln!("simulate: cell failed: {}", describe_failure(f));
    }
    Ok(report.failures.len())
}

fn run(experiment: Experiment, args: RunArgs) -> Result<usize, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(Failure::Config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate(experiment).map_err(Failure::Config)?;
    let out = args.out.or_else(|| cfg.output.clone());
    let pool = exp::build_pool(cfg.workers.unwrap_or_else(exp::default_workers));
    match experiment {
        Experiment::FisherInfo => {
            let results = exp::run_fisher_info(&cfg).map_err(|e| Failure::Run(e.to_string()))?;
            write_fisher_json(open_output(out.as_ref()).map_err(Failure::Io)?, &cfg, &results).map_err(Failure::Io)?;
            Ok(0)
        }
        Experiment::SeCurve => emit(experiment, &cfg, out.as_ref(), exp::run_se_curve(&cfg, &pool)),
        Experiment::MmseCurve => emit(experiment, &cfg, out.as_ref(), exp::run_mmse_curve(&cfg, &pool)),
        Experiment::MseSweep => emit(experiment, &cfg, out.as_ref(), exp::run_mse_sweep(&cfg, &pool)),
        Experiment::EigengapSweep => emit(experiment, &cfg, out.as_ref(), exp::run_eigengap_sweep(&cfg, &pool)),
        Experiment::AmpRun => emit(experiment, &cfg, out.as_ref(), exp::run_amp(&cfg, &pool)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (experiment, args) = match cli.command {
        Command::FisherInfo(a) => (Experiment::FisherInfo, a),
        Command::SeCurve(a) => (Experiment::SeCurve, a),
        Command::MmseCurve(a) => (Experiment::MmseCurve, a),
        Command::MseSweep(a) => (Experiment::MseSweep, a),
        Command::EigengapSweep(a) => (Experiment::EigengapSweep, a),
        Command::AmpRun(a) => (Experiment::AmpRun, a),
    };
    match run(experiment, args) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("simulate: {n} cell(s) failed");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(Failure::Config(e)) => {
            eprintln!("simulate: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(e)) => {
            eprintln!("simulate: write failed: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) => {
            eprintln!("simulate: {e}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
