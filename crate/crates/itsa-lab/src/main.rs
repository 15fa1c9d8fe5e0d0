use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itsa_lab::{apply_overrides, emit_plots, parse_config, run_experiment, ConfigError, ExperimentConfig, HarnessError, Overrides, Study};

#[derive(Parser)]
#[command(name = "itsa-lab", version, about = "Shortcut-perturbation and feature-distance experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Digit recognition with a colour-background target domain.
    Digit(RunArgs),
    /// Synthetic stereo matching under shortcut-revealing shifts.
    Stereo(RunArgs),
    /// Fisher-information estimator agreement and the first-order sweep.
    Fisher(RunArgs),
    /// Finite-difference checks of every primitive op.
    Gradcheck(RunArgs),
    /// Summary table and charts from metrics files.
    Plots(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// erm|ib|rib|itsa for digit, baseline|scp-only|itsa for stereo.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory searched recursively for metrics.csv files.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &RunArgs, study: Study) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let o = Overrides { seed: args.seed, method: args.method.clone(), epsilon: args.epsilon, lambda: args.lambda };
    apply_overrides(&mut cfg, study, &o)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (study, args) = match cli.command {
        Command::Plots(p) => {
            let out = emit_plots(&p.metrics, &p.out)?;
            println!("wrote {}", out.summary.display());
            for c in &out.charts {
                println!("wrote {}", c.display());
            }
            return Ok(());
        }
        Command::Digit(a) => (Study::Digit, a),
        Command::Stereo(a) => (Study::Stereo, a),
        Command::Fisher(a) => (Study::Fisher, a),
        Command::Gradcheck(a) => (Study::Gradcheck, a),
    };
    let cfg = load(&args, study)?;
    let report = run_experiment(study, &cfg, &args.out)?;
    for r in &report.runs {
        println!("{study} seed {}: {} records in {}", r.seed, r.records.len(), r.dir.display());
    }
    Ok(())
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
