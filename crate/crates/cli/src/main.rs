use std::path::PathBuf;
use std::process::ExitCode;

use cbclab_cli::config::REFERENCE_CONFIG;
use cbclab_cli::{escape, floquet, oracle, perturbation, surface, sweep, CliResult, ExperimentConfig, RunContext};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cbclab", version, about = "Control-based continuation experiments on a simulated rig")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, value_name = "N", default_value_t = 0)]
    jobs: usize,
    /// Overrides the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Amplitude continuations at each configured frequency.
    Sweep(Common),
    /// Floquet multipliers along the stored branches.
    Floquet(Common),
    /// Open-loop escapes from an unstable orbit.
    Escape(Common),
    /// Multiplier spread against perturbation size.
    PerturbationStudy(Common),
    /// GP surface, fold curve and fixed-forcing slices.
    Surface(Common),
    /// Variational and finite-difference monodromy of stored orbits.
    Oracle(Common),
    /// Prints the commented reference configuration.
    ReferenceConfig,
}

fn context(common: &Common) -> CliResult<RunContext> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    RunContext::new(config, common.jobs)
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Sweep(c) => {
            let report = sweep::run(&context(&c)?)?;
            eprintln!("{} sweeps written", report.runs.len());
            sweep::check(&report)
        }
        Command::Floquet(c) => {
            let branches = floquet::run(&context(&c)?)?;
            eprintln!("{} branches analysed", branches.len());
            Ok(())
        }
        Command::Escape(c) => {
            let report = escape::run(&context(&c)?)?;
            let s = &report.summary;
            eprintln!(
                "{} high, {} low; perpendicular ratio {}",
                s.high,
                s.low,
                s.perpendicular_ratio.map_or("n/a".into(), |r| format!("{r:.3}"))
            );
            Ok(())
        }
        Command::PerturbationStudy(c) => {
            perturbation::run(&context(&c)?)?;
            Ok(())
        }
        Command::Surface(c) => {
            let report = surface::run(&context(&c)?)?;
            if let Some(f) = report.summary.holdout_rms_fraction {
                eprintln!("held-out RMS {:.3}% of the forcing range", 100.0 * f);
            }
            Ok(())
        }
        Command::Oracle(c) => {
            let report = oracle::run(&context(&c)?)?;
            eprintln!("{} orbits evaluated", report.rows.len());
            Ok(())
        }
        Command::ReferenceConfig => {
            print!("{REFERENCE_CONFIG}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
