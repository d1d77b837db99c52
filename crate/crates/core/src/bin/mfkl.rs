use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfkl::harness::{
    emit_report, resolve_output_dir, run_experiment, ExperimentConfig, ExperimentKind,
};
use mfkl::{Error, Result};

/// Mean-field kinetic Langevin Monte Carlo experiments.
#[derive(Parser)]
#[command(name = "mfkl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `chain.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output_dir`, then
    /// `results/<kind>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: `MFKL_THREADS`, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the chain and write trajectory and state CSVs.
    Sample(RunArgs),
    /// Stationary bias against the step size.
    #[command(name = "sweep_h", alias = "sweep-h")]
    SweepH(RunArgs),
    /// Quadratic risk against the number of particles.
    #[command(name = "sweep_N", alias = "sweep-n", alias = "sweep_n")]
    SweepN(RunArgs),
    /// Distance to the self-consistent density along the chain.
    Converge(RunArgs),
    /// Monte Carlo check of the Lyapunov drift inequality.
    #[command(name = "lyapunov_check", alias = "lyapunov-check")]
    LyapunovCheck(RunArgs),
    /// Self-consistent fixed-point density.
    Oracle(RunArgs),
    /// Explicit constants as JSON.
    Constants(RunArgs),
    /// One quadratic risk estimate as JSON.
    Risk(RunArgs),
    /// Summarize the results under a directory.
    Report { dir: PathBuf },
}

fn threads(cli: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = cli {
        return Ok(Some(t));
    }
    match std::env::var("MFKL_THREADS") {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config("MFKL_THREADS", format!("not a thread count: {s}"))),
        _ => Ok(None),
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<()> {
    if let Some(t) = threads(args.threads)? {
        if t == 0 {
            return Err(Error::config("threads", "need at least one thread"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::config("threads", e.to_string()))?;
    }
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        match config.chain.as_mut() {
            Some(c) => c.seed = seed,
            None => log::warn!("--seed ignored: the config has no chain section"),
        }
    }
    let out = resolve_output_dir(args.out.as_deref(), &config, kind);
    let summary = run_experiment(&config, kind, &out)?;
    for g in &summary.gates {
        println!("{}", g.line(kind.name()));
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => run(ExperimentKind::Sample, a),
        Command::SweepH(a) => run(ExperimentKind::SweepH, a),
        Command::SweepN(a) => run(ExperimentKind::SweepN, a),
        Command::Converge(a) => run(ExperimentKind::Converge, a),
        Command::LyapunovCheck(a) => run(ExperimentKind::LyapunovCheck, a),
        Command::Oracle(a) => run(ExperimentKind::Oracle, a),
        Command::Constants(a) => run(ExperimentKind::Constants, a),
        Command::Risk(a) => run(ExperimentKind::Risk, a),
        Command::Report { dir } => emit_report(&dir).map(|r| {
            for l in &r.lines {
                println!("{l}");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
