use clap::{Parser, Subcommand};
use dlra_cli::config::{ExperimentConfig, ModeKind, ModelKind, Overrides};
use dlra_cli::{init_workers, runner};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dlra",
    about = "Rank-adaptive parallel basis-update & Galerkin integrators: experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the experiment configuration.
        config: PathBuf,
        #[command(subcommand)]
        experiment: Experiment,
    },
}

#[derive(clap::Args, Debug, Clone)]
struct CommonFlags {
    /// Override the truncation tolerance θ.
    #[arg(long)]
    theta: Option<f64>,
    /// Override the step-size list (comma separated).
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    /// Override the final time.
    #[arg(long)]
    tmax: Option<f64>,
    /// Override the model (ising|planesource|synthetic-matrix|synthetic-tucker).
    #[arg(long)]
    model: Option<ModelKind>,
    /// Override the integrator (parallel|rank-adaptive).
    #[arg(long)]
    mode: Option<ModeKind>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Error against the model oracle over a sweep of step sizes.
    Convergence(CommonFlags),
    /// Per-step, per-node bond dimensions and η estimates.
    Ranktrace(CommonFlags),
    /// Scalar-flux statistics of the transport benchmark.
    Planesource(CommonFlags),
    /// Error sensitivity to tiny padded singular values.
    Robustness(CommonFlags),
}

impl Experiment {
    fn flags(&self) -> &CommonFlags {
        match self {
            Experiment::Convergence(f)
            | Experiment::Ranktrace(f)
            | Experiment::Planesource(f)
            | Experiment::Robustness(f) => f,
        }
    }
}

fn overrides(flags: &CommonFlags) -> Overrides {
    Overrides {
        theta: flags.theta,
        h: flags.h.clone(),
        t_end: flags.tmax,
        model: flags.model,
        mode: flags.mode,
        output_dir: flags.out.clone(),
    }
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse();
    let Command::Run { config, experiment } = cli.command;
    let mut cfg = match ExperimentConfig::from_file(&config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    cfg.apply_overrides(&overrides(experiment.flags()));
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    let result = match &experiment {
        Experiment::Convergence(_) => runner::run_convergence(&cfg),
        Experiment::Ranktrace(_) => runner::run_rank_trace(&cfg),
        Experiment::Planesource(_) => runner::run_planesource(&cfg),
        Experiment::Robustness(_) => runner::run_robustness(&cfg),
    };
    match result {
        Ok(path) => {
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
