use clap::{Parser, Subcommand};
use lyapsgd_cli::commands::{self, SimulateArgs};
use lyapsgd_cli::config::Params;
use lyapsgd_cli::experiments::{run_experiment, ExperimentId};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lyapsgd",
    version,
    about = "Lyapunov certificates, PEP programs and simulators for SGD"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long = "L", global = true)]
    l: Option<f64>,
    #[arg(long = "T", global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    /// Output file, or directory for `simulate`, `sprox` and `reproduce`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long = "solver-gap", global = true)]
    solver_gap: Option<f64>,
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    /// JSON file whose keys override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form bound row (Bound CSV).
    Bounds,
    /// Check the six sufficient conditions for the class recipe or a parameter file.
    Check {
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Solve the joint bias SDP, and the variance SDP with --variance.
    Pep {
        #[arg(long)]
        variance: bool,
        /// Write the bias program in SDPA sparse format.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// SGD trajectory and Monte-Carlo summaries.
    Simulate {
        /// Problem JSON; defaults to the two-point family.
        #[arg(long)]
        problem: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        probs: Option<Vec<f64>>,
    },
    /// Stochastic proximal trajectory and Monte-Carlo summaries.
    Sprox {
        /// JSON list of components; defaults to two halfspaces.
        #[arg(long)]
        components: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
    },
    /// Infeasibility certificate for a bias constant, in exact arithmetic.
    Certify {
        /// Decimal value of rho; defaults to rho_factor times rho_theory.
        #[arg(long)]
        rho: Option<String>,
        #[arg(long = "rho-factor", default_value = "1.01")]
        rho_factor: String,
    },
    /// Run a figure or suite sweep.
    Reproduce { id: ExperimentId },
}

fn params(cli: &Cli) -> lyapsgd::Result<Params> {
    let flags = Params {
        gamma: cli.gamma,
        mu: cli.mu,
        l: cli.l,
        horizon: cli.horizon,
        eps: cli.eps,
        m: cli.m,
        seed: cli.seed,
        trajectories: cli.trajectories,
        out: cli.out.clone(),
        solver_gap: cli.solver_gap,
        max_iter: cli.max_iter,
        ..Default::default()
    };
    Ok(match &cli.config {
        Some(path) => flags.overlay(Params::load(path)?),
        None => flags,
    })
}

fn run(cli: Cli) -> lyapsgd::Result<i32> {
    let p = params(&cli)?;
    match cli.cmd {
        Cmd::Bounds => commands::bounds(&p),
        Cmd::Check { params } => commands::check(&p, params.as_deref()),
        Cmd::Pep { variance, export } => commands::pep(&p, variance, export.as_deref()),
        Cmd::Simulate {
            problem,
            delta,
            x0,
            batch,
            probs,
        } => commands::simulate(
            &p,
            SimulateArgs {
                problem,
                delta,
                x0,
                batch,
                probs,
            },
        ),
        Cmd::Sprox { components, x0 } => commands::sprox(&p, components.as_deref(), x0),
        Cmd::Certify { rho, rho_factor } => commands::certify(&p, rho.as_deref(), &rho_factor),
        Cmd::Reproduce { id } => {
            let dir = p
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("out").join(id.as_str()));
            let m = run_experiment(id, &p, &dir)?;
            eprintln!(
                "{}: {} points, {} ok, wrote {} files to {} in {:.1}s",
                m.experiment,
                m.tally.points,
                m.tally.ok,
                m.files.len(),
                dir.display(),
                m.wall_time_s
            );
            Ok(m.exit_code)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(lyapsgd_cli::exit_code(&e) as u8)
        }
    }
}
