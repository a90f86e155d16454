use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlch::config::RunConfig;
use nlch::experiments::{
    cmd_adjoint_sweep, cmd_control_convergence, cmd_eps_sweep, cmd_forward, cmd_grad_check,
    cmd_optimize, cmd_validate, render_adjoint_table, render_control_table, render_state_table,
    RunFailure,
};

/// Nonlocal and local Cahn-Hilliard tumor-growth solver with adjoint-based
/// optimal control.
#[derive(Parser)]
#[command(name = "nlch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "nlch.conf")]
    config: PathBuf,

    /// Output directory for CSV tables and snapshots.
    #[arg(long, global = true, default_value = "nlch-out")]
    out: PathBuf,

    /// Worker threads for sweep entries and parallel cost evaluations.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured snapshot stride (0 disables snapshots).
    #[arg(long, global = true)]
    snapshots: Option<usize>,

    /// Enable gated (expensive) experiments.
    #[arg(long, global = true)]
    full: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the state system and write diagnostics.
    Forward,
    /// Nonlocal-to-local sweep of the state system over kernel.epsilons.
    EpsSweep,
    /// Nonlocal-to-local sweep of the dual system over kernel.epsilons.
    AdjointSweep,
    /// Taylor-remainder verification of the reduced gradient.
    GradCheck,
    /// Projected-gradient optimization of the tracking cost.
    Optimize,
    /// Convergence of adapted nonlocal optimal controls to a local optimum.
    ControlConvergence,
    /// Check the model assumptions for the configured parameters.
    Validate,
}

fn run(cli: &Cli) -> Result<(), RunFailure> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(stride) = cli.snapshots {
        cfg.snapshot_stride = stride;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| RunFailure::Validation(format!("could not size the worker pool: {e}")))?;
    }

    match cli.command {
        Command::Forward => {
            let summary = cmd_forward(&cfg, &cli.out)?;
            println!("forward: {summary}");
            println!("wrote {}", cli.out.join("diagnostics.csv").display());
        }
        Command::EpsSweep => {
            let rows = cmd_eps_sweep(&cfg, &cli.out)?;
            print!("{}", render_state_table(&rows));
            println!("state errors strictly decreasing across the epsilon list");
        }
        Command::AdjointSweep => {
            let rows = cmd_adjoint_sweep(&cfg, &cli.out)?;
            print!("{}", render_adjoint_table(&rows));
            println!("dual errors strictly decreasing across the epsilon list");
        }
        Command::GradCheck => {
            let report = cmd_grad_check(&cfg, &cli.out)?;
            println!(
                "taylor slope {:.4} (thresholds [{}, {}])",
                report.slope, cfg.gradcheck_slope_min, cfg.gradcheck_slope_max
            );
            println!(
                "first-order relative error {:.3e} (threshold {:.3e})",
                report.fd_rel_err, cfg.gradcheck_fo_err_max
            );
            for (s, r) in report.sigmas.iter().zip(&report.remainders) {
                println!("  sigma {s:.6}  remainder {r:.6e}");
            }
        }
        Command::Optimize => {
            let outcome = cmd_optimize(&cfg, &cli.out)?;
            println!(
                "optimize: {} iterations, cost {:.6e}, vi_residual {:.3e}",
                outcome.history.len(),
                outcome.final_cost,
                outcome.final_residual
            );
            println!("wrote {}", cli.out.join("history.csv").display());
        }
        Command::ControlConvergence => {
            let rows = cmd_control_convergence(&cfg, &cli.out, cli.full)?;
            print!("{}", render_control_table(&rows));
            println!("anchor distances non-increasing across the epsilon list");
        }
        Command::Validate => {
            let report = cmd_validate(&cfg)?;
            print!("{report}");
            println!("all assumption checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
