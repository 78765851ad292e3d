use std::path::PathBuf;
use std::process::ExitCode;

use chns::cli::config::{parse_config, Mode, Overrides};
use chns::cli::runner::{run, RunOutcome};
use clap::Parser;

/// Cahn-Hilliard-Navier-Stokes convex-splitting solver.
#[derive(Debug, Parser)]
#[command(name = "chns", version, allow_negative_numbers = true)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random initial phase with this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
    mesh: Option<Vec<usize>>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Newton tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = Overrides {
        mode: cli.mode,
        out: cli.out,
        seed: cli.seed,
        tau: cli.tau,
        mesh: cli.mesh.map(|v| (v[0], v[1])),
        epsilon: cli.epsilon,
        eta: cli.eta,
        gamma: cli.gamma,
        tol: cli.tol,
    };
    let config = match parse_config(cli.config.as_deref(), &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&config) {
        Ok(outcome) => {
            report(&outcome);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn report(outcome: &RunOutcome) {
    match outcome {
        RunOutcome::Simulate { rows } => {
            if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
                let worst = rows.iter().map(|r| r.energy_law_residual).fold(0.0, f64::max);
                println!("{} levels, F: {:.6e} -> {:.6e}, max energy-law residual {:.3e}", rows.len(), first.f, last.f, worst);
            }
        }
        RunOutcome::Study { table } => {
            println!("{:>10} {:>10} {:>12} {:>12} {:>12} {:>12}", "h", "tau", "phi_h1", "u_l2", "mu_l2h1", "ubar_l2h1");
            for r in &table.rows {
                let e = &r.errors;
                println!(
                    "{:>10.4e} {:>10.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                    r.h, r.tau, e.phi_linf_h1, e.u_linf_l2, e.mu_l2_h1, e.ubar_l2_h1
                );
            }
            for r in table.rates() {
                println!("rates: phi {:.3} u {:.3} mu {:.3} ubar {:.3} combined {:.3}", r.phi_linf_h1, r.u_linf_l2, r.mu_l2_h1, r.ubar_l2_h1, r.combined);
            }
        }
        RunOutcome::Sweep { rows } => {
            for r in rows {
                println!("tau {:.0e}: newton <= {}, F1 {:.6e}, max F {:.6e}, {}", r.tau, r.max_newton_iters, r.f1, r.f_max, if r.monotone { "pass" } else { "fail" });
            }
        }
        RunOutcome::Gronwall { summary } => {
            println!(
                "standard: {} instances, {} violations; weighted: {} instances, {} violations",
                summary.standard_instances, summary.standard_violations, summary.weighted_instances, summary.weighted_violations
            );
        }
    }
}
