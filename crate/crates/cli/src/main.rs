//! `rbsched`: run, solve and compare resource-block schedulers on a scenario file.
//!
//! Results go to stdout as JSON. Failures exit nonzero with
//! `{"error":{"kind":..,"message":..}}` on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand, ValueEnum};
use rbsched_core::engine::rates_from_phi;
use rbsched_core::harness::{compare_policies, qoe, run_experiment, PolicyPreset};
use rbsched_core::oracle::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use rbsched_core::scenario::PolicyKind;
use rbsched_core::{parse_scenario, solve_optimal_phi, Error, Scenario};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "rbsched", version, about = "Application-aware LTE resource-block scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Upf,
    Wpf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the online scheduler and write trace.csv and summary.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's policy.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Overrides the scenario's frame count.
        #[arg(long)]
        frames: Option<u64>,
        /// Overrides the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "RBSCHED_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Solve for the optimal fractions offline.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
    },
    /// Run several policies on the same scenario and tabulate the results.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated list from upf, wpf, wpf-equal, wpf-10-1.
        #[arg(long, default_value = "upf,wpf-equal,wpf-10-1")]
        policies: String,
        #[arg(long)]
        frames: Option<u64>,
        #[arg(long, env = "RBSCHED_OUT_DIR")]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<Scenario, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

fn execute(command: Command) -> Result<Value, Error> {
    match command {
        Command::Run {
            scenario,
            policy,
            frames,
            seed,
            out,
        } => {
            let mut s = load(&scenario)?;
            if let Some(p) = policy {
                s = s.with_policy(match p {
                    PolicyArg::Upf => PolicyKind::Upf,
                    PolicyArg::Wpf => PolicyKind::Wpf,
                });
            }
            if let Some(k) = frames {
                s = s.with_frames(k)?;
            }
            if let Some(seed) = seed {
                s = s.with_seed(seed);
            }
            let run = run_experiment(&s, out.as_deref())?;
            let r = &run.report;
            Ok(json!({
                "policy": r.policy,
                "frames": r.frames,
                "L": r.objective.value,
                "below_floor": r.objective.below_floor,
                "rates": r.rates,
                "qoe": r.qoe,
                "scenario_digest": r.scenario_digest,
                "wall_clock_ms": run.wall_clock.as_secs_f64() * 1e3,
                "out_dir": out,
            }))
        }
        Command::Oracle {
            scenario,
            tol,
            max_iters,
        } => {
            let s = load(&scenario)?;
            let sol = solve_optimal_phi(&s, tol, max_iters)?;
            let mut rates = vec![0.0; s.ues().len()];
            for (cell, phi) in s.cell_instances()?.iter().zip(&sol.phi_star) {
                for (&ue, r) in cell.ues.iter().zip(rates_from_phi(phi, &cell.gains)?) {
                    rates[ue] = r;
                }
            }
            let phi: Vec<Vec<Vec<f64>>> = sol.phi_star.iter().map(|m| m.to_rows()).collect();
            Ok(json!({
                "L_star": sol.l_star,
                "kkt_residual": sol.kkt_residual,
                "iterations": sol.iterations,
                "converged": sol.converged,
                "rates": rates,
                "qoe": qoe(&s.utilities(), &rates)?,
                "phi_star": phi,
            }))
        }
        Command::Compare {
            scenario,
            policies,
            frames,
            out,
        } => {
            let mut s = load(&scenario)?;
            if let Some(k) = frames {
                s = s.with_frames(k)?;
            }
            let presets = PolicyPreset::parse_list(&policies)?;
            let cmp = compare_policies(&s, &presets, out.as_deref())?;
            Ok(json!({ "policies": cmp.rows, "out_dir": out }))
        }
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim_end().to_string(), 2),
    };
    match execute(cli.command) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json output"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
