//! `cbf-bench`: run, compare and validate CBF-QP cruise-control scenarios.
//!
//! Exit codes: 0 feasible to the horizon, 2 configuration or I/O error,
//! 3 infeasible stage QP, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use cbf_bench::commands::{
    compare_scenarios, default_out_dir, run_scenario, selftest, validate_scenario,
    write_comparison, write_run, BenchError, EXIT_NUMERICAL, EXIT_OK, FD_TOL,
};
use cbf_bench::config::{load_scenario, ConfigError};
use cbf_core::cbf::Method;
use cbf_core::report::render_table;
use cbf_core::sim::DEFAULT_SUBSTEP;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cbf-bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the control hold (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Log the state every 1 ms inside each hold.
        #[arg(long)]
        substep_log: bool,
    },
    /// Run the scenario once per method and tabulate the results.
    Compare {
        config: PathBuf,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the analytic derivative chains against finite differences.
    Validate { config: PathBuf },
    /// QP oracle and finite-difference suites.
    Selftest {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 0x5eed_0001)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(cmd: Command) -> Result<i32, BenchError> {
    match cmd {
        Command::Run {
            config,
            out,
            dt,
            substep_log,
        } => {
            let cfg = load_scenario(&config)?;
            let mut scn = cfg.scenario.clone();
            if let Some(dt) = dt {
                scn.integrator.dt = dt;
            }
            if substep_log {
                scn.substep_log = Some(DEFAULT_SUBSTEP.min(scn.integrator.dt));
            }
            let outcome = run_scenario(&scn, scn.method().name())?;
            let dir = out.or(cfg.out_dir).unwrap_or_else(default_out_dir);
            write_run(&outcome, &dir)?;
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(e) = &outcome.error {
                eprintln!("error: {e}");
            }
            let s = &outcome.report.summary;
            println!(
                "{}: feasible to {:.1} s, min gap {:.4} m, |v(T) - v_p| = {:.4} m/s, max kkt {:.1e}",
                s.method, s.feasible_to, s.min_gap, s.terminal_speed_error, s.max_kkt_residual
            );
            println!("wrote {}", dir.display());
            Ok(outcome.exit_code())
        }
        Command::Compare {
            config,
            methods,
            out,
        } => {
            let cfg = load_scenario(&config)?;
            let mut members = Vec::new();
            for name in &methods {
                let m: Method =
                    name.parse()
                        .map_err(|e: cbf_core::cbf::CbfError| ConfigError::Invalid {
                            key: "methods".into(),
                            line: None,
                            msg: e.to_string(),
                        })?;
                members.push((m.name().to_string(), cfg.scenario_for(m)?));
            }
            let cmp = compare_scenarios(&members)?;
            let dir = out.or(cfg.out_dir).unwrap_or_else(default_out_dir);
            write_comparison(&cmp, &dir)?;
            print!("{}", cmp.render());
            println!("wrote {}", dir.display());
            Ok(cmp.exit_code())
        }
        Command::Validate { config } => {
            let cfg = load_scenario(&config)?;
            let (outcome, rep) = validate_scenario(&cfg.scenario)?;
            print!(
                "{}",
                render_table(&[cbf_core::report::ComparisonRow::new(
                    cfg.scenario.method().name(),
                    &outcome.trajectory,
                    outcome.report.summary.clone(),
                )])
            );
            println!(
                "max relative error {:.3e} over {} samples (worst: {} at t = {}), tolerance {FD_TOL:e}",
                rep.max_rel_err,
                rep.samples,
                rep.worst_label.unwrap_or("-"),
                rep.worst_time.map_or("-".into(), |t| format!("{t:.3}")),
            );
            if rep.max_rel_err > FD_TOL {
                println!("FAIL");
                return Ok(EXIT_NUMERICAL);
            }
            println!("PASS");
            Ok(outcome.exit_code())
        }
        Command::Selftest { cases, seed } => {
            let rep = selftest(cases, seed);
            for l in &rep.lines {
                println!("{l}");
            }
            Ok(if rep.passed { EXIT_OK } else { EXIT_NUMERICAL })
        }
    }
}
