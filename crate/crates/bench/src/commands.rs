//! The `run`, `compare`, `validate` and `selftest` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbf_core::acc::{AccParams, BoundProfile, PlantState};
use cbf_core::cbf::{AuxState, Method, MethodParams};
use cbf_core::ode::IntegratorConfig;
use cbf_core::report::{render_table, ComparisonRow, RunSummary};
use cbf_core::selftest::{fd_suite, qp_oracle_suite};
use cbf_core::sim::{run_closed_loop, Scenario, SimError, Trajectory, DEFAULT_SUBSTEP};
use cbf_core::validate::{finite_diff_validate, AccChainEvaluator, FdReport};
use serde::Serialize;
use thiserror::Error;

use crate::config::ConfigError;
use crate::output::{write_csv_file, write_json_file, OutputError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Worst relative finite-difference error accepted by `validate`.
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing output: {0}")]
    Output(#[from] OutputError),
    #[error("{label}: {source}")]
    Sim { label: String, source: SimError },
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Output(_) => EXIT_CONFIG,
            BenchError::Sim { source, .. } => match source {
                SimError::Config(_) | SimError::Model(_) => EXIT_CONFIG,
                SimError::Qp { .. }
                | SimError::Integration { .. }
                | SimError::NonPositiveSpeed { .. } => EXIT_NUMERICAL,
            },
        }
    }
}

/// Serializable echo of the scenario that produced a run.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioEcho {
    pub plant: AccParams,
    pub params: MethodParams,
    pub bounds: BoundProfile,
    pub initial: PlantState,
    pub aux0: AuxState,
    pub horizon: f64,
    pub integrator: IntegratorConfig,
}

impl From<&Scenario> for ScenarioEcho {
    fn from(s: &Scenario) -> Self {
        Self {
            plant: s.plant.clone(),
            params: s.params.clone(),
            bounds: s.bounds.clone(),
            initial: s.initial,
            aux0: s.aux0,
            horizon: s.horizon,
            integrator: s.integrator,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub summary: RunSummary,
    pub warnings: Vec<String>,
    /// Set when the run aborted on a numerical failure.
    pub error: Option<String>,
    pub scenario: ScenarioEcho,
}

/// Result of one closed-loop run. `error` carries a numerical abort; the
/// trajectory is then the part completed before it.
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub report: RunReport,
    pub error: Option<SimError>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            EXIT_NUMERICAL
        } else if self.trajectory.feasible_to_horizon() {
            EXIT_OK
        } else {
            EXIT_INFEASIBLE
        }
    }
}

/// Runs a scenario, keeping partial trajectories from numerical aborts.
pub fn run_scenario(scn: &Scenario, label: &str) -> Result<RunOutcome, BenchError> {
    let warnings = scn.validate().map_err(|source| BenchError::Sim {
        label: label.to_string(),
        source,
    })?;
    let start = Instant::now();
    let (trajectory, error) = match run_closed_loop(scn) {
        Ok(t) => (t, None),
        Err(e) => match e.partial() {
            Some(p) => (p.clone(), Some(e)),
            None => {
                return Err(BenchError::Sim {
                    label: label.to_string(),
                    source: e,
                })
            }
        },
    };
    let wall = start.elapsed().as_secs_f64();
    let summary = RunSummary::from_trajectory(&trajectory, &scn.plant, scn.horizon, wall);
    Ok(RunOutcome {
        report: RunReport {
            summary,
            warnings,
            error: error.as_ref().map(|e| e.to_string()),
            scenario: scn.into(),
        },
        trajectory,
        error,
    })
}

/// Writes `trajectory.csv`, `summary.json` and, when logged,
/// `substeps.csv` into `dir`.
pub fn write_run(outcome: &RunOutcome, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(OutputError::from)?;
    write_csv_file(&outcome.trajectory.records, &dir.join("trajectory.csv"))?;
    write_json_file(&outcome.report, &dir.join("summary.json"))?;
    if !outcome.trajectory.substeps.is_empty() {
        write_substeps(&outcome.trajectory, &dir.join("substeps.csv"))?;
    }
    Ok(())
}

fn substep_columns(method: Method) -> Vec<&'static str> {
    match method {
        Method::Hocbf => vec!["z", "v", "u"],
        Method::Avcbf => vec!["z", "v", "a1", "pi12", "u", "nu1"],
        Method::Pacbf => vec!["z", "v", "p1", "u", "nu1"],
    }
}

fn write_substeps(traj: &Trajectory, path: &Path) -> Result<(), OutputError> {
    let mut wr = csv::Writer::from_path(path)?;
    let mut header = vec!["step", "t"];
    header.extend(substep_columns(traj.method));
    wr.write_record(&header)?;
    for s in &traj.substeps {
        let mut row = vec![s.step.to_string(), format!("{:.16e}", s.t)];
        row.extend(s.state.iter().chain(&s.inputs).map(|x| format!("{x:.16e}")));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Output of `compare`.
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub outcomes: Vec<RunOutcome>,
}

impl Comparison {
    /// Most severe member exit code.
    pub fn exit_code(&self) -> i32 {
        self.outcomes
            .iter()
            .map(RunOutcome::exit_code)
            .max()
            .unwrap_or(EXIT_OK)
    }

    /// Table plus any parameter warnings and numerical aborts.
    pub fn render(&self) -> String {
        let mut out = render_table(&self.rows);
        for (row, o) in self.rows.iter().zip(&self.outcomes) {
            for w in &o.report.warnings {
                let _ = writeln!(out, "note [{}]: {w}", row.label);
            }
            if let Some(e) = &o.report.error {
                let _ = writeln!(out, "error [{}]: {e}", row.label);
            }
        }
        out
    }
}

/// Runs labelled scenarios concurrently and tabulates them from the same
/// trajectories that get written to disk.
pub fn compare_scenarios(members: &[(String, Scenario)]) -> Result<Comparison, BenchError> {
    let results: Vec<Result<RunOutcome, BenchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = members
            .iter()
            .map(|(label, scn)| s.spawn(move || run_scenario(scn, label)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("member run panicked"))
            .collect()
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rows = members
        .iter()
        .zip(&outcomes)
        .map(|((label, _), o)| {
            ComparisonRow::new(label.clone(), &o.trajectory, o.report.summary.clone())
        })
        .collect();
    Ok(Comparison { rows, outcomes })
}

/// Writes each member run under `dir/<label>/` plus the comparison table
/// as text, CSV and JSON.
pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(OutputError::from)?;
    for (row, o) in cmp.rows.iter().zip(&cmp.outcomes) {
        write_run(o, &dir.join(&row.label))?;
    }
    std::fs::write(dir.join("comparison.txt"), cmp.render()).map_err(OutputError::from)?;
    write_json_file(&cmp.rows, &dir.join("comparison.json"))?;
    let mut wr = csv::Writer::from_path(dir.join("comparison.csv")).map_err(OutputError::from)?;
    wr.write_record([
        "label",
        "method",
        "feasible_to",
        "min_gap",
        "terminal_speed_error",
        "max_decel_used",
        "max_kkt_residual",
        "first_brake_time",
        "max_du_dt",
        "final_5s_max_du_dt",
    ])
    .map_err(OutputError::from)?;
    for r in &cmp.rows {
        let s = &r.summary;
        wr.write_record([
            r.label.clone(),
            s.method.to_string(),
            format!("{:.16e}", s.feasible_to),
            format!("{:.16e}", s.min_gap),
            format!("{:.16e}", s.terminal_speed_error),
            format!("{:.16e}", s.max_decel_used),
            format!("{:.16e}", s.max_kkt_residual),
            r.first_brake_time
                .map(|t| format!("{t:.16e}"))
                .unwrap_or_default(),
            format!("{:.16e}", r.max_du_dt),
            format!("{:.16e}", r.final_5s_max_du_dt),
        ])
        .map_err(OutputError::from)?;
    }
    wr.flush().map_err(OutputError::from)?;
    Ok(())
}

/// Runs with 1 ms substep logging and checks the derivative chains.
pub fn validate_scenario(scn: &Scenario) -> Result<(RunOutcome, FdReport), BenchError> {
    let mut scn = scn.clone();
    scn.substep_log = Some(
        scn.substep_log
            .unwrap_or(DEFAULT_SUBSTEP)
            .min(scn.integrator.dt),
    );
    let outcome = run_scenario(&scn, "validate")?;
    let eval = AccChainEvaluator {
        params: scn.params.clone(),
        plant: scn.plant.clone(),
    };
    let rep = finite_diff_validate(&outcome.trajectory, &eval).expect("substeps logged");
    Ok((outcome, rep))
}

pub struct SelftestReport {
    pub lines: Vec<String>,
    pub passed: bool,
}

/// QP oracle comparison on random instances plus finite-difference checks
/// on the nominal runs of every method.
pub fn selftest(cases: usize, seed: u64) -> SelftestReport {
    let mut lines = Vec::new();
    let qp = qp_oracle_suite(cases, seed);
    lines.push(format!(
        "qp oracle: {} cases ({} optimal, {} infeasible), max |dx| = {:.2e}, max kkt = {:.2e}: {}",
        qp.cases,
        qp.optimal,
        qp.infeasible,
        qp.max_dx,
        qp.max_kkt,
        if qp.passed() { "PASS" } else { "FAIL" }
    ));
    lines.extend(qp.failures.iter().take(10).map(|f| format!("  {f}")));
    let mut passed = qp.passed();
    match fd_suite() {
        Ok(reps) => {
            for (m, r) in reps {
                let ok = r.max_rel_err <= FD_TOL;
                passed &= ok;
                lines.push(format!(
                    "finite differences {m}: max rel err {:.2e} ({} samples): {}",
                    r.max_rel_err,
                    r.samples,
                    if ok { "PASS" } else { "FAIL" }
                ));
            }
        }
        Err(e) => {
            passed = false;
            lines.push(format!("finite differences: run failed: {e}"));
        }
    }
    SelftestReport { lines, passed }
}

/// Default output directory when neither the CLI nor the file names one.
pub fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
