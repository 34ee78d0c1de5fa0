//! Reference checks shared by the test suite and the `selftest` command:
//! a brute-force QP oracle, a random instance generator, and suites that
//! compare the production solver and derivative chains against them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acc::{preset, AccParams, BoundProfile};
use crate::cbf::Method;
use crate::ode::IntegratorConfig;
use crate::qp::{
    check_kkt, phase1_feasibility, solve_qp, ConstraintRow, QpSolution, StageQp, KKT_TOL,
};
use crate::sim::{run_closed_loop, Scenario, SimError, DEFAULT_SUBSTEP};
use crate::validate::{finite_diff_validate, AccChainEvaluator, FdReport};

/// Enumerates every subset of at most `n` constraints, solves the full KKT
/// system with that subset as equalities, and keeps the primal-dual
/// feasible candidate with the lowest objective.
pub fn enumeration_oracle(qp: &StageQp) -> Option<Vec<f64>> {
    let n = qp.dim();
    let mut cons: Vec<(Vec<f64>, f64)> = qp
        .rows
        .iter()
        .map(|r| (r.coeffs.clone(), r.constant))
        .collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        if qp.lower_bounds[j].is_finite() {
            e[j] = 1.0;
            cons.push((e.clone(), -qp.lower_bounds[j]));
        }
        if qp.upper_bounds[j].is_finite() {
            e[j] = -1.0;
            cons.push((e, qp.upper_bounds[j]));
        }
    }
    let total = cons.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut subset = Vec::new();
    enumerate(0, total, n, &mut subset, &mut |s| {
        let k = s.len();
        let dim = n + k;
        let mut m = vec![vec![0.0; dim]; dim];
        let mut rhs = vec![0.0; dim];
        for j in 0..n {
            m[j][j] = qp.hessian_diag[j];
            rhs[j] = -qp.linear_cost[j];
            for (p, &ci) in s.iter().enumerate() {
                m[j][n + p] = -cons[ci].0[j];
            }
        }
        for (p, &ci) in s.iter().enumerate() {
            for j in 0..n {
                m[n + p][j] = cons[ci].0[j];
            }
            rhs[n + p] = -cons[ci].1;
        }
        let Some(sol) = gauss(m, rhs) else { return };
        let x = &sol[..n];
        if sol[n..].iter().any(|l| *l < -1e-9) {
            return;
        }
        for (a, c) in &cons {
            let v: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + c;
            if v < -1e-9 * (1.0 + c.abs()) {
                return;
            }
        }
        let obj = qp.objective(x);
        if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-14) {
            best = Some((obj, x.to_vec()));
        }
    });
    best.map(|(_, x)| x)
}

fn enumerate(
    start: usize,
    total: usize,
    max_size: usize,
    cur: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    f(cur);
    if cur.len() == max_size {
        return;
    }
    for i in start..total {
        cur.push(i);
        enumerate(i + 1, total, max_size, cur, f);
        cur.pop();
    }
}

fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[piv][k].abs() < 1e-10 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for r in 0..n {
            if r != k {
                let f = a[r][k] / a[k][k];
                for c in k..n {
                    a[r][c] -= f * a[k][c];
                }
                b[r] -= f * b[k];
            }
        }
    }
    Some((0..n).map(|k| b[k] / a[k][k]).collect())
}

/// Random QP with 2 to 5 variables and 0 to 8 rows.
pub fn random_qp(rng: &mut ChaCha8Rng) -> StageQp {
    let n = rng.gen_range(2..=5);
    let m = rng.gen_range(0..=8);
    let labels: Vec<String> = (0..n).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
    let mut qp = StageQp::new(&refs);
    for j in 0..n {
        qp.hessian_diag[j] = rng.gen_range(0.1..10.0);
        qp.linear_cost[j] = rng.gen_range(-5.0..5.0);
        if rng.gen_bool(0.3) {
            qp.lower_bounds[j] = rng.gen_range(-3.0..-0.2);
        }
        if rng.gen_bool(0.3) {
            qp.upper_bounds[j] = rng.gen_range(0.2..3.0);
        }
    }
    for i in 0..m {
        let coeffs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        qp.push_row(ConstraintRow::new(
            coeffs,
            rng.gen_range(-1.0..1.5),
            format!("r{i}"),
        ));
    }
    qp
}

/// Outcome of [`qp_oracle_suite`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleSuiteReport {
    pub cases: usize,
    pub optimal: usize,
    pub infeasible: usize,
    pub max_dx: f64,
    pub max_kkt: f64,
    /// Human-readable descriptions of every mismatch.
    pub failures: Vec<String>,
}

impl OracleSuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Solves `cases` random QPs and compares each with [`enumeration_oracle`],
/// the phase-1 verdict and the Farkas certificate.
pub fn qp_oracle_suite(cases: usize, seed: u64) -> OracleSuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = OracleSuiteReport {
        cases,
        ..Default::default()
    };
    for case in 0..cases {
        let qp = random_qp(&mut rng);
        let sol = match solve_qp(&qp) {
            Ok(s) => s,
            Err(e) => {
                rep.failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        match (&sol, enumeration_oracle(&qp)) {
            (QpSolution::Optimal(p), Some(x)) => {
                let dx =
                    p.x.iter()
                        .zip(&x)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                rep.max_dx = rep.max_dx.max(dx);
                rep.max_kkt = rep.max_kkt.max(p.kkt_residual);
                if dx > 1e-6 {
                    rep.failures.push(format!("case {case}: |dx| = {dx:.3e}"));
                }
                if p.kkt_residual > KKT_TOL || p.kkt_residual != check_kkt(&qp, p) {
                    rep.failures
                        .push(format!("case {case}: kkt {:.3e}", p.kkt_residual));
                }
                rep.optimal += 1;
            }
            (QpSolution::Infeasible(cert), None) => {
                if !cert.verify(&qp.rows, &qp.lower_bounds, &qp.upper_bounds, 1e-9) {
                    rep.failures
                        .push(format!("case {case}: certificate rejected"));
                }
                rep.infeasible += 1;
            }
            (s, o) => rep.failures.push(format!(
                "case {case}: solver {:?}, oracle {}",
                s.status(),
                if o.is_some() {
                    "feasible"
                } else {
                    "infeasible"
                }
            )),
        }
        let p1 = phase1_feasibility(&qp.rows, &qp.lower_bounds, &qp.upper_bounds);
        if p1.is_feasible() != sol.optimal().is_some() {
            rep.failures
                .push(format!("case {case}: phase-1 verdict disagrees"));
        }
    }
    rep
}

/// Nominal scenario for a method: the `fig1` preset, `c_d = 0.4`, 50 s.
pub fn nominal_scenario(method: Method, substep_log: Option<f64>) -> Scenario {
    let p = preset("fig1", method).expect("built-in preset");
    Scenario {
        plant: AccParams::default(),
        params: p.params,
        bounds: BoundProfile::constant(0.4),
        initial: p.initial,
        aux0: p.aux0,
        horizon: 50.0,
        integrator: IntegratorConfig::default(),
        substep_log,
    }
}

/// Runs every method on its nominal scenario with 1 ms substep logging
/// and reports the worst finite-difference mismatch per method.
pub fn fd_suite() -> Result<Vec<(Method, FdReport)>, SimError> {
    Method::ALL
        .iter()
        .map(|&m| {
            let scn = nominal_scenario(m, Some(DEFAULT_SUBSTEP));
            let traj = run_closed_loop(&scn)?;
            let eval = AccChainEvaluator {
                params: scn.params.clone(),
                plant: scn.plant.clone(),
            };
            let rep = finite_diff_validate(&traj, &eval).expect("substeps were logged");
            Ok((m, rep))
        })
        .collect()
}
