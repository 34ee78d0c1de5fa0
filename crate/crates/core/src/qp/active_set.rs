//! Primal active-set iterations for a diagonal-Hessian QP.
//!
//! Each working-set subproblem is solved by variable reduction: complete
//! pivoting on the working rows picks one basic variable per row, the basic
//! variables are eliminated, and the reduced Hessian `H_N + Eᵀ H_B E` is
//! factored by Cholesky. Because the Hessian is diagonal this never forms
//! `H⁻¹`, so curvatures spanning twenty orders of magnitude (tiny
//! regularizers next to huge penalty weights) do not cancel catastrophically.

use super::linalg::{cholesky_solve, dot, least_squares, lu_solve, norm_inf};
use super::{collect_constraints, multiplier_scale, Constraint, ConstraintRef};
use super::{OptimalPoint, QpError, StageQp};

const MAX_ITER: usize = 500;
/// Scaled multiplier below which a working constraint is released.
const DUAL_TOL: f64 = 1e-11;
/// Relative size of `a·p` under which a constraint is treated as parallel
/// to the step.
const PARALLEL_TOL: f64 = 1e-13;
const PIVOT_TOL: f64 = 1e-12;

pub(super) fn primal_active_set(qp: &StageQp, x0: Vec<f64>) -> Result<OptimalPoint, QpError> {
    let n = qp.dim();
    let cons = collect_constraints(&qp.rows, &qp.lower_bounds, &qp.upper_bounds);
    let mut working: Vec<usize> = Vec::new();
    let mut x = x0;

    for iter in 1..=MAX_ITER {
        let (xhat, lam) = solve_equality_subproblem(qp, &cons, &working)?;
        let p: Vec<f64> = xhat.iter().zip(&x).map(|(a, b)| a - b).collect();
        let pnorm = norm_inf(&p);

        let mut alpha = 1.0;
        let mut blocking = None;
        if pnorm > 0.0 {
            for (k, c) in cons.iter().enumerate() {
                if working.contains(&k) {
                    continue;
                }
                let ap = dot(&c.coeffs, &p);
                if ap >= -PARALLEL_TOL * norm_inf(&c.coeffs) * pnorm {
                    continue;
                }
                let slack = (dot(&c.coeffs, &x) + c.constant).max(0.0);
                let ratio = slack / -ap;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(k);
                }
            }
        }

        if let Some(k) = blocking {
            for (xi, pi) in x.iter_mut().zip(&p) {
                *xi += alpha * pi;
            }
            working.push(k);
            continue;
        }

        x = xhat;
        let grad: Vec<f64> = (0..n)
            .map(|j| qp.hessian_diag[j] * x[j] + qp.linear_cost[j])
            .collect();
        let mut release: Option<(usize, f64)> = None;
        for (pos, (&k, &l)) in working.iter().zip(&lam).enumerate() {
            let scaled = l / multiplier_scale(&grad, &cons[k].coeffs);
            if scaled < -DUAL_TOL && release.is_none_or(|(_, best)| scaled < best) {
                release = Some((pos, scaled));
            }
        }
        match release {
            Some((pos, _)) => {
                working.remove(pos);
            }
            None => return Ok(assemble(qp, &cons, &working, &lam, x, iter)),
        }
    }
    Err(QpError::IterationLimit)
}

fn assemble(
    qp: &StageQp,
    cons: &[Constraint],
    working: &[usize],
    lam: &[f64],
    x: Vec<f64>,
    iterations: usize,
) -> OptimalPoint {
    let n = qp.dim();
    let mut point = OptimalPoint {
        x,
        row_multipliers: vec![0.0; qp.rows.len()],
        lower_multipliers: vec![0.0; n],
        upper_multipliers: vec![0.0; n],
        active_set: Vec::new(),
        kkt_residual: 0.0,
        iterations,
    };
    let mut order: Vec<(usize, f64)> = working.iter().copied().zip(lam.iter().copied()).collect();
    order.sort_by_key(|(k, _)| *k);
    for (k, l) in order {
        // Multipliers within the dual tolerance are clipped to zero.
        let l = l.max(0.0);
        match cons[k].id {
            ConstraintRef::Row(i) => point.row_multipliers[i] = l,
            ConstraintRef::Lower(j) => point.lower_multipliers[j] = l,
            ConstraintRef::Upper(j) => point.upper_multipliers[j] = l,
        }
        point.active_set.push(cons[k].id);
    }
    point
}

/// Minimizes the objective on `{x : a_k·x + c_k = 0, k in working}`.
/// Returns the minimizer and the multipliers, aligned with `working`.
fn solve_equality_subproblem(
    qp: &StageQp,
    cons: &[Constraint],
    working: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), QpError> {
    let n = qp.dim();
    let h = &qp.hessian_diag;
    let g = &qp.linear_cost;
    let w = working.len();
    if w == 0 {
        return Ok(((0..n).map(|j| -g[j] / h[j]).collect(), Vec::new()));
    }
    if w > n {
        return Err(QpError::DependentWorkingSet);
    }

    // Gauss-Jordan with complete pivoting on row-normalized magnitudes.
    let mut a: Vec<Vec<f64>> = working.iter().map(|&k| cons[k].coeffs.clone()).collect();
    let mut rhs: Vec<f64> = working.iter().map(|&k| -cons[k].constant).collect();
    let mut row_norm: Vec<f64> = a.iter().map(|r| norm_inf(r)).collect();
    let mut basic = vec![usize::MAX; w];
    let mut is_basic = vec![false; n];
    for step in 0..w {
        let mut best: Option<(usize, usize, f64)> = None;
        for r in step..w {
            if row_norm[r] == 0.0 {
                continue;
            }
            for c in 0..n {
                if is_basic[c] {
                    continue;
                }
                let v = a[r][c].abs() / row_norm[r];
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((r, c, v));
                }
            }
        }
        let (r, c, v) = best.ok_or(QpError::DependentWorkingSet)?;
        if v < PIVOT_TOL {
            return Err(QpError::DependentWorkingSet);
        }
        a.swap(step, r);
        rhs.swap(step, r);
        row_norm.swap(step, r);
        let piv = a[step][c];
        for v in a[step].iter_mut() {
            *v /= piv;
        }
        rhs[step] /= piv;
        a[step][c] = 1.0;
        for other in 0..w {
            if other == step {
                continue;
            }
            let f = a[other][c];
            if f == 0.0 {
                continue;
            }
            for col in 0..n {
                a[other][col] -= f * a[step][col];
            }
            a[other][c] = 0.0;
            rhs[other] -= f * rhs[step];
        }
        basic[step] = c;
        is_basic[c] = true;
    }
    let nonbasic: Vec<usize> = (0..n).filter(|&j| !is_basic[j]).collect();
    let m = nonbasic.len();

    // x_B = d + E x_N
    let d = rhs;
    let e: Vec<Vec<f64>> = (0..w)
        .map(|k| nonbasic.iter().map(|&j| -a[k][j]).collect())
        .collect();

    let mut x = vec![0.0; n];
    if m > 0 {
        let mut red_h = vec![vec![0.0; m]; m];
        let mut red_g = vec![0.0; m];
        for (p, &jp) in nonbasic.iter().enumerate() {
            red_h[p][p] += h[jp];
            red_g[p] += g[jp];
            for k in 0..w {
                let b = basic[k];
                red_g[p] += e[k][p] * (g[b] + h[b] * d[k]);
                for q in 0..m {
                    red_h[p][q] += e[k][p] * h[b] * e[k][q];
                }
            }
        }
        let neg: Vec<f64> = red_g.iter().map(|v| -v).collect();
        let xn = match cholesky_solve(&red_h, &neg) {
            Some(v) => v,
            None => lu_solve(red_h, neg).ok_or(QpError::DependentWorkingSet)?,
        };
        for (p, &j) in nonbasic.iter().enumerate() {
            x[j] = xn[p];
        }
    }
    for k in 0..w {
        let extra: f64 = nonbasic
            .iter()
            .enumerate()
            .map(|(p, &j)| e[k][p] * x[j])
            .sum();
        x[basic[k]] = d[k] + extra;
    }

    let lam =
        stationarity_multipliers(qp, cons, working, &x).ok_or(QpError::DependentWorkingSet)?;
    Ok((x, lam))
}

/// Multipliers of the working constraints from `H x + g = A_Wᵀ λ`.
///
/// Each stationarity equation is weighted by the inverse of its gradient
/// scale `max(1, |h_j x_j|, |g_j|)` and the system is solved in the least
/// squares sense. A variable with a huge tracking weight then cannot
/// dictate a multiplier through a gradient that is mostly cancellation
/// error. If the weighting makes the working columns look dependent (a row
/// whose only distinguishing entry sits on a heavily scaled equation), the
/// unweighted system is solved instead.
fn stationarity_multipliers(
    qp: &StageQp,
    cons: &[Constraint],
    working: &[usize],
    x: &[f64],
) -> Option<Vec<f64>> {
    let system = |weighted: bool| {
        let n = qp.dim();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for j in 0..n {
            let hx = qp.hessian_diag[j] * x[j];
            let s = if weighted {
                1.0_f64.max(hx.abs()).max(qp.linear_cost[j].abs())
            } else {
                1.0
            };
            a.push(working.iter().map(|&k| cons[k].coeffs[j] / s).collect());
            b.push((hx + qp.linear_cost[j]) / s);
        }
        (a, b)
    };
    let (a, b) = system(true);
    least_squares(a, b).or_else(|| {
        let (a, b) = system(false);
        least_squares(a, b)
    })
}
