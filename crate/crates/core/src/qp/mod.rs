//! Dense strictly convex QPs with a diagonal Hessian.
//!
//! ```text
//! min ½ xᵀ diag(h) x + gᵀ x
//! s.t. a_i·x + c_i >= 0   (rows)
//!      l <= x <= u        (box, entries may be infinite)
//! ```
//!
//! [`solve_qp`] runs [`phase1_feasibility`] and then a primal active-set
//! method from the feasible point. Optimality is certified with
//! [`check_kkt`]; infeasibility with a [`FarkasCertificate`].

mod active_set;
mod linalg;
mod phase1;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use phase1::{phase1_feasibility, FarkasCertificate, Phase1Result};

use linalg::{dot, norm_inf};

/// Phase-1 optimal (normalized) violation above which a QP is infeasible.
pub const INFEASIBILITY_TOL: f64 = 1e-9;
/// Acceptance threshold for the scaled KKT residual of an optimal point.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("hessian entry {index} is {value}; strict convexity needs > 0")]
    NonPositiveCurvature { index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("bound on variable {index} is empty: lower {lower} > upper {upper}")]
    EmptyBox {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("working set became linearly dependent")]
    DependentWorkingSet,
}

/// Affine inequality `coeffs·x + constant >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub coeffs: Vec<f64>,
    pub constant: f64,
    /// Provenance, e.g. `"psi2"` or `"clf_speed"`.
    pub tag: String,
}

impl ConstraintRow {
    pub fn new(coeffs: Vec<f64>, constant: f64, tag: impl Into<String>) -> Self {
        Self {
            coeffs,
            constant,
            tag: tag.into(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x) + self.constant
    }

    pub fn coeff_norm(&self) -> f64 {
        dot(&self.coeffs, &self.coeffs).sqrt()
    }

    /// Same half-space, row multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            constant: self.constant * factor,
            tag: self.tag.clone(),
        }
    }
}

/// One control-step quadratic program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageQp {
    pub hessian_diag: Vec<f64>,
    pub linear_cost: Vec<f64>,
    pub rows: Vec<ConstraintRow>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub var_labels: Vec<String>,
}

impl StageQp {
    /// Empty problem over the named variables: zero cost, no rows, unbounded box.
    ///
    /// The Hessian starts at zero and must be filled in before solving.
    pub fn new(labels: &[&str]) -> Self {
        let n = labels.len();
        Self {
            hessian_diag: vec![0.0; n],
            linear_cost: vec![0.0; n],
            rows: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; n],
            upper_bounds: vec![f64::INFINITY; n],
            var_labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.hessian_diag.len()
    }

    pub fn var_index(&self, label: &str) -> Option<usize> {
        self.var_labels.iter().position(|l| l == label)
    }

    /// Adds `weight·(x_j - target)²` to the objective.
    pub fn add_tracking_cost(&mut self, j: usize, weight: f64, target: f64) {
        self.hessian_diag[j] += 2.0 * weight;
        self.linear_cost[j] -= 2.0 * weight * target;
    }

    pub fn push_row(&mut self, row: ConstraintRow) {
        self.rows.push(row);
    }

    pub fn row_by_tag(&self, tag: &str) -> Option<&ConstraintRow> {
        self.rows.iter().find(|r| r.tag == tag)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.hessian_diag)
            .zip(&self.linear_cost)
            .map(|((x, h), g)| 0.5 * h * x * x + g * x)
            .sum()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let check_len = |what: &str, got: usize| {
            if got != n {
                Err(QpError::Dimension {
                    what: what.to_string(),
                    got,
                    expected: n,
                })
            } else {
                Ok(())
            }
        };
        check_len("linear_cost", self.linear_cost.len())?;
        check_len("lower_bounds", self.lower_bounds.len())?;
        check_len("upper_bounds", self.upper_bounds.len())?;
        check_len("var_labels", self.var_labels.len())?;
        for (i, &h) in self.hessian_diag.iter().enumerate() {
            if !h.is_finite() {
                return Err(QpError::NonFinite(format!("hessian_diag[{i}]")));
            }
            if h <= 0.0 {
                return Err(QpError::NonPositiveCurvature { index: i, value: h });
            }
        }
        if self.linear_cost.iter().any(|g| !g.is_finite()) {
            return Err(QpError::NonFinite("linear_cost".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            check_len(&format!("rows[{i}] ({})", r.tag), r.coeffs.len())?;
            if r.coeffs.iter().any(|c| !c.is_finite()) || !r.constant.is_finite() {
                return Err(QpError::NonFinite(format!("rows[{i}] ({})", r.tag)));
            }
        }
        for j in 0..n {
            let (l, u) = (self.lower_bounds[j], self.upper_bounds[j]);
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(QpError::NonFinite(format!("bounds[{j}]")));
            }
            if l > u {
                return Err(QpError::EmptyBox {
                    index: j,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(())
    }
}

/// Identifies a constraint of the unified list: a row or one side of a box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintRef {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

/// Rows first, then per variable its finite lower and upper bound. The
/// position in this list is the tie-breaking order.
#[derive(Clone, Debug)]
pub(crate) struct Constraint {
    pub coeffs: Vec<f64>,
    pub constant: f64,
    pub id: ConstraintRef,
}

pub(crate) fn collect_constraints(
    rows: &[ConstraintRow],
    lower: &[f64],
    upper: &[f64],
) -> Vec<Constraint> {
    let n = lower.len();
    let mut out: Vec<Constraint> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| Constraint {
            coeffs: r.coeffs.clone(),
            constant: r.constant,
            id: ConstraintRef::Row(i),
        })
        .collect();
    for j in 0..n {
        if lower[j].is_finite() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            out.push(Constraint {
                coeffs: e,
                constant: -lower[j],
                id: ConstraintRef::Lower(j),
            });
        }
        if upper[j].is_finite() {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            out.push(Constraint {
                coeffs: e,
                constant: upper[j],
                id: ConstraintRef::Upper(j),
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

/// Primal-dual optimum of a [`StageQp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalPoint {
    pub x: Vec<f64>,
    /// Multipliers of the rows (>= 0; zero when inactive).
    pub row_multipliers: Vec<f64>,
    pub lower_multipliers: Vec<f64>,
    pub upper_multipliers: Vec<f64>,
    /// Final working set, in constraint-list order.
    pub active_set: Vec<ConstraintRef>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl OptimalPoint {
    /// Indices of the rows in the final working set.
    pub fn active_rows(&self) -> Vec<usize> {
        self.active_set
            .iter()
            .filter_map(|c| match c {
                ConstraintRef::Row(i) => Some(*i),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QpSolution {
    Optimal(OptimalPoint),
    Infeasible(FarkasCertificate),
}

impl QpSolution {
    pub fn status(&self) -> QpStatus {
        match self {
            QpSolution::Optimal(_) => QpStatus::Optimal,
            QpSolution::Infeasible(_) => QpStatus::Infeasible,
        }
    }

    pub fn optimal(&self) -> Option<&OptimalPoint> {
        match self {
            QpSolution::Optimal(p) => Some(p),
            QpSolution::Infeasible(_) => None,
        }
    }

    pub fn x(&self) -> Option<&[f64]> {
        self.optimal().map(|p| p.x.as_slice())
    }
}

/// Solves a stage QP. Deterministic; the same input always yields the same
/// output bit for bit.
pub fn solve_qp(qp: &StageQp) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let start = match phase1_feasibility(&qp.rows, &qp.lower_bounds, &qp.upper_bounds) {
        Phase1Result::Infeasible(cert) => return Ok(QpSolution::Infeasible(cert)),
        Phase1Result::Feasible(x) => x,
    };
    let mut point = active_set::primal_active_set(qp, start)?;
    point.kkt_residual = check_kkt(qp, &point);
    Ok(QpSolution::Optimal(point))
}

/// Scale used to make a row multiplier dimensionless: the objective
/// gradient magnitude over the row's support divided by the row's size.
pub(crate) fn multiplier_scale(hx_g: &[f64], coeffs: &[f64]) -> f64 {
    let an = norm_inf(coeffs);
    if an == 0.0 {
        return 1.0;
    }
    let gmax = coeffs
        .iter()
        .zip(hx_g)
        .filter(|(a, _)| **a != 0.0)
        .fold(0.0_f64, |m, (_, g)| m.max(g.abs()));
    (gmax / an).max(1.0)
}

/// Scaled KKT residual of a candidate optimum.
///
/// Returns the maximum over
/// * stationarity per variable, divided by `max(1, |h_j x_j|, |g_j|, Σ|λ_i a_ij|)`;
/// * primal violation per constraint, divided by `max(1, |c_i|, Σ|a_ij x_j|)`;
/// * multiplier negativity, divided by the multiplier scale of the constraint;
/// * complementarity `min(|λ_i| / dual scale, |s_i| / primal scale)`.
///
/// For problems of unit scale this is the plain absolute residual.
pub fn check_kkt(qp: &StageQp, sol: &OptimalPoint) -> f64 {
    let n = qp.dim();
    let x = &sol.x;
    let cons = collect_constraints(&qp.rows, &qp.lower_bounds, &qp.upper_bounds);
    let grad: Vec<f64> = (0..n)
        .map(|j| qp.hessian_diag[j] * x[j] + qp.linear_cost[j])
        .collect();

    let multiplier = |id: ConstraintRef| match id {
        ConstraintRef::Row(i) => sol.row_multipliers[i],
        ConstraintRef::Lower(j) => sol.lower_multipliers[j],
        ConstraintRef::Upper(j) => sol.upper_multipliers[j],
    };

    let mut resid = grad.clone();
    let mut mass = vec![0.0_f64; n];
    for (j, m) in mass.iter_mut().enumerate() {
        *m = (qp.hessian_diag[j] * x[j])
            .abs()
            .max(qp.linear_cost[j].abs())
            .max(1.0);
    }
    let mut worst = 0.0_f64;
    let mut lam_mass = vec![0.0_f64; n];
    for c in &cons {
        let lam = multiplier(c.id);
        for j in 0..n {
            resid[j] -= lam * c.coeffs[j];
            lam_mass[j] += (lam * c.coeffs[j]).abs();
        }
        let slack = dot(&c.coeffs, x) + c.constant;
        let pscale = c
            .coeffs
            .iter()
            .zip(x)
            .map(|(a, v)| (a * v).abs())
            .sum::<f64>()
            .max(c.constant.abs())
            .max(1.0);
        let dscale = multiplier_scale(&grad, &c.coeffs);
        worst = worst.max((-slack).max(0.0) / pscale);
        worst = worst.max((-lam).max(0.0) / dscale);
        worst = worst.max((lam.abs() / dscale).min(slack.abs() / pscale));
    }
    for j in 0..n {
        let s = mass[j].max(lam_mass[j]);
        worst = worst.max(resid[j].abs() / s);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_var(h: f64, g: f64) -> StageQp {
        let mut qp = StageQp::new(&["u"]);
        qp.hessian_diag[0] = h;
        qp.linear_cost[0] = g;
        qp
    }

    #[test]
    fn unconstrained_centered_minimum() {
        let qp = one_var(2.0, 0.0);
        let sol = solve_qp(&qp).unwrap();
        let p = sol.optimal().unwrap();
        assert_eq!(p.x, vec![0.0]);
        assert_eq!(check_kkt(&qp, p), 0.0);
    }

    #[test]
    fn halfspace_projection() {
        // (u-1)^2 with u <= 0.5
        let mut qp = one_var(2.0, -2.0);
        qp.push_row(ConstraintRow::new(vec![-1.0], 0.5, "cap"));
        let sol = solve_qp(&qp).unwrap();
        let p = sol.optimal().unwrap();
        assert!((p.x[0] - 0.5).abs() < 1e-12);
        assert!((p.row_multipliers[0] - 1.0).abs() < 1e-12);
        assert_eq!(p.active_rows(), vec![0]);
        assert!(p.kkt_residual <= KKT_TOL);
    }

    #[test]
    fn perturbed_active_solution_has_large_residual() {
        let mut qp = one_var(2.0, -2.0);
        qp.push_row(ConstraintRow::new(vec![-1.0], 0.5, "cap"));
        let mut p = solve_qp(&qp).unwrap().optimal().unwrap().clone();
        p.x[0] += 1e-3;
        assert!(check_kkt(&qp, &p) >= 1e-3);
    }

    #[test]
    fn rejects_malformed_input() {
        let qp = one_var(0.0, 1.0);
        assert!(matches!(
            solve_qp(&qp),
            Err(QpError::NonPositiveCurvature { index: 0, .. })
        ));
        let mut qp = one_var(1.0, 0.0);
        qp.push_row(ConstraintRow::new(vec![1.0, 2.0], 0.0, "bad"));
        assert!(matches!(solve_qp(&qp), Err(QpError::Dimension { .. })));
        let mut qp = one_var(1.0, 0.0);
        qp.lower_bounds[0] = 1.0;
        qp.upper_bounds[0] = 0.0;
        assert!(matches!(solve_qp(&qp), Err(QpError::EmptyBox { .. })));
        let mut qp = one_var(1.0, 0.0);
        qp.linear_cost[0] = f64::NAN;
        assert!(matches!(solve_qp(&qp), Err(QpError::NonFinite(_))));
    }

    #[test]
    fn infeasible_rows_return_certificate() {
        let mut qp = one_var(2.0, 0.0);
        qp.push_row(ConstraintRow::new(vec![1.0], -1.0, "lo"));
        qp.push_row(ConstraintRow::new(vec![-1.0], 0.0, "hi"));
        match solve_qp(&qp).unwrap() {
            QpSolution::Infeasible(c) => {
                assert!(c.verify(&qp.rows, &qp.lower_bounds, &qp.upper_bounds, 1e-9))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn box_bounds_clamp() {
        let mut qp = one_var(2.0, -20.0); // min (u-10)^2
        qp.lower_bounds[0] = -1.0;
        qp.upper_bounds[0] = 3.0;
        let p = solve_qp(&qp).unwrap().optimal().unwrap().clone();
        assert!((p.x[0] - 3.0).abs() < 1e-12);
        assert_eq!(p.active_set, vec![ConstraintRef::Upper(0)]);
        assert!(p.upper_multipliers[0] > 0.0);
    }

    #[test]
    fn fixed_variable_box() {
        let mut qp = StageQp::new(&["u", "nu"]);
        qp.hessian_diag = vec![2.0, 2.0];
        qp.linear_cost = vec![-2.0, -2.0];
        qp.lower_bounds[1] = 0.0;
        qp.upper_bounds[1] = 0.0;
        let p = solve_qp(&qp).unwrap().optimal().unwrap().clone();
        assert!((p.x[0] - 1.0).abs() < 1e-12);
        assert_eq!(p.x[1], 0.0);
        assert!(p.kkt_residual <= KKT_TOL);
    }

    #[test]
    fn tiny_curvature_with_large_linear_cost() {
        // Mimics the penalty-method stage: nu has curvature 1e-9 and linear
        // cost 2e12 and is held by nu + 0.1 >= 0.
        let mut qp = StageQp::new(&["u", "nu"]);
        qp.hessian_diag = vec![2.0 / (1650.0 * 1650.0), 1e-9];
        qp.linear_cost = vec![-2.0 * 39.1 / (1650.0 * 1650.0), 2e12];
        qp.push_row(ConstraintRow::new(vec![0.0, 1.0], 0.1, "corridor"));
        qp.push_row(ConstraintRow::new(
            vec![-1.0 / 1650.0, 8100.0],
            810.01,
            "psi2",
        ));
        qp.lower_bounds[0] = -6474.6;
        qp.upper_bounds[0] = 6474.6;
        let p = solve_qp(&qp).unwrap().optimal().unwrap().clone();
        assert!((p.x[1] + 0.1).abs() < 1e-12);
        // psi2 binds below the nominal 39.1: u = 1650 (810.01 - 810)
        assert!(
            (p.x[0] - 1650.0 * (810.01 - 810.0)).abs() < 1e-6,
            "{:?}",
            p.x
        );
        assert!(p.kkt_residual <= KKT_TOL, "{}", p.kkt_residual);
    }
}
