//! Phase-1 feasibility: a tiny dense simplex on the max-violation LP.
//!
//! With every constraint normalized to unit coefficient norm the LP
//!
//! ```text
//! min t   s.t.  a_i·x + c_i + t >= 0,  t >= 0,  x free
//! ```
//!
//! has optimum `t* = 0` exactly when the polyhedron is nonempty. When
//! `t* > 0` the optimal simplex multipliers `y >= 0` satisfy `Σ y_i a_i = 0`
//! and `Σ y_i c_i = -t*`, which is a Farkas certificate.

use serde::{Deserialize, Serialize};

use super::linalg::{dot, norm_inf};
use super::{collect_constraints, ConstraintRef, ConstraintRow, INFEASIBILITY_TOL};

/// Outcome of [`phase1_feasibility`].
#[derive(Clone, Debug, PartialEq)]
pub enum Phase1Result {
    Feasible(Vec<f64>),
    Infeasible(FarkasCertificate),
}

impl Phase1Result {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Phase1Result::Feasible(_))
    }
}

/// Nonnegative weights over rows and finite bounds whose combination is a
/// contradiction `0·x + (negative constant) >= 0`.
///
/// Weights are normalized so the largest one equals 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarkasCertificate {
    pub row_weights: Vec<f64>,
    pub lower_weights: Vec<f64>,
    pub upper_weights: Vec<f64>,
}

impl FarkasCertificate {
    /// Returns the combined coefficient vector and constant
    /// `Σ w_i (a_i·x + c_i)` of the weighted constraints.
    pub fn combination(
        &self,
        rows: &[ConstraintRow],
        lower: &[f64],
        upper: &[f64],
    ) -> (Vec<f64>, f64) {
        let n = lower.len();
        let mut coeffs = vec![0.0; n];
        let mut constant = 0.0;
        for (row, &w) in rows.iter().zip(&self.row_weights) {
            if w == 0.0 {
                continue;
            }
            for (c, a) in coeffs.iter_mut().zip(&row.coeffs) {
                *c += w * a;
            }
            constant += w * row.constant;
        }
        for j in 0..n {
            let wl = self.lower_weights[j];
            if wl != 0.0 {
                coeffs[j] += wl;
                constant -= wl * lower[j];
            }
            let wu = self.upper_weights[j];
            if wu != 0.0 {
                coeffs[j] -= wu;
                constant += wu * upper[j];
            }
        }
        (coeffs, constant)
    }

    /// Checks the certificate: weights nonnegative, combined coefficients
    /// vanish to `tol` (relative to the weighted coefficient mass) and the
    /// combined constant is below `-tol`.
    pub fn verify(&self, rows: &[ConstraintRow], lower: &[f64], upper: &[f64], tol: f64) -> bool {
        let all = self
            .row_weights
            .iter()
            .chain(&self.lower_weights)
            .chain(&self.upper_weights);
        if all.clone().any(|w| !(*w >= 0.0)) || all.clone().all(|w| *w == 0.0) {
            return false;
        }
        let mass: f64 = rows
            .iter()
            .zip(&self.row_weights)
            .map(|(r, w)| w * norm_inf(&r.coeffs))
            .sum::<f64>()
            + self.lower_weights.iter().sum::<f64>()
            + self.upper_weights.iter().sum::<f64>();
        let (coeffs, constant) = self.combination(rows, lower, upper);
        norm_inf(&coeffs) <= tol * mass.max(1.0) && constant < -tol
    }
}

/// Finds a point satisfying every row and finite bound, or proves that none
/// exists.
///
/// Infeasibility is declared when the optimal normalized violation exceeds
/// `1e-9`.
pub fn phase1_feasibility(rows: &[ConstraintRow], lower: &[f64], upper: &[f64]) -> Phase1Result {
    let n = lower.len();
    let cons = collect_constraints(rows, lower, upper);

    // Normalize; constant-only rows are decided immediately.
    let mut lp_rows: Vec<(usize, Vec<f64>, f64)> = Vec::with_capacity(cons.len());
    let mut norms = vec![0.0; cons.len()];
    for (k, c) in cons.iter().enumerate() {
        let nrm = dot(&c.coeffs, &c.coeffs).sqrt();
        norms[k] = nrm;
        if nrm == 0.0 {
            if c.constant < -INFEASIBILITY_TOL {
                let mut y = vec![0.0; cons.len()];
                y[k] = 1.0;
                return Phase1Result::Infeasible(build_certificate(&cons, &y, rows.len(), n));
            }
            continue;
        }
        let a: Vec<f64> = c.coeffs.iter().map(|v| v / nrm).collect();
        lp_rows.push((k, a, c.constant / nrm));
    }

    let worst = lp_rows
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, r)| {
            let viol = -r.2;
            match best {
                Some((_, v)) if v >= viol => best,
                _ => Some((i, viol)),
            }
        });
    let (istar, t0) = match worst {
        Some((i, v)) if v > 0.0 => (i, v),
        _ => return Phase1Result::Feasible(vec![0.0; n]),
    };

    let sol = Simplex::new(&lp_rows, n, istar, t0).solve();
    if sol.t > INFEASIBILITY_TOL {
        let mut y = vec![0.0; cons.len()];
        for (i, r) in lp_rows.iter().enumerate() {
            y[r.0] = sol.duals[i].max(0.0) / norms[r.0];
        }
        Phase1Result::Infeasible(build_certificate(&cons, &y, rows.len(), n))
    } else {
        Phase1Result::Feasible(sol.x)
    }
}

fn build_certificate(
    cons: &[super::Constraint],
    y: &[f64],
    n_rows: usize,
    n: usize,
) -> FarkasCertificate {
    let mut cert = FarkasCertificate {
        row_weights: vec![0.0; n_rows],
        lower_weights: vec![0.0; n],
        upper_weights: vec![0.0; n],
    };
    let top = y.iter().fold(0.0_f64, |m, v| m.max(*v));
    let top = if top > 0.0 { top } else { 1.0 };
    for (c, w) in cons.iter().zip(y) {
        let w = w / top;
        match c.id {
            ConstraintRef::Row(i) => cert.row_weights[i] = w,
            ConstraintRef::Lower(j) => cert.lower_weights[j] = w,
            ConstraintRef::Upper(j) => cert.upper_weights[j] = w,
        }
    }
    cert
}

struct SimplexSolution {
    x: Vec<f64>,
    t: f64,
    duals: Vec<f64>,
}

/// Dense tableau over columns `[x+ (n) | x- (n) | t | s (p)]`.
struct Simplex {
    tab: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    n: usize,
    p: usize,
}

impl Simplex {
    fn new(rows: &[(usize, Vec<f64>, f64)], n: usize, istar: usize, t0: f64) -> Self {
        let p = rows.len();
        let ncol = 2 * n + 1 + p;
        let t_col = 2 * n;
        let mut tab = vec![vec![0.0; ncol]; p];
        let mut rhs = vec![0.0; p];
        let mut basis = vec![0; p];
        // Row i: a_i x+ - a_i x- + t - s_i = -c_i, put in canonical form
        // for the basis {t in row istar, s_i elsewhere}.
        for (i, (_, a, c)) in rows.iter().enumerate() {
            for j in 0..n {
                tab[i][j] = a[j];
                tab[i][n + j] = -a[j];
            }
            tab[i][t_col] = 1.0;
            tab[i][t_col + 1 + i] = -1.0;
            rhs[i] = -c;
        }
        let pivot_row = tab[istar].clone();
        let pivot_rhs = rhs[istar];
        for i in 0..p {
            if i == istar {
                basis[i] = t_col;
                continue;
            }
            for (v, pv) in tab[i].iter_mut().zip(&pivot_row) {
                *v = -(*v - pv);
            }
            rhs[i] = -(rhs[i] - pivot_rhs);
            basis[i] = t_col + 1 + i;
        }
        debug_assert!((rhs[istar] - t0).abs() <= 1e-12 * t0.max(1.0));
        Simplex {
            tab,
            rhs,
            basis,
            n,
            p,
        }
    }

    fn cost(&self, col: usize) -> f64 {
        if col == 2 * self.n {
            1.0
        } else {
            0.0
        }
    }

    fn reduced_costs(&self) -> Vec<f64> {
        let ncol = self.tab.first().map_or(0, |r| r.len());
        (0..ncol)
            .map(|j| {
                self.cost(j)
                    - (0..self.p)
                        .map(|i| self.cost(self.basis[i]) * self.tab[i][j])
                        .sum::<f64>()
            })
            .collect()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let pv = self.tab[r][c];
        for v in self.tab[r].iter_mut() {
            *v /= pv;
        }
        self.rhs[r] /= pv;
        let prow = self.tab[r].clone();
        let prhs = self.rhs[r];
        for i in 0..self.p {
            if i == r {
                continue;
            }
            let f = self.tab[i][c];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in self.tab[i].iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            self.tab[i][c] = 0.0;
            self.rhs[i] -= f * prhs;
            if self.rhs[i] < 0.0 && self.rhs[i] > -1e-13 {
                self.rhs[i] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn solve(mut self) -> SimplexSolution {
        const MAX_PIVOTS: usize = 10_000;
        for _ in 0..MAX_PIVOTS {
            let rc = self.reduced_costs();
            // Bland: lowest-index improving column.
            let Some(enter) = rc.iter().position(|&r| r < -1e-12) else {
                break;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.p {
                let a = self.tab[i][enter];
                if a <= 1e-12 {
                    continue;
                }
                let ratio = self.rhs[i].max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - 1e-15 * br.abs().max(1.0)
                            || (ratio <= br + 1e-15 * br.abs().max(1.0)
                                && self.basis[i] < self.basis[bi])
                        {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                // The objective is bounded below by zero, so an unbounded
                // ray can only come from roundoff; stop here.
                None => break,
            }
        }
        let n = self.n;
        let mut vals = vec![0.0; 2 * n + 1 + self.p];
        for (i, &b) in self.basis.iter().enumerate() {
            vals[b] = self.rhs[i];
        }
        let x = (0..n).map(|j| vals[j] - vals[n + j]).collect();
        let rc = self.reduced_costs();
        let duals = (0..self.p).map(|i| rc[2 * n + 1 + i]).collect();
        SimplexSolution {
            x,
            t: vals[2 * n].max(0.0),
            duals,
        }
    }
}
