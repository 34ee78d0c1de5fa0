//! Barrier-function chains and their QP rows.
//!
//! Chain values below the top order depend only on the current (plant,
//! auxiliary) state. The top order is affine in the decision vector and
//! becomes a [`ConstraintRow`]. Two routes compute the adaptive chain: a
//! general recursion over truncated time-derivative jets, and the
//! closed-form relative-degree-2 expansion used by the ACC builders. Tests
//! keep the two in agreement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{ConstraintRow, StageQp};

/// Curvature on the PACBF `nu1` variable, whose own cost is linear.
pub const PACBF_NU1_REGULARIZER: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbfError {
    #[error("unknown method `{0}` (expected hocbf, avcbf or pacbf)")]
    UnknownMethod(String),
    #[error("auxiliary state {aux} does not match method {method}")]
    AuxMismatch { method: Method, aux: String },
    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("auxiliary variable {index} needs {expected} stored derivatives, got {got}")]
    AuxDegree {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("control bounds ({0}, {1}) are not a finite nonempty interval")]
    Bounds(f64, f64),
}

/// Strictly increasing function through the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum ClassKappa {
    Linear(f64),
    Quadratic(f64),
}

impl ClassKappa {
    /// Evaluates the formula. Negative arguments use the same formula;
    /// check [`ClassKappa::in_domain`] when monotonicity matters.
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ClassKappa::Linear(k) => k * s,
            ClassKappa::Quadratic(k) => k * s * s,
        }
    }

    pub fn in_domain(s: f64) -> bool {
        s >= 0.0
    }

    pub fn gain(&self) -> f64 {
        match *self {
            ClassKappa::Linear(k) | ClassKappa::Quadratic(k) => k,
        }
    }
}

/// Scalar affine in the decision vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl Affine {
    pub fn constant(value: f64, dim: usize) -> Self {
        Self {
            constant: value,
            coeffs: vec![0.0; dim],
        }
    }

    pub fn variable(index: usize, dim: usize) -> Self {
        let mut a = Self::constant(0.0, dim);
        a.coeffs[index] = 1.0;
        a
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    fn add(&self, o: &Affine) -> Affine {
        Affine {
            constant: self.constant + o.constant,
            coeffs: self
                .coeffs
                .iter()
                .zip(&o.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    fn scale(&self, s: f64) -> Affine {
        Affine {
            constant: self.constant * s,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Product of two affine scalars, one of which must be decision-free.
    fn mul(&self, o: &Affine) -> Affine {
        if self.is_constant() {
            o.scale(self.constant)
        } else {
            assert!(
                o.is_constant(),
                "product of two decision-dependent terms is not affine"
            );
            self.scale(o.constant)
        }
    }

    /// Row `self + shift >= 0`.
    pub fn to_row(&self, shift: f64, tag: &str) -> ConstraintRow {
        ConstraintRow::new(self.coeffs.clone(), self.constant + shift, tag)
    }
}

/// Truncated jet `[q, q', q'', ...]` of time derivatives.
type Jet = Vec<Affine>;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn jet_mul(a: &Jet, b: &Jet, order: usize) -> Jet {
    (0..=order)
        .map(|k| {
            (0..=k).fold(Affine::constant(0.0, a[0].coeffs.len()), |acc, j| {
                acc.add(&a[j].mul(&b[k - j]).scale(binomial(k, j)))
            })
        })
        .collect()
}

fn jet_kappa(alpha: &ClassKappa, q: &Jet, order: usize) -> Jet {
    match *alpha {
        ClassKappa::Linear(k) => q[..=order].iter().map(|a| a.scale(k)).collect(),
        ClassKappa::Quadratic(k) => jet_mul(q, q, order).iter().map(|a| a.scale(k)).collect(),
    }
}

/// Lie derivatives of a barrier with respect to a single-input plant.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierDerivs {
    /// `L_f^k b` for `k = 0..=m`.
    pub lie: Vec<f64>,
    /// `L_g L_f^{m-1} b`.
    pub input_gain: f64,
}

impl BarrierDerivs {
    pub fn relative_degree(&self) -> usize {
        self.lie.len() - 1
    }

    fn jet(&self, u_col: usize, dim: usize) -> Jet {
        let m = self.relative_degree();
        let mut j: Jet = self.lie.iter().map(|v| Affine::constant(*v, dim)).collect();
        j[m].coeffs[u_col] = self.input_gain;
        j
    }
}

/// Auxiliary variable `a` with double-integrator-like chain dynamics:
/// `derivs = [a, a', ..., a^(r-1)]` and `a^(r) = nu`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxVariable {
    pub derivs: Vec<f64>,
    pub input_col: usize,
}

impl AuxVariable {
    fn jet(&self, order: usize, dim: usize) -> Jet {
        let r = self.derivs.len();
        (0..=order)
            .map(|k| {
                if k < r {
                    Affine::constant(self.derivs[k], dim)
                } else if k == r {
                    Affine::variable(self.input_col, dim)
                } else {
                    // Derivatives of the held input are zero under ZOH.
                    Affine::constant(0.0, dim)
                }
            })
            .collect()
    }
}

/// `ψ_0 .. ψ_{m-1}` and the decision-affine top order `ψ_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiChain {
    pub values: Vec<f64>,
    pub top: Affine,
}

impl PsiChain {
    pub fn row(&self, tag: &str) -> ConstraintRow {
        self.top.to_row(0.0, tag)
    }
}

/// `φ_0 .. φ_{r-1}` of an auxiliary HOCBF and the top order shifted by `-ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiChain {
    pub values: Vec<f64>,
    /// `φ_r`, not yet shifted.
    pub top: Affine,
    pub eps: f64,
}

impl PhiChain {
    /// `φ_r - ε >= 0`.
    pub fn row(&self, tag: &str) -> ConstraintRow {
        self.top.to_row(-self.eps, tag)
    }
}

/// Classical HOCBF chain `ψ_i = ψ̇_{i-1} + α_i(ψ_{i-1})`.
pub fn eval_psi_chain_hocbf(
    barrier: &BarrierDerivs,
    alphas: &[ClassKappa],
    u_col: usize,
    dim: usize,
) -> PsiChain {
    eval_psi_chain_avcbf(barrier, &[], alphas, u_col, dim)
        .expect("no auxiliary variables to mismatch")
}

/// Adaptive chain with auxiliary multipliers:
/// `ψ_0 = a_1 b`, `ψ_i = a_{i+1}(ψ̇_{i-1} + α_i(ψ_{i-1}))` for `i < m`,
/// `ψ_m = ψ̇_{m-1} + α_m(ψ_{m-1})`.
///
/// `aux[i]` multiplies level `i` and must have relative degree `m - i`.
/// Fewer auxiliary variables than `m` are allowed; missing ones are 1.
pub fn eval_psi_chain_avcbf(
    barrier: &BarrierDerivs,
    aux: &[AuxVariable],
    alphas: &[ClassKappa],
    u_col: usize,
    dim: usize,
) -> Result<PsiChain, CbfError> {
    let m = barrier.relative_degree();
    assert_eq!(alphas.len(), m, "one class-kappa function per order");
    for (i, a) in aux.iter().enumerate() {
        if a.derivs.len() != m - i {
            return Err(CbfError::AuxDegree {
                index: i + 1,
                expected: m - i,
                got: a.derivs.len(),
            });
        }
    }
    let b = barrier.jet(u_col, dim);
    let mut psi = match aux.first() {
        Some(a1) => jet_mul(&a1.jet(m, dim), &b, m),
        None => b,
    };
    let mut values = Vec::with_capacity(m);
    for i in 1..=m {
        debug_assert!(psi[0].is_constant());
        values.push(psi[0].constant);
        let order = m - i;
        let kap = jet_kappa(&alphas[i - 1], &psi, order);
        let inner: Jet = (0..=order).map(|k| psi[k + 1].add(&kap[k])).collect();
        psi = match aux.get(i) {
            Some(a) if i < m => jet_mul(&a.jet(order, dim), &inner, order),
            _ => inner,
        };
    }
    Ok(PsiChain {
        values,
        top: psi.swap_remove(0),
    })
}

/// Closed-form relative-degree-2 chain with one auxiliary variable and
/// linear class-kappa gains:
///
/// * `ψ_0 = a b`
/// * `ψ_1 = ȧ b + a ḃ + k_1 a b`
/// * `ψ_2 = ν b + 2 ȧ ḃ + a (L_f² b + L_g L_f b u) + k_1 (ȧ b + a ḃ) + k_2 ψ_1`
#[allow(clippy::too_many_arguments)]
pub fn avcbf_chain_rd2(
    barrier: &BarrierDerivs,
    a1: f64,
    a1_rate: f64,
    k1: f64,
    k2: f64,
    u_col: usize,
    nu_col: usize,
    dim: usize,
) -> PsiChain {
    let (b, db, ddb) = (barrier.lie[0], barrier.lie[1], barrier.lie[2]);
    let psi0 = a1 * b;
    let dpsi0 = a1_rate * b + a1 * db;
    let psi1 = dpsi0 + k1 * psi0;
    let mut top = Affine::constant(2.0 * a1_rate * db + a1 * ddb + k1 * dpsi0 + k2 * psi1, dim);
    top.coeffs[u_col] = a1 * barrier.input_gain;
    top.coeffs[nu_col] = b;
    PsiChain {
        values: vec![psi0, psi1],
        top,
    }
}

/// `ψ_1` written with the adaptive gain ratio:
/// `a_next · a_1 (ḃ + k_1 (1 + ȧ_1/(k_1 a_1)) b)`.
pub fn psi1_ratio_form(a_next: f64, b: f64, b_rate: f64, a1: f64, a1_rate: f64, k1: f64) -> f64 {
    a_next * a1 * (b_rate + k1 * (1.0 + a1_rate / (k1 * a1)) * b)
}

/// `ψ_1` by the recursion, `a_next (ψ̇_0 + k_1 ψ_0)` with `ψ_0 = a_1 b`.
pub fn psi1_recursion_form(
    a_next: f64,
    b: f64,
    b_rate: f64,
    a1: f64,
    a1_rate: f64,
    k1: f64,
) -> f64 {
    a_next * (a1_rate * b + a1 * b_rate + k1 * a1 * b)
}

/// Penalty-adaptive chain used by the PACBF baseline:
/// `ψ_0 = b`, `ψ_1 = ḃ + p_1 b²`, `ψ_2 = ψ̇_1 + ν_2 ψ_1` with `ṗ_1 = ν_1`.
pub fn eval_psi_chain_pacbf(
    barrier: &BarrierDerivs,
    p1: f64,
    u_col: usize,
    nu1_col: usize,
    nu2_col: usize,
    dim: usize,
) -> PsiChain {
    let (b, db, ddb) = (barrier.lie[0], barrier.lie[1], barrier.lie[2]);
    let psi1 = db + ClassKappa::Quadratic(p1).eval(b);
    let mut top = Affine::constant(ddb + 2.0 * p1 * b * db, dim);
    top.coeffs[u_col] = barrier.input_gain;
    top.coeffs[nu1_col] = b * b;
    top.coeffs[nu2_col] = psi1;
    PsiChain {
        values: vec![b, psi1],
        top,
    }
}

/// Auxiliary HOCBF chain `φ_0 = a`, `φ_j = φ̇_{j-1} + l_j φ_{j-1}`.
pub fn eval_phi_chain(aux: &AuxVariable, gains: &[f64], eps: f64, dim: usize) -> PhiChain {
    let r = aux.derivs.len();
    assert_eq!(gains.len(), r, "one gain per auxiliary order");
    let mut phi = aux.jet(r, dim);
    let mut values = Vec::with_capacity(r);
    for (j, l) in gains.iter().enumerate() {
        values.push(phi[0].constant);
        let order = r - j - 1;
        phi = (0..=order)
            .map(|k| phi[k + 1].add(&phi[k].scale(*l)))
            .collect();
    }
    PhiChain {
        values,
        top: phi.swap_remove(0),
        eps,
    }
}

/// Relaxed CLF `L_f V + L_g V u + c_3 V <= δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClfTerms {
    pub value: f64,
    pub lf: f64,
    pub lg: f64,
}

/// Stored as `δ - L_g V u - L_f V - c_3 V >= 0`.
pub fn clf_row(
    clf: &ClfTerms,
    c3: f64,
    u_col: usize,
    delta_col: usize,
    dim: usize,
) -> ConstraintRow {
    let mut coeffs = vec![0.0; dim];
    coeffs[u_col] = -clf.lg;
    coeffs[delta_col] = 1.0;
    ConstraintRow::new(coeffs, -(clf.lf + c3 * clf.value), "clf_speed")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hocbf,
    Avcbf,
    Pacbf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hocbf, Method::Avcbf, Method::Pacbf];

    pub fn layout(&self) -> Layout {
        match self {
            Method::Hocbf => Layout {
                labels: &["u", "delta"],
                u: 0,
                nu1: None,
                nu2: None,
                delta: 1,
                delta_p: None,
            },
            Method::Avcbf => Layout {
                labels: &["u", "nu1", "delta"],
                u: 0,
                nu1: Some(1),
                nu2: None,
                delta: 2,
                delta_p: None,
            },
            Method::Pacbf => Layout {
                labels: &["u", "nu1", "nu2", "delta", "delta_p"],
                u: 0,
                nu1: Some(1),
                nu2: Some(2),
                delta: 3,
                delta_p: Some(4),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Hocbf => "hocbf",
            Method::Avcbf => "avcbf",
            Method::Pacbf => "pacbf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CbfError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hocbf" => Ok(Method::Hocbf),
            "avcbf" => Ok(Method::Avcbf),
            "pacbf" => Ok(Method::Pacbf),
            other => Err(CbfError::UnknownMethod(other.to_string())),
        }
    }
}

/// Column positions of the stage decision vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub labels: &'static [&'static str],
    pub u: usize,
    pub nu1: Option<usize>,
    pub nu2: Option<usize>,
    pub delta: usize,
    pub delta_p: Option<usize>,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HocbfParams {
    pub k1: f64,
    pub k2: f64,
    pub c3: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvcbfParams {
    pub k1: f64,
    pub k2: f64,
    pub l1: f64,
    pub l2: f64,
    pub w1: f64,
    /// Target `a_{1,w}` for the auxiliary input.
    pub a1_target: f64,
    pub q: f64,
    pub c3: f64,
    pub eps: f64,
    /// Pins `nu1` to zero (degenerates to a classical HOCBF when `a1 = 1`, `ȧ1 = 0`).
    #[serde(default)]
    pub freeze_aux: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacbfParams {
    pub c3: f64,
    pub w1: f64,
    pub w2: f64,
    pub q: f64,
    pub q_p: f64,
    pub p1_target: f64,
    pub rho: f64,
    pub p1_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodParams {
    Hocbf(HocbfParams),
    Avcbf(AvcbfParams),
    Pacbf(PacbfParams),
}

fn positive(name: &'static str, v: f64) -> Result<(), CbfError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CbfError::InvalidParam {
            name,
            value: v,
            reason: "must be positive and finite",
        })
    }
}

fn finite(name: &'static str, v: f64) -> Result<(), CbfError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CbfError::InvalidParam {
            name,
            value: v,
            reason: "must be finite",
        })
    }
}

impl MethodParams {
    pub fn method(&self) -> Method {
        match self {
            MethodParams::Hocbf(_) => Method::Hocbf,
            MethodParams::Avcbf(_) => Method::Avcbf,
            MethodParams::Pacbf(_) => Method::Pacbf,
        }
    }

    /// Checks positivity of gains and weights. Returns soft warnings, such
    /// as auxiliary gains exceeding the matching plant gains (`l_i > k_i`).
    pub fn validate(&self) -> Result<Vec<String>, CbfError> {
        let mut warnings = Vec::new();
        match self {
            MethodParams::Hocbf(p) => {
                positive("k1", p.k1)?;
                positive("k2", p.k2)?;
                positive("c3", p.c3)?;
                positive("q", p.q)?;
            }
            MethodParams::Avcbf(p) => {
                positive("k1", p.k1)?;
                positive("k2", p.k2)?;
                positive("l1", p.l1)?;
                positive("l2", p.l2)?;
                positive("w1", p.w1)?;
                positive("q", p.q)?;
                positive("c3", p.c3)?;
                positive("eps", p.eps)?;
                finite("a1_target", p.a1_target)?;
                for (l, k, name) in [(p.l1, p.k1, "1"), (p.l2, p.k2, "2")] {
                    if l > k {
                        warnings.push(format!(
                            "l{name} = {l} exceeds k{name} = {k}; the adaptive gain ratio may turn the first-order term negative"
                        ));
                    }
                }
            }
            MethodParams::Pacbf(p) => {
                positive("c3", p.c3)?;
                positive("w1", p.w1)?;
                positive("w2", p.w2)?;
                positive("q", p.q)?;
                positive("q_p", p.q_p)?;
                positive("rho", p.rho)?;
                positive("p1_max", p.p1_max)?;
                if !(p.p1_target >= 0.0 && p.p1_target <= p.p1_max) {
                    return Err(CbfError::InvalidParam {
                        name: "p1_target",
                        value: p.p1_target,
                        reason: "must lie in [0, p1_max]",
                    });
                }
                if p.w1 / PACBF_NU1_REGULARIZER > 1e20 {
                    warnings.push(format!(
                        "w1 = {:e} against the nu1 regularizer gives a stiff stage QP",
                        p.w1
                    ));
                }
            }
        }
        Ok(warnings)
    }
}

/// Auxiliary state carried alongside the plant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AuxState {
    None,
    Avcbf { a1: f64, pi12: f64 },
    Pacbf { p1: f64, p2: f64 },
}

impl AuxState {
    pub fn matches(&self, method: Method) -> bool {
        matches!(
            (self, method),
            (AuxState::None, Method::Hocbf)
                | (AuxState::Avcbf { .. }, Method::Avcbf)
                | (AuxState::Pacbf { .. }, Method::Pacbf)
        )
    }
}

/// Plant-side data a stage needs: barrier Lie derivatives (relative degree
/// 2, scalar input), CLF terms, and the nominal input cost
/// `weight·(u - target)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantTerms {
    pub barrier: BarrierDerivs,
    pub clf: ClfTerms,
    pub nominal_weight: f64,
    pub nominal_target: f64,
}

/// Builds the complete stage QP for one control interval.
pub fn assemble_rows(
    params: &MethodParams,
    terms: &PlantTerms,
    aux: &AuxState,
    bounds: (f64, f64),
) -> Result<StageQp, CbfError> {
    let method = params.method();
    if !aux.matches(method) {
        return Err(CbfError::AuxMismatch {
            method,
            aux: format!("{aux:?}"),
        });
    }
    let (u_min, u_max) = bounds;
    if !(u_min.is_finite() && u_max.is_finite() && u_min <= u_max) {
        return Err(CbfError::Bounds(u_min, u_max));
    }
    let lay = method.layout();
    let dim = lay.dim();
    let mut qp = StageQp::new(lay.labels);
    qp.add_tracking_cost(lay.u, terms.nominal_weight, terms.nominal_target);
    qp.lower_bounds[lay.u] = u_min;
    qp.upper_bounds[lay.u] = u_max;

    match (params, *aux) {
        (MethodParams::Hocbf(p), AuxState::None) => {
            let chain = eval_psi_chain_hocbf(
                &terms.barrier,
                &[ClassKappa::Linear(p.k1), ClassKappa::Linear(p.k2)],
                lay.u,
                dim,
            );
            qp.push_row(chain.row("psi2"));
            qp.push_row(clf_row(&terms.clf, p.c3, lay.u, lay.delta, dim));
            qp.add_tracking_cost(lay.delta, p.q, 0.0);
        }
        (MethodParams::Avcbf(p), AuxState::Avcbf { a1, pi12 }) => {
            let nu1 = lay.nu1.expect("avcbf layout has nu1");
            let chain = avcbf_chain_rd2(&terms.barrier, a1, pi12, p.k1, p.k2, lay.u, nu1, dim);
            let aux_var = AuxVariable {
                derivs: vec![a1, pi12],
                input_col: nu1,
            };
            let phi = eval_phi_chain(&aux_var, &[p.l1, p.l2], p.eps, dim);
            qp.push_row(chain.row("psi2"));
            qp.push_row(phi.row("phi12"));
            qp.push_row(clf_row(&terms.clf, p.c3, lay.u, lay.delta, dim));
            qp.add_tracking_cost(nu1, p.w1, p.a1_target);
            qp.add_tracking_cost(lay.delta, p.q, 0.0);
            if p.freeze_aux {
                qp.lower_bounds[nu1] = 0.0;
                qp.upper_bounds[nu1] = 0.0;
            }
        }
        (MethodParams::Pacbf(p), AuxState::Pacbf { p1, .. }) => {
            let nu1 = lay.nu1.expect("pacbf layout has nu1");
            let nu2 = lay.nu2.expect("pacbf layout has nu2");
            let dp = lay.delta_p.expect("pacbf layout has delta_p");
            let chain = eval_psi_chain_pacbf(&terms.barrier, p1, lay.u, nu1, nu2, dim);
            qp.push_row(chain.row("psi2"));
            let mut upper = vec![0.0; dim];
            upper[nu1] = -1.0;
            qp.push_row(ConstraintRow::new(upper, p.p1_max - p1, "p1_upper"));
            let mut lower = vec![0.0; dim];
            lower[nu1] = 1.0;
            qp.push_row(ConstraintRow::new(lower, p1, "p1_lower"));
            qp.push_row(clf_row(&terms.clf, p.c3, lay.u, lay.delta, dim));
            let err = p1 - p.p1_target;
            let mut clf_p = vec![0.0; dim];
            clf_p[nu1] = -2.0 * err;
            clf_p[dp] = 1.0;
            qp.push_row(ConstraintRow::new(clf_p, -p.rho * err * err, "clf_p1"));
            qp.hessian_diag[nu1] += PACBF_NU1_REGULARIZER;
            qp.linear_cost[nu1] += p.w1;
            qp.add_tracking_cost(nu2, p.w2, 1.0);
            qp.lower_bounds[nu2] = 0.0;
            qp.add_tracking_cost(lay.delta, p.q, 0.0);
            qp.add_tracking_cost(dp, p.q_p, 0.0);
        }
        _ => unreachable!("aux/method agreement checked above"),
    }
    Ok(qp)
}
