//! Sampled-data CBF-QP closed loop.
//!
//! Every `dt` seconds the stage QP is built at the current state, solved,
//! and the plant and auxiliary dynamics are integrated with the solved
//! `(u, ν)` held constant. Auxiliary dynamics are linear chains
//! (`ȧ1 = π12`, `π̇12 = ν1` or `ṗ1 = ν1`) integrated in the same state
//! vector as the plant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acc::{
    build_stage, control_bounds, plant_terms, AccError, AccParams, BoundProfile, PlantState,
};
use crate::cbf::{
    avcbf_chain_rd2, eval_phi_chain, eval_psi_chain_hocbf, eval_psi_chain_pacbf, AuxState,
    AuxVariable, ClassKappa, Method, MethodParams,
};
use crate::ode::{
    integrate_hold, HeldDynamics, IntegrationError, IntegratorConfig, IntegratorMethod,
};
use crate::qp::{solve_qp, QpError, QpSolution, QpStatus};

/// Spacing of logged substeps inside a hold.
pub const DEFAULT_SUBSTEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub plant: AccParams,
    pub params: MethodParams,
    pub bounds: BoundProfile,
    pub initial: PlantState,
    pub aux0: AuxState,
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    /// Log the augmented state at this spacing inside each hold.
    pub substep_log: Option<f64>,
}

impl Scenario {
    pub fn method(&self) -> Method {
        self.params.method()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.integrator.dt).round().max(1.0) as usize
    }

    /// Hard validation errors plus soft warnings from the method parameters.
    pub fn validate(&self) -> Result<Vec<String>, SimError> {
        self.plant.validate()?;
        self.bounds.validate()?;
        self.integrator
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        let warnings = self.params.validate().map_err(AccError::from)?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Config(format!(
                "`horizon` = {} must be positive",
                self.horizon
            )));
        }
        if !self.aux0.matches(self.method()) {
            return Err(SimError::Config(format!(
                "initial auxiliary state {:?} does not fit method {}",
                self.aux0,
                self.method()
            )));
        }
        if !(self.initial.v > 0.0) {
            return Err(SimError::Config(format!(
                "initial speed `v0` = {} must be positive",
                self.initial.v
            )));
        }
        if let Some(h) = self.substep_log {
            if !(h > 0.0 && h <= self.integrator.dt) {
                return Err(SimError::Config(format!(
                    "`substep` = {h} must lie in (0, dt]"
                )));
            }
        }
        Ok(warnings)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] AccError),
    #[error("stage QP rejected at t = {time} s: {source}")]
    Qp { time: f64, source: QpError },
    #[error("integration failed in the hold starting at t = {time} s: {source}")]
    Integration {
        time: f64,
        source: IntegrationError,
        partial: Box<Trajectory>,
    },
    #[error("ego speed {speed} m/s left the v > 0 regime at t = {time} s")]
    NonPositiveSpeed {
        time: f64,
        speed: f64,
        partial: Box<Trajectory>,
    },
}

impl SimError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            SimError::Integration { partial, .. } | SimError::NonPositiveSpeed { partial, .. } => {
                Some(partial)
            }
            _ => None,
        }
    }
}

/// One control interval. Decision-dependent fields are `None` when the
/// stage was infeasible or the method has no such variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub z: f64,
    pub v: f64,
    pub u: Option<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub a1: Option<f64>,
    pub pi12: Option<f64>,
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub delta: Option<f64>,
    pub delta_p: Option<f64>,
    pub psi0: f64,
    pub psi1: f64,
    pub psi2: Option<f64>,
    pub phi11: Option<f64>,
    pub qp_status: QpStatus,
    pub kkt_residual: Option<f64>,
}

impl StepRecord {
    pub fn state(&self) -> PlantState {
        PlantState {
            z: self.z,
            v: self.v,
        }
    }
}

/// Augmented state inside a hold with the inputs that were held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substep {
    /// Index of the owning [`StepRecord`].
    pub step: usize,
    pub t: f64,
    pub state: Vec<f64>,
    pub inputs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopCause {
    Horizon,
    Infeasible {
        time: f64,
    },
    /// Numerical failure; the trajectory is the part completed before it.
    Aborted {
        time: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: Method,
    pub records: Vec<StepRecord>,
    pub substeps: Vec<Substep>,
    /// Plant and auxiliary state after the last completed hold.
    pub final_state: PlantState,
    pub final_aux: AuxState,
    pub final_time: f64,
    pub stop: StopCause,
    pub diagnostics: Vec<String>,
}

impl Trajectory {
    pub fn feasible_to_horizon(&self) -> bool {
        self.stop == StopCause::Horizon
    }

    pub fn min_gap(&self, l_p: f64) -> f64 {
        self.records
            .iter()
            .map(|r| r.z)
            .chain(std::iter::once(self.final_state.z))
            .fold(f64::INFINITY, f64::min)
            - l_p
    }
}

/// Plant plus auxiliary chain under held `(u, ν1)`.
pub struct ClosedLoopDynamics<'a> {
    pub plant: &'a AccParams,
    pub method: Method,
}

impl ClosedLoopDynamics<'_> {
    pub fn state_dim(method: Method) -> usize {
        match method {
            Method::Hocbf => 2,
            Method::Avcbf => 4,
            Method::Pacbf => 3,
        }
    }
}

impl HeldDynamics for ClosedLoopDynamics<'_> {
    fn dim(&self) -> usize {
        Self::state_dim(self.method)
    }

    fn derivative(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let p = self.plant;
        let fr = crate::acc::resistance_force(x[1], p);
        out[0] = p.v_lead - x[1];
        out[1] = (w[0] - fr) / p.mass;
        match self.method {
            Method::Hocbf => {}
            Method::Avcbf => {
                out[2] = x[3];
                out[3] = w[1];
            }
            Method::Pacbf => out[2] = w[1],
        }
    }
}

pub fn pack_state(s: &PlantState, aux: &AuxState) -> Vec<f64> {
    match *aux {
        AuxState::None => vec![s.z, s.v],
        AuxState::Avcbf { a1, pi12 } => vec![s.z, s.v, a1, pi12],
        AuxState::Pacbf { p1, .. } => vec![s.z, s.v, p1],
    }
}

/// Inverse of [`pack_state`]; `p2` is algebraic and supplied separately.
pub fn unpack_state(x: &[f64], method: Method, p2: f64) -> (PlantState, AuxState) {
    let s = PlantState { z: x[0], v: x[1] };
    let aux = match method {
        Method::Hocbf => AuxState::None,
        Method::Avcbf => AuxState::Avcbf {
            a1: x[2],
            pi12: x[3],
        },
        Method::Pacbf => AuxState::Pacbf { p1: x[2], p2 },
    };
    (s, aux)
}

/// Chain values below the top order: `[ψ0, ψ1]`, plus `φ11` for AVCBF.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSnapshot {
    pub psi: [f64; 2],
    /// `ψ2` at the given held decision, when one is supplied.
    pub psi2: Option<f64>,
    pub phi: Option<[f64; 2]>,
    pub phi12: Option<f64>,
}

/// Evaluates the method's chains at an augmented state. `decision` is the
/// full stage decision vector (`u` first); it only affects the top orders.
pub fn chain_snapshot(
    params: &MethodParams,
    plant: &AccParams,
    s: &PlantState,
    aux: &AuxState,
    decision: Option<&[f64]>,
) -> ChainSnapshot {
    let terms = plant_terms(s, plant);
    let lay = params.method().layout();
    let dim = lay.dim();
    match (params, *aux) {
        (MethodParams::Hocbf(p), _) => {
            let c = eval_psi_chain_hocbf(
                &terms.barrier,
                &[ClassKappa::Linear(p.k1), ClassKappa::Linear(p.k2)],
                lay.u,
                dim,
            );
            ChainSnapshot {
                psi: [c.values[0], c.values[1]],
                psi2: decision.map(|x| c.top.eval(x)),
                phi: None,
                phi12: None,
            }
        }
        (MethodParams::Avcbf(p), AuxState::Avcbf { a1, pi12 }) => {
            let nu1 = lay.nu1.expect("avcbf layout");
            let c = avcbf_chain_rd2(&terms.barrier, a1, pi12, p.k1, p.k2, lay.u, nu1, dim);
            let phi = eval_phi_chain(
                &AuxVariable {
                    derivs: vec![a1, pi12],
                    input_col: nu1,
                },
                &[p.l1, p.l2],
                p.eps,
                dim,
            );
            ChainSnapshot {
                psi: [c.values[0], c.values[1]],
                psi2: decision.map(|x| c.top.eval(x)),
                phi: Some([phi.values[0], phi.values[1]]),
                phi12: decision.map(|x| phi.top.eval(x)),
            }
        }
        (MethodParams::Pacbf(_), AuxState::Pacbf { p1, .. }) => {
            let c = eval_psi_chain_pacbf(
                &terms.barrier,
                p1,
                lay.u,
                lay.nu1.expect("pacbf layout"),
                lay.nu2.expect("pacbf layout"),
                dim,
            );
            ChainSnapshot {
                psi: [c.values[0], c.values[1]],
                psi2: decision.map(|x| c.top.eval(x)),
                phi: None,
                phi12: None,
            }
        }
        _ => panic!("auxiliary state {aux:?} does not fit {}", params.method()),
    }
}

/// Theorem-style initial-set premises: `ψ0, ψ1 >= 0` and, for the
/// auxiliary chains, `a1 > 0`, `φ11 > 0` or `p1 ∈ [0, p1_max]`.
pub fn initial_set_diagnostics(scn: &Scenario) -> Vec<String> {
    let snap = chain_snapshot(&scn.params, &scn.plant, &scn.initial, &scn.aux0, None);
    let mut out = Vec::new();
    for (i, v) in snap.psi.iter().enumerate() {
        if *v < 0.0 {
            out.push(format!("initial state outside C{i}: psi{i} = {v}"));
        }
    }
    if let Some(phi) = snap.phi {
        for (j, v) in phi.iter().enumerate() {
            if *v <= 0.0 {
                out.push(format!("auxiliary state outside B1{j}: phi1{j} = {v}"));
            }
        }
    }
    if let (MethodParams::Pacbf(p), AuxState::Pacbf { p1, .. }) = (&scn.params, scn.aux0) {
        if !(0.0..=p.p1_max).contains(&p1) {
            out.push(format!("p1 = {p1} outside [0, {}]", p.p1_max));
        }
    }
    out
}

/// Runs the sampled-data loop to the horizon or the first infeasible stage.
pub fn run_closed_loop(scn: &Scenario) -> Result<Trajectory, SimError> {
    let mut diagnostics = scn.validate()?;
    diagnostics.extend(initial_set_diagnostics(scn));
    let method = scn.method();
    let lay = method.layout();
    let dyn_ = ClosedLoopDynamics {
        plant: &scn.plant,
        method,
    };
    let dt = scn.integrator.dt;
    let mut state = scn.initial;
    let mut aux = scn.aux0;
    let mut traj = Trajectory {
        method,
        records: Vec::with_capacity(scn.steps()),
        substeps: Vec::new(),
        final_state: state,
        final_aux: aux,
        final_time: 0.0,
        stop: StopCause::Horizon,
        diagnostics,
    };

    for k in 0..scn.steps() {
        let t = k as f64 * dt;
        let bounds = control_bounds(t, &scn.bounds, &scn.plant)?;
        let qp = build_stage(&state, &aux, &scn.params, &scn.plant, bounds)?;
        let sol = solve_qp(&qp).map_err(|source| SimError::Qp { time: t, source })?;
        let x = sol.x();
        let snap = chain_snapshot(&scn.params, &scn.plant, &state, &aux, x);
        let pick = |col: Option<usize>| x.and_then(|x| col.map(|c| x[c]));
        let (a1, pi12, p1, p2) = match aux {
            AuxState::None => (None, None, None, None),
            AuxState::Avcbf { a1, pi12 } => (Some(a1), Some(pi12), None, None),
            AuxState::Pacbf { p1, p2 } => (None, None, Some(p1), Some(p2)),
        };
        traj.records.push(StepRecord {
            t,
            z: state.z,
            v: state.v,
            u: pick(Some(lay.u)),
            u_min: bounds.0,
            u_max: bounds.1,
            a1,
            pi12,
            nu1: pick(lay.nu1),
            nu2: pick(lay.nu2),
            p1,
            p2,
            delta: pick(Some(lay.delta)),
            delta_p: pick(lay.delta_p),
            psi0: snap.psi[0],
            psi1: snap.psi[1],
            psi2: snap.psi2,
            phi11: snap.phi.map(|p| p[1]),
            qp_status: sol.status(),
            kkt_residual: sol.optimal().map(|p| p.kkt_residual),
        });
        let QpSolution::Optimal(opt) = sol else {
            traj.stop = StopCause::Infeasible { time: t };
            return Ok(traj);
        };

        let mut inputs = vec![opt.x[lay.u]];
        if let Some(c) = lay.nu1 {
            inputs.push(opt.x[c]);
        }
        let x0 = pack_state(&state, &aux);
        let x1 = match scn.substep_log {
            None => integrate_hold(&dyn_, &x0, &inputs, dt, &scn.integrator.method),
            Some(h) => integrate_logged(
                &dyn_,
                x0,
                &inputs,
                t,
                dt,
                h,
                &scn.integrator.method,
                k,
                &mut traj.substeps,
            ),
        };
        let x1 = match x1 {
            Ok(x1) => x1,
            Err(source) => {
                traj.stop = StopCause::Aborted { time: t };
                return Err(SimError::Integration {
                    time: t,
                    source,
                    partial: Box::new(traj),
                });
            }
        };
        let p2 = lay.nu2.map_or(1.0, |c| opt.x[c]);
        let (s1, a1_next) = unpack_state(&x1, method, p2);
        state = s1;
        aux = a1_next;
        traj.final_state = state;
        traj.final_aux = aux;
        traj.final_time = (k + 1) as f64 * dt;
        if !(state.v > 0.0) {
            let speed = state.v;
            traj.stop = StopCause::Aborted {
                time: traj.final_time,
            };
            return Err(SimError::NonPositiveSpeed {
                time: traj.final_time,
                speed,
                partial: Box::new(traj),
            });
        }
    }
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn integrate_logged(
    d: &ClosedLoopDynamics<'_>,
    x0: Vec<f64>,
    inputs: &[f64],
    t0: f64,
    dt: f64,
    h: f64,
    method: &IntegratorMethod,
    step: usize,
    log: &mut Vec<Substep>,
) -> Result<Vec<f64>, IntegrationError> {
    let n = ((dt / h) - 1e-9).ceil().max(1.0) as usize;
    let chunk = dt / n as f64;
    let mut x = x0;
    log.push(Substep {
        step,
        t: t0,
        state: x.clone(),
        inputs: inputs.to_vec(),
    });
    for i in 1..=n {
        x = integrate_hold(d, &x, inputs, chunk, method).map_err(|e| match e {
            IntegrationError::StepUnderflow { reached } => IntegrationError::StepUnderflow {
                reached: (i - 1) as f64 * chunk + reached,
            },
            IntegrationError::NonFinite { reached } => IntegrationError::NonFinite {
                reached: (i - 1) as f64 * chunk + reached,
            },
            other => other,
        })?;
        log.push(Substep {
            step,
            t: t0 + i as f64 * chunk,
            state: x.clone(),
            inputs: inputs.to_vec(),
        });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acc::preset;

    fn fig1(method: Method, c_d: f64) -> Scenario {
        let p = preset("fig1", method).unwrap();
        Scenario {
            plant: AccParams::default(),
            params: p.params,
            bounds: BoundProfile::constant(c_d),
            initial: p.initial,
            aux0: p.aux0,
            horizon: 50.0,
            integrator: IntegratorConfig::default(),
            substep_log: None,
        }
    }

    #[test]
    fn single_step_horizon() {
        let mut s = fig1(Method::Avcbf, 0.4);
        s.horizon = 0.1;
        let t = run_closed_loop(&s).unwrap();
        assert_eq!(t.records.len(), 1);
        assert!((t.final_time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn initial_psi_values_recorded() {
        let mut s = fig1(Method::Avcbf, 0.4);
        s.horizon = 0.1;
        let t = run_closed_loop(&s).unwrap();
        let r = &t.records[0];
        assert!((r.psi0 - 90.0).abs() < 1e-12);
        assert!((r.psi1 - 106.89).abs() < 1e-12);
        assert!((r.phi11.unwrap() - 1.1).abs() < 1e-12);
        let u = r.u.unwrap();
        assert!(u.abs() <= 6474.6 + 1e-9 && r.delta.unwrap() >= 0.0);
    }

    #[test]
    fn violated_initial_set_is_a_diagnostic() {
        let mut s = fig1(Method::Hocbf, 0.4);
        s.initial.z = 5.0;
        s.horizon = 0.1;
        let t = run_closed_loop(&s).unwrap();
        assert!(t.diagnostics.iter().any(|d| d.contains("C0")));
    }

    #[test]
    fn substep_log_layout() {
        let mut s = fig1(Method::Pacbf, 0.4);
        s.horizon = 0.2;
        s.substep_log = Some(DEFAULT_SUBSTEP);
        let t = run_closed_loop(&s).unwrap();
        assert_eq!(t.substeps.len(), 2 * 101);
        assert_eq!(t.substeps[101].step, 1);
        assert_eq!(t.substeps[0].state.len(), 3);
    }
}
