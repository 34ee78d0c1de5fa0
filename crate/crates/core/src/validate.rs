//! Finite-difference check of the hand-derived chain derivatives.
//!
//! Inside one hold the inputs are constant, so each chain value is a smooth
//! function of time. Central differences of logged values are compared with
//! the derivative implied by the recursion, e.g. `ψ̇0 = ψ1 - α1(ψ0)`.

use thiserror::Error;

use crate::acc::AccParams;
use crate::cbf::{Method, MethodParams};
use crate::sim::{chain_snapshot, unpack_state, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidateError {
    #[error("trajectory has no substep log; rerun with substep logging enabled")]
    NoSubsteps,
}

/// Chain values and their analytic time derivatives at an augmented state
/// under held inputs.
pub trait ChainEvaluator {
    fn labels(&self) -> Vec<&'static str>;
    fn values(&self, state: &[f64], inputs: &[f64]) -> Vec<f64>;
    fn derivatives(&self, state: &[f64], inputs: &[f64]) -> Vec<f64>;
}

/// Evaluator for the ACC chains of any method.
pub struct AccChainEvaluator {
    pub params: MethodParams,
    pub plant: AccParams,
}

impl AccChainEvaluator {
    fn decision(&self, inputs: &[f64]) -> Vec<f64> {
        let lay = self.params.method().layout();
        let mut x = vec![0.0; lay.dim()];
        x[lay.u] = inputs[0];
        if let Some(c) = lay.nu1 {
            x[c] = inputs[1];
        }
        // ν2 and the relaxations stay zero: ψ2(ν2 = 0) is exactly ψ̇1 for
        // the penalty chain.
        x
    }
}

impl ChainEvaluator for AccChainEvaluator {
    fn labels(&self) -> Vec<&'static str> {
        match self.params.method() {
            Method::Avcbf => vec!["psi0", "psi1", "phi10", "phi11"],
            _ => vec!["psi0", "psi1"],
        }
    }

    fn values(&self, state: &[f64], inputs: &[f64]) -> Vec<f64> {
        let (s, aux) = unpack_state(state, self.params.method(), 1.0);
        let snap = chain_snapshot(
            &self.params,
            &self.plant,
            &s,
            &aux,
            Some(&self.decision(inputs)),
        );
        let mut v = snap.psi.to_vec();
        if let Some(phi) = snap.phi {
            v.extend(phi);
        }
        v
    }

    fn derivatives(&self, state: &[f64], inputs: &[f64]) -> Vec<f64> {
        let (s, aux) = unpack_state(state, self.params.method(), 1.0);
        let snap = chain_snapshot(
            &self.params,
            &self.plant,
            &s,
            &aux,
            Some(&self.decision(inputs)),
        );
        let [psi0, psi1] = snap.psi;
        let psi2 = snap.psi2.expect("decision supplied");
        match &self.params {
            MethodParams::Hocbf(p) => vec![psi1 - p.k1 * psi0, psi2 - p.k2 * psi1],
            MethodParams::Avcbf(p) => {
                let [phi0, phi1] = snap.phi.expect("avcbf has an auxiliary chain");
                let phi2 = snap.phi12.expect("decision supplied");
                vec![
                    psi1 - p.k1 * psi0,
                    psi2 - p.k2 * psi1,
                    phi1 - p.l1 * phi0,
                    phi2 - p.l2 * phi1,
                ]
            }
            MethodParams::Pacbf(_) => {
                let p1 = state[2];
                vec![psi1 - p1 * psi0 * psi0, psi2]
            }
        }
    }
}

/// Worst mismatch found by [`finite_diff_validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// `max |fd - analytic| / max(1, |analytic|)`.
    pub max_rel_err: f64,
    pub worst_label: Option<&'static str>,
    pub worst_time: Option<f64>,
    pub samples: usize,
}

/// Compares analytic chain derivatives with central differences of the
/// logged chain values, never differencing across a hold boundary.
pub fn finite_diff_validate(
    traj: &Trajectory,
    eval: &dyn ChainEvaluator,
) -> Result<FdReport, ValidateError> {
    if traj.substeps.is_empty() {
        return Err(ValidateError::NoSubsteps);
    }
    let labels = eval.labels();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_label: None,
        worst_time: None,
        samples: 0,
    };
    let subs = &traj.substeps;
    let mut start = 0;
    while start < subs.len() {
        let step = subs[start].step;
        let end = subs[start..]
            .iter()
            .position(|s| s.step != step)
            .map_or(subs.len(), |p| start + p);
        let hold = &subs[start..end];
        let values: Vec<Vec<f64>> = hold
            .iter()
            .map(|s| eval.values(&s.state, &s.inputs))
            .collect();
        for j in 1..hold.len().saturating_sub(1) {
            let span = hold[j + 1].t - hold[j - 1].t;
            let an = eval.derivatives(&hold[j].state, &hold[j].inputs);
            for (i, a) in an.iter().enumerate() {
                let fd = (values[j + 1][i] - values[j - 1][i]) / span;
                let err = (fd - a).abs() / a.abs().max(1.0);
                report.samples += 1;
                if err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst_label = Some(labels[i]);
                    report.worst_time = Some(hold[j].t);
                }
            }
        }
        start = end;
    }
    Ok(report)
}
