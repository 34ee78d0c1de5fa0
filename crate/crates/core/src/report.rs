//! Run summaries, comparison metrics and invariant checks on trajectories.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::acc::AccParams;
use crate::cbf::{Method, MethodParams};
use crate::sim::{StopCause, Trajectory};

/// Braking threshold for [`first_brake_time`] (N).
pub const BRAKE_THRESHOLD: f64 = -1.0;
/// Consecutive steps below the threshold that count as braking.
pub const BRAKE_STEPS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub stop: StopCause,
    /// Time of the first infeasible stage or numerical abort, or the horizon.
    pub feasible_to: f64,
    /// `min z(t) - l_p` over recorded steps and the final state.
    pub min_gap: f64,
    pub terminal_speed_error: f64,
    /// Largest braking force applied (N, positive).
    pub max_decel_used: f64,
    pub max_kkt_residual: f64,
    pub a1_range: Option<(f64, f64)>,
    pub p1_range: Option<(f64, f64)>,
    pub steps: usize,
    pub wall_time_s: f64,
    pub diagnostics: Vec<String>,
}

fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    vals.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

impl RunSummary {
    pub fn from_trajectory(
        traj: &Trajectory,
        plant: &AccParams,
        horizon: f64,
        wall_time_s: f64,
    ) -> Self {
        let feasible_to = match traj.stop {
            StopCause::Horizon => horizon,
            StopCause::Infeasible { time } | StopCause::Aborted { time } => time,
        };
        let final_aux_a1 = match traj.final_aux {
            crate::cbf::AuxState::Avcbf { a1, .. } => Some(a1),
            _ => None,
        };
        let final_aux_p1 = match traj.final_aux {
            crate::cbf::AuxState::Pacbf { p1, .. } => Some(p1),
            _ => None,
        };
        Self {
            method: traj.method,
            stop: traj.stop.clone(),
            feasible_to,
            min_gap: traj.min_gap(plant.l_p),
            terminal_speed_error: (traj.final_state.v - plant.v_lead).abs(),
            max_decel_used: traj
                .records
                .iter()
                .filter_map(|r| r.u)
                .fold(0.0_f64, |m, u| m.max(-u)),
            max_kkt_residual: traj
                .records
                .iter()
                .filter_map(|r| r.kkt_residual)
                .fold(0.0_f64, f64::max),
            a1_range: range(traj.records.iter().filter_map(|r| r.a1).chain(final_aux_a1)),
            p1_range: range(traj.records.iter().filter_map(|r| r.p1).chain(final_aux_p1)),
            steps: traj.records.len(),
            wall_time_s,
            diagnostics: traj.diagnostics.clone(),
        }
    }
}

/// First time at which `u < -1 N` holds for three consecutive steps.
pub fn first_brake_time(traj: &Trajectory) -> Option<f64> {
    traj.records
        .windows(BRAKE_STEPS)
        .find(|w| w.iter().all(|r| r.u.is_some_and(|u| u < BRAKE_THRESHOLD)))
        .map(|w| w[0].t)
}

/// `max |u_{k+1} - u_k| / Δt` over consecutive solved steps starting at or
/// after `from`.
pub fn max_control_rate(traj: &Trajectory, from: f64) -> f64 {
    traj.records
        .windows(2)
        .filter(|w| w[0].t >= from - 1e-9)
        .filter_map(|w| match (w[0].u, w[1].u) {
            (Some(a), Some(b)) => Some((b - a).abs() / (w[1].t - w[0].t)),
            _ => None,
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub summary: RunSummary,
    pub first_brake_time: Option<f64>,
    pub max_du_dt: f64,
    pub final_5s_max_du_dt: f64,
}

impl ComparisonRow {
    pub fn new(label: impl Into<String>, traj: &Trajectory, summary: RunSummary) -> Self {
        let end = traj.records.last().map_or(0.0, |r| r.t);
        Self {
            label: label.into(),
            first_brake_time: first_brake_time(traj),
            max_du_dt: max_control_rate(traj, 0.0),
            final_5s_max_du_dt: max_control_rate(traj, traj.final_time.max(end) - 5.0),
            summary,
        }
    }
}

/// Fixed-width table of comparison rows.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>11} {:>10} {:>9} {:>12} {:>12} {:>12} {:>10}",
        "run",
        "feasible_to",
        "min_gap",
        "|v-v_p|",
        "first_brake",
        "max_du_dt",
        "final5_du_dt",
        "max_kkt"
    );
    for r in rows {
        let fb = r
            .first_brake_time
            .map_or_else(|| "-".to_string(), |t| format!("{t:.1}"));
        let _ = writeln!(
            out,
            "{:<14} {:>11.1} {:>10.4} {:>9.4} {:>12} {:>12.1} {:>12.1} {:>10.1e}",
            r.label,
            r.summary.feasible_to,
            r.summary.min_gap,
            r.summary.terminal_speed_error,
            fb,
            r.max_du_dt,
            r.final_5s_max_du_dt,
            r.summary.max_kkt_residual
        );
    }
    out
}

/// Forward-invariance violations on a trajectory: chain values below
/// `-tol`, `b < -tol`, non-positive `a1`, or `p1` outside its corridor.
pub fn invariance_violations(
    traj: &Trajectory,
    params: &MethodParams,
    l_p: f64,
    tol: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    for r in &traj.records {
        let b = r.z - l_p;
        let mut chain = vec![("psi0", r.psi0), ("psi1", r.psi1), ("b", b)];
        if let Some(p2) = r.psi2 {
            chain.push(("psi2", p2));
        }
        for (name, v) in chain {
            if v < -tol {
                out.push(format!("{name} = {v:.3e} at t = {:.1}", r.t));
            }
        }
        if let Some(a1) = r.a1 {
            if !(a1 > 0.0) {
                out.push(format!("a1 = {a1:.3e} at t = {:.1}", r.t));
            }
        }
        if let (Some(p1), MethodParams::Pacbf(p)) = (r.p1, params) {
            if p1 < -tol || p1 > p.p1_max + tol {
                out.push(format!("p1 = {p1:.3e} at t = {:.1}", r.t));
            }
        }
    }
    out
}
