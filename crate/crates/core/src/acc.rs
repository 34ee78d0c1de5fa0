//! Adaptive cruise control plant, control-bound profiles and stage builders.
//!
//! State is the gap `z` to the lead vehicle and the ego speed `v`:
//! `ż = v_p - v`, `v̇ = (u - F_r(v)) / M`. Safety is `b = z - l_p >= 0`,
//! which has relative degree 2 in the wheel force `u`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{
    assemble_rows, AuxState, AvcbfParams, BarrierDerivs, CbfError, ClfTerms, HocbfParams, Method,
    MethodParams, PacbfParams, PlantTerms,
};
use crate::qp::StageQp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccError {
    #[error("plant parameter `{name}` = {value} must be positive")]
    Param { name: &'static str, value: f64 },
    #[error("bound profile: {0}")]
    Profile(String),
    #[error("time {0} s is outside the bound profile domain")]
    TimeOutOfDomain(f64),
    #[error("speed {0} m/s is not positive")]
    NonPositiveSpeed(f64),
    #[error("unknown preset `{0}` (expected fig1, fig2_large_gain or fig34)")]
    UnknownPreset(String),
    #[error(transparent)]
    Cbf(#[from] CbfError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Lead vehicle speed (m/s).
    pub v_lead: f64,
    /// Desired cruise speed (m/s).
    pub v_desired: f64,
    pub gravity: f64,
    /// Minimum gap (m).
    pub l_p: f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            v_lead: 13.89,
            v_desired: 24.0,
            gravity: 9.81,
            l_p: 10.0,
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
        }
    }
}

impl AccParams {
    pub fn validate(&self) -> Result<(), AccError> {
        let strict = [
            ("mass", self.mass),
            ("v_lead", self.v_lead),
            ("v_desired", self.v_desired),
            ("gravity", self.gravity),
            ("l_p", self.l_p),
        ];
        for (name, value) in strict {
            if !(value > 0.0 && value.is_finite()) {
                return Err(AccError::Param { name, value });
            }
        }
        // Friction coefficients may be zero (frictionless fixtures).
        for (name, value) in [("f0", self.f0), ("f1", self.f1), ("f2", self.f2)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(AccError::Param { name, value });
            }
        }
        Ok(())
    }
}

/// Gap and ego speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub z: f64,
    pub v: f64,
}

/// Rolling and aerodynamic resistance `f0 sgn(v) + f1 v + f2 v²`.
pub fn resistance_force(v: f64, p: &AccParams) -> f64 {
    let sgn = if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    };
    p.f0 * sgn + p.f1 * v + p.f2 * v * v
}

/// Like [`resistance_force`] but rejects the `v <= 0` regime.
pub fn resistance_force_checked(v: f64, p: &AccParams) -> Result<f64, AccError> {
    if v > 0.0 {
        Ok(resistance_force(v, p))
    } else {
        Err(AccError::NonPositiveSpeed(v))
    }
}

/// `(ż, v̇)`.
pub fn acc_dynamics(s: &PlantState, u: f64, p: &AccParams) -> (f64, f64) {
    (p.v_lead - s.v, (u - resistance_force(s.v, p)) / p.mass)
}

/// Double-integrator simplification `ż = v_p - v`, `v̇ = u`.
pub fn sacc_dynamics(s: &PlantState, u: f64, v_lead: f64) -> (f64, f64) {
    (v_lead - s.v, u)
}

/// Time profile of the deceleration coefficient `c_d(t)`; the throttle
/// coefficient `c_a` is constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundProfile {
    Constant {
        c_d: f64,
        #[serde(default = "default_c_a")]
        c_a: f64,
    },
    /// Linear from `c_start` at `t_start` to `c_end` at `t_end`, held
    /// constant outside that window.
    LinearRamp {
        c_start: f64,
        c_end: f64,
        t_start: f64,
        t_end: f64,
        #[serde(default = "default_c_a")]
        c_a: f64,
    },
    /// Piecewise constant; segment `i` applies from `segments[i].start`
    /// until the next start.
    Piecewise {
        segments: Vec<Segment>,
        #[serde(default = "default_c_a")]
        c_a: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub c_d: f64,
}

fn default_c_a() -> f64 {
    0.4
}

impl BoundProfile {
    pub fn constant(c_d: f64) -> Self {
        BoundProfile::Constant { c_d, c_a: 0.4 }
    }

    pub fn ramp(c_start: f64, c_end: f64, t_start: f64, t_end: f64) -> Self {
        BoundProfile::LinearRamp {
            c_start,
            c_end,
            t_start,
            t_end,
            c_a: 0.4,
        }
    }

    pub fn c_a(&self) -> f64 {
        match self {
            BoundProfile::Constant { c_a, .. }
            | BoundProfile::LinearRamp { c_a, .. }
            | BoundProfile::Piecewise { c_a, .. } => *c_a,
        }
    }

    pub fn validate(&self) -> Result<(), AccError> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(AccError::Profile(format!(
                    "`{name}` = {v} must be positive"
                )))
            }
        };
        pos("c_a", self.c_a())?;
        match self {
            BoundProfile::Constant { c_d, .. } => pos("c_d", *c_d),
            BoundProfile::LinearRamp {
                c_start,
                c_end,
                t_start,
                t_end,
                ..
            } => {
                pos("c_start", *c_start)?;
                pos("c_end", *c_end)?;
                if !(t_start.is_finite() && t_end.is_finite() && t_end >= t_start) {
                    return Err(AccError::Profile(format!(
                        "`t_end` = {t_end} must not precede `t_start` = {t_start}"
                    )));
                }
                Ok(())
            }
            BoundProfile::Piecewise { segments, .. } => {
                if segments.is_empty() {
                    return Err(AccError::Profile("`segments` is empty".into()));
                }
                if segments[0].start > 0.0 {
                    return Err(AccError::Profile(format!(
                        "first segment starts at {} instead of 0",
                        segments[0].start
                    )));
                }
                for w in segments.windows(2) {
                    if !(w[1].start > w[0].start) {
                        return Err(AccError::Profile(format!(
                            "segment starts must increase ({} then {})",
                            w[0].start, w[1].start
                        )));
                    }
                }
                for s in segments {
                    pos("c_d", s.c_d)?;
                }
                Ok(())
            }
        }
    }

    pub fn c_d(&self, t: f64) -> Result<f64, AccError> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(AccError::TimeOutOfDomain(t));
        }
        Ok(match self {
            BoundProfile::Constant { c_d, .. } => *c_d,
            BoundProfile::LinearRamp {
                c_start,
                c_end,
                t_start,
                t_end,
                ..
            } => {
                if t <= *t_start {
                    *c_start
                } else if t >= *t_end {
                    *c_end
                } else {
                    c_start + (c_end - c_start) * (t - t_start) / (t_end - t_start)
                }
            }
            BoundProfile::Piecewise { segments, .. } => {
                segments
                    .iter()
                    .rev()
                    .find(|s| s.start <= t)
                    .ok_or(AccError::TimeOutOfDomain(t))?
                    .c_d
            }
        })
    }
}

/// `(-c_d(t) M g, c_a M g)`.
pub fn control_bounds(
    t: f64,
    profile: &BoundProfile,
    p: &AccParams,
) -> Result<(f64, f64), AccError> {
    let mg = p.mass * p.gravity;
    Ok((-profile.c_d(t)? * mg, profile.c_a() * mg))
}

/// Barrier, CLF and nominal-cost data at a plant state.
pub fn plant_terms(s: &PlantState, p: &AccParams) -> PlantTerms {
    let fr = resistance_force(s.v, p);
    let dv = s.v - p.v_desired;
    PlantTerms {
        barrier: BarrierDerivs {
            lie: vec![s.z - p.l_p, p.v_lead - s.v, fr / p.mass],
            input_gain: -1.0 / p.mass,
        },
        clf: ClfTerms {
            value: dv * dv,
            lf: -2.0 * dv * fr / p.mass,
            lg: 2.0 * dv / p.mass,
        },
        nominal_weight: 1.0 / (p.mass * p.mass),
        nominal_target: fr,
    }
}

pub fn build_hocbf_stage(
    s: &PlantState,
    params: &HocbfParams,
    p: &AccParams,
    bounds: (f64, f64),
) -> Result<StageQp, AccError> {
    build_stage(
        s,
        &AuxState::None,
        &MethodParams::Hocbf(params.clone()),
        p,
        bounds,
    )
}

pub fn build_avcbf_stage(
    s: &PlantState,
    aux: &AuxState,
    params: &AvcbfParams,
    p: &AccParams,
    bounds: (f64, f64),
) -> Result<StageQp, AccError> {
    build_stage(s, aux, &MethodParams::Avcbf(params.clone()), p, bounds)
}

pub fn build_pacbf_stage(
    s: &PlantState,
    aux: &AuxState,
    params: &PacbfParams,
    p: &AccParams,
    bounds: (f64, f64),
) -> Result<StageQp, AccError> {
    build_stage(s, aux, &MethodParams::Pacbf(params.clone()), p, bounds)
}

pub fn build_stage(
    s: &PlantState,
    aux: &AuxState,
    params: &MethodParams,
    p: &AccParams,
    bounds: (f64, f64),
) -> Result<StageQp, AccError> {
    Ok(assemble_rows(params, &plant_terms(s, p), aux, bounds)?)
}

/// Named parameter set for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub initial: PlantState,
    pub params: MethodParams,
    pub aux0: AuxState,
}

pub const PRESET_NAMES: [&str; 3] = ["fig1", "fig2_large_gain", "fig34"];

/// PACBF settings shared by every preset.
pub fn pacbf_defaults() -> PacbfParams {
    PacbfParams {
        c3: 10.0,
        w1: 2e12,
        w2: 2e12,
        q: 1.0,
        q_p: 1.0,
        p1_target: 0.103,
        rho: 10.0,
        p1_max: 3.0,
    }
}

fn avcbf(k: f64, l: f64, w1: f64, q: f64, c3: f64) -> AvcbfParams {
    AvcbfParams {
        k1: k,
        k2: k,
        l1: l,
        l2: l,
        w1,
        a1_target: 1.0,
        q,
        c3,
        eps: 1e-10,
        freeze_aux: false,
    }
}

/// Gains of the large-gain preset. With `c_d = 0.1` the AVCBF run loses
/// feasibility during the approach (first infeasible stage at 14 s).
pub const LARGE_GAIN: f64 = 0.5;

/// Looks up a preset by name. The initial gap is always 100 m.
pub fn preset(name: &str, method: Method) -> Result<Preset, AccError> {
    let (v0, hocbf, avcbf) = match name {
        "fig1" => (
            6.0,
            HocbfParams {
                k1: 0.1,
                k2: 0.1,
                c3: 2.0,
                q: 1000.0,
            },
            avcbf(0.1, 0.1, 1000.0, 1000.0, 2.0),
        ),
        "fig2_large_gain" => (
            6.0,
            HocbfParams {
                k1: LARGE_GAIN,
                k2: LARGE_GAIN,
                c3: 2.0,
                q: 1000.0,
            },
            avcbf(LARGE_GAIN, LARGE_GAIN, 1000.0, 1000.0, 2.0),
        ),
        "fig34" => (
            20.0,
            HocbfParams {
                k1: 0.1,
                k2: 0.1,
                c3: 100.0,
                q: 7e5,
            },
            avcbf(0.1, 0.1, 2e5, 7e5, 100.0),
        ),
        other => return Err(AccError::UnknownPreset(other.to_string())),
    };
    let (params, aux0) = match method {
        Method::Hocbf => (MethodParams::Hocbf(hocbf), AuxState::None),
        Method::Avcbf => (
            MethodParams::Avcbf(avcbf),
            AuxState::Avcbf { a1: 1.0, pi12: 1.0 },
        ),
        Method::Pacbf => (
            MethodParams::Pacbf(pacbf_defaults()),
            AuxState::Pacbf { p1: 0.103, p2: 1.0 },
        ),
    };
    Ok(Preset {
        initial: PlantState { z: 100.0, v: v0 },
        params,
        aux0,
    })
}

/// Deceleration profiles used by the safety sweeps.
pub fn standard_profiles() -> Vec<(&'static str, BoundProfile)> {
    vec![
        ("const_0.40", BoundProfile::constant(0.4)),
        ("const_0.30", BoundProfile::constant(0.3)),
        ("const_0.23", BoundProfile::constant(0.23)),
        ("const_0.15", BoundProfile::constant(0.15)),
        ("ramp_0.40_0.20", BoundProfile::ramp(0.4, 0.2, 0.0, 50.0)),
        ("ramp_0.30_0.15", BoundProfile::ramp(0.3, 0.15, 0.0, 50.0)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn resistance_values() {
        let p = AccParams::default();
        assert!(close(resistance_force(6.0, &p), 39.1, 1e-12));
        assert!(close(resistance_force(13.89, &p), 117.783025, 1e-9));
        let frictionless = AccParams {
            f0: 0.0,
            f1: 0.0,
            f2: 0.0,
            ..p.clone()
        };
        assert_eq!(resistance_force(7.0, &frictionless), 0.0);
        assert!(resistance_force_checked(0.0, &p).is_err());
    }

    #[test]
    fn dynamics_values() {
        let p = AccParams::default();
        let s = PlantState { z: 100.0, v: 6.0 };
        let (dz, dv) = acc_dynamics(&s, 0.0, &p);
        assert!(close(dz, 7.89, 1e-12));
        assert!(close(dv, -0.023697, 1e-6));
        let (_, dv) = acc_dynamics(&s, 6474.6, &p);
        assert!(close(dv, 3.90030, 1e-5));
        let lead = PlantState { z: 50.0, v: 13.89 };
        let (dz, dv) = acc_dynamics(&lead, resistance_force(13.89, &p), &p);
        assert_eq!((dz, dv), (0.0, 0.0));
        assert_eq!(sacc_dynamics(&s, 2.0, 13.89), (13.89 - 6.0, 2.0));
        assert_eq!(sacc_dynamics(&lead, 0.0, 13.89), (0.0, 0.0));
    }

    #[test]
    fn bound_profiles() {
        let p = AccParams::default();
        let (lo, hi) = control_bounds(3.0, &BoundProfile::constant(0.4), &p).unwrap();
        assert!(close(lo, -6474.6, 1e-9) && close(hi, 6474.6, 1e-9));
        let (lo, _) = control_bounds(0.0, &BoundProfile::constant(0.23), &p).unwrap();
        assert!(close(lo, -3722.895, 1e-9));
        let ramp = BoundProfile::ramp(0.4, 0.2, 0.0, 50.0);
        let (lo, _) = control_bounds(25.0, &ramp, &p).unwrap();
        assert!(close(lo, -4855.95, 1e-9));
        assert!(control_bounds(-1.0, &ramp, &p).is_err());
        assert!(BoundProfile::ramp(0.4, 0.2, 10.0, 5.0).validate().is_err());
        let pw = BoundProfile::Piecewise {
            segments: vec![
                Segment {
                    start: 0.0,
                    c_d: 0.4,
                },
                Segment {
                    start: 20.0,
                    c_d: 0.2,
                },
            ],
            c_a: 0.4,
        };
        pw.validate().unwrap();
        assert_eq!(pw.c_d(19.9).unwrap(), 0.4);
        assert_eq!(pw.c_d(20.0).unwrap(), 0.2);
    }

    #[test]
    fn clf_terms_at_fig1_start() {
        let p = AccParams::default();
        let t = plant_terms(&PlantState { z: 100.0, v: 6.0 }, &p);
        // Stored as δ - L_gV u - L_fV - c3 V >= 0.
        assert!(close(t.clf.lf, 0.8531, 1e-4));
        assert!(close(t.clf.lg, -36.0 / 1650.0, 1e-15));
        assert!(close(2.0 * t.clf.value, 648.0, 1e-12));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(
            preset("fig9", Method::Avcbf),
            Err(AccError::UnknownPreset(_))
        ));
    }
}
