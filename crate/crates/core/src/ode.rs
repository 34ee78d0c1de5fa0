//! Zero-order-hold integration of plant plus auxiliary dynamics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vector field `ẋ = F(x, w)` with inputs `w` held constant.
pub trait HeldDynamics {
    fn dim(&self) -> usize;
    fn derivative(&self, x: &[f64], inputs: &[f64], out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntegratorMethod {
    /// Classical RK4 with the hold split into equal substeps no longer than `substep`.
    Rk4Fixed { substep: f64 },
    /// Runge-Kutta-Fehlberg 4(5) with local extrapolation.
    Rkf45Adaptive { abs_tol: f64, rel_tol: f64 },
}

impl Default for IntegratorMethod {
    fn default() -> Self {
        IntegratorMethod::Rkf45Adaptive {
            abs_tol: 1e-8,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: IntegratorMethod,
    /// Control hold (s).
    pub dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: IntegratorMethod::default(),
            dt: 0.1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegrationError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(IntegrationError::InvalidConfig(format!(
                "`dt` = {}",
                self.dt
            )));
        }
        match self.method {
            IntegratorMethod::Rk4Fixed { substep } if !(substep > 0.0 && substep.is_finite()) => {
                Err(IntegrationError::InvalidConfig(format!(
                    "substep = {substep}"
                )))
            }
            IntegratorMethod::Rkf45Adaptive { abs_tol, rel_tol }
                if !(abs_tol > 0.0 && rel_tol > 0.0) =>
            {
                Err(IntegrationError::InvalidConfig(format!(
                    "tolerances abs = {abs_tol}, rel = {rel_tol}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("step size underflow after {reached} s of the hold")]
    StepUnderflow { reached: f64 },
    #[error("state became non-finite after {reached} s of the hold")]
    NonFinite { reached: f64 },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
}

/// Advances `state` by `duration` with `inputs` held constant.
pub fn integrate_hold<D: HeldDynamics + ?Sized>(
    dynamics: &D,
    state: &[f64],
    inputs: &[f64],
    duration: f64,
    method: &IntegratorMethod,
) -> Result<Vec<f64>, IntegrationError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(IntegrationError::InvalidConfig(format!(
            "duration = {duration}"
        )));
    }
    match *method {
        IntegratorMethod::Rk4Fixed { substep } => {
            let steps = ((duration / substep) - 1e-9).ceil().max(1.0) as usize;
            let h = duration / steps as f64;
            let mut x = state.to_vec();
            for i in 0..steps {
                x = rk4_step(dynamics, &x, inputs, h);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(IntegrationError::NonFinite {
                        reached: (i + 1) as f64 * h,
                    });
                }
            }
            Ok(x)
        }
        IntegratorMethod::Rkf45Adaptive { abs_tol, rel_tol } => {
            rkf45(dynamics, state, inputs, duration, abs_tol, rel_tol)
        }
    }
}

fn rk4_step<D: HeldDynamics + ?Sized>(d: &D, x: &[f64], w: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    d.derivative(x, w, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    d.derivative(&tmp, w, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    d.derivative(&tmp, w, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    d.derivative(&tmp, w, &mut k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

// Fehlberg tableau.
const A: [[f64; 5]; 5] = [
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [
        -8.0 / 27.0,
        2.0,
        -3544.0 / 2565.0,
        1859.0 / 4104.0,
        -11.0 / 40.0,
    ],
];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -1.0 / 5.0,
    0.0,
];

fn rkf45<D: HeldDynamics + ?Sized>(
    d: &D,
    state: &[f64],
    w: &[f64],
    duration: f64,
    atol: f64,
    rtol: f64,
) -> Result<Vec<f64>, IntegrationError> {
    let n = state.len();
    let mut x = state.to_vec();
    let mut t = 0.0;
    let mut h = duration;
    let h_min = 1e-12 * duration;
    let mut k = vec![vec![0.0; n]; 6];
    let mut tmp = vec![0.0; n];

    while t < duration {
        let last = t + h >= duration * (1.0 - 1e-12);
        if last {
            h = duration - t;
        }
        d.derivative(&x, w, &mut k[0]);
        for s in 1..6 {
            for i in 0..n {
                let acc: f64 = (0..s).map(|j| A[s - 1][j] * k[j][i]).sum();
                tmp[i] = x[i] + h * acc;
            }
            d.derivative(&tmp, w, &mut k[s]);
        }
        let mut err = 0.0_f64;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let hi: f64 = (0..6).map(|s| B5[s] * k[s][i]).sum();
            let lo: f64 = (0..6).map(|s| B4[s] * k[s][i]).sum();
            next[i] = x[i] + h * hi;
            let sc = atol + rtol * x[i].abs().max(next[i].abs());
            err = err.max((h * (hi - lo)).abs() / sc);
        }
        if !err.is_finite() || next.iter().any(|v| !v.is_finite()) {
            if h <= h_min {
                return Err(IntegrationError::NonFinite { reached: t });
            }
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            t = if last { duration } else { t + h };
            x = next;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if t < duration && h < h_min {
            return Err(IntegrationError::StepUnderflow { reached: t });
        }
    }
    Ok(x)
}
