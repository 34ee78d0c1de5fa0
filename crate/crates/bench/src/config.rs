//! TOML scenario files.
//!
//! ```toml
//! [plant]            # AccParams overrides plus initial z0, v0
//! [method]           # name, preset, parameter and initial-aux overrides
//! [bounds]           # a BoundProfile, e.g. kind = "constant", c_d = 0.4
//! [run]              # horizon, dt, integrator
//! [output]           # dir, substep_log, substep
//! ```

use std::path::{Path, PathBuf};

use cbf_core::acc::{preset, AccParams, BoundProfile, PlantState};
use cbf_core::cbf::{AuxState, Method, MethodParams};
use cbf_core::ode::{IntegratorConfig, IntegratorMethod};
use cbf_core::sim::{Scenario, SimError, DEFAULT_SUBSTEP};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{}: {msg}", location(key, *line))]
    Invalid {
        key: String,
        line: Option<usize>,
        msg: String,
    },
}

fn location(key: &str, line: Option<usize>) -> String {
    match line {
        Some(l) => format!("key `{key}` (line {l})"),
        None => format!("key `{key}`"),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantSection {
    mass: Option<f64>,
    v_lead: Option<f64>,
    v_desired: Option<f64>,
    gravity: Option<f64>,
    l_p: Option<f64>,
    f0: Option<f64>,
    f1: Option<f64>,
    f2: Option<f64>,
    z0: Option<f64>,
    v0: Option<f64>,
}

/// `[method]`: a preset expanded for `name`, then per-key overrides.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: String,
    pub preset: Option<String>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub a1_target: Option<f64>,
    pub q: Option<f64>,
    pub q_p: Option<f64>,
    pub c3: Option<f64>,
    pub eps: Option<f64>,
    pub freeze_aux: Option<bool>,
    pub p1_target: Option<f64>,
    pub rho: Option<f64>,
    pub p1_max: Option<f64>,
    pub a1_0: Option<f64>,
    pub pi12_0: Option<f64>,
    pub p1_0: Option<f64>,
    pub p2_0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunSection {
    horizon: f64,
    dt: f64,
    /// `rkf45` or `rk4`.
    integrator: String,
    abs_tol: f64,
    rel_tol: f64,
    /// RK4 step.
    rk4_step: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            dt: 0.1,
            integrator: "rkf45".into(),
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            rk4_step: 1e-3,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OutputSection {
    dir: Option<PathBuf>,
    substep_log: bool,
    substep: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            substep_log: false,
            substep: DEFAULT_SUBSTEP,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    plant: PlantSection,
    method: MethodSection,
    bounds: Option<BoundProfile>,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    output: OutputSection,
}

/// A parsed and validated scenario file.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub preset: String,
    pub method_section: MethodSection,
    pub out_dir: Option<PathBuf>,
    pub warnings: Vec<String>,
    z0: Option<f64>,
    v0: Option<f64>,
    source: String,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let method: Method = raw
        .method
        .name
        .parse()
        .map_err(|e: cbf_core::cbf::CbfError| invalid(text, "name", e.to_string()))?;
    let preset_name = raw.method.preset.clone().unwrap_or_else(|| "fig1".into());

    let mut plant = AccParams::default();
    let pl = &raw.plant;
    for (slot, v) in [
        (&mut plant.mass, pl.mass),
        (&mut plant.v_lead, pl.v_lead),
        (&mut plant.v_desired, pl.v_desired),
        (&mut plant.gravity, pl.gravity),
        (&mut plant.l_p, pl.l_p),
        (&mut plant.f0, pl.f0),
        (&mut plant.f1, pl.f1),
        (&mut plant.f2, pl.f2),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }

    let integrator_method = match raw.run.integrator.as_str() {
        "rkf45" => IntegratorMethod::Rkf45Adaptive {
            abs_tol: raw.run.abs_tol,
            rel_tol: raw.run.rel_tol,
        },
        "rk4" => IntegratorMethod::Rk4Fixed {
            substep: raw.run.rk4_step,
        },
        other => {
            return Err(invalid(
                text,
                "integrator",
                format!("unknown integrator `{other}` (expected rkf45 or rk4)"),
            ))
        }
    };

    let mut cfg = ScenarioConfig {
        scenario: Scenario {
            plant,
            params: preset("fig1", method).expect("built-in").params,
            bounds: raw.bounds.unwrap_or_else(|| BoundProfile::constant(0.4)),
            initial: PlantState { z: 0.0, v: 0.0 },
            aux0: AuxState::None,
            horizon: raw.run.horizon,
            integrator: IntegratorConfig {
                method: integrator_method,
                dt: raw.run.dt,
            },
            substep_log: raw.output.substep_log.then_some(raw.output.substep),
        },
        preset: preset_name,
        method_section: raw.method,
        out_dir: raw.output.dir,
        warnings: Vec::new(),
        z0: pl.z0,
        v0: pl.v0,
        source: text.to_string(),
    };
    cfg.scenario = cfg.build(method)?;
    cfg.warnings = cfg.check(&cfg.scenario)?;
    Ok(cfg)
}

/// Parse errors on internally tagged tables point at the table header;
/// point unknown keys at their own line instead.
fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    let msg = e.message().to_string();
    if msg.starts_with("unknown field") {
        if let Some(key) = named_field(&msg) {
            if let Some(line) = key_line(text, key) {
                return ConfigError::Invalid {
                    key: key.to_string(),
                    line: Some(line),
                    msg,
                };
            }
        }
    }
    ConfigError::Parse(e.to_string())
}

fn invalid(text: &str, key: &str, msg: String) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        line: key_line(text, key),
        msg,
    }
}

/// 1-based line of the first `key = ...` assignment.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

/// First backticked identifier in an error message.
fn named_field(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

impl ScenarioConfig {
    /// Same file, but with `method` swapped in. Overrides in `[method]`
    /// apply only when `method` is the one the file names.
    pub fn scenario_for(&self, method: Method) -> Result<Scenario, ConfigError> {
        let scn = self.build(method)?;
        self.check(&scn)?;
        Ok(scn)
    }

    fn build(&self, method: Method) -> Result<Scenario, ConfigError> {
        let (params, aux0, mut initial) = self.method_setup(method)?;
        initial.z = self.z0.unwrap_or(initial.z);
        initial.v = self.v0.unwrap_or(initial.v);
        Ok(Scenario {
            params,
            aux0,
            initial,
            ..self.scenario.clone()
        })
    }

    fn method_setup(
        &self,
        method: Method,
    ) -> Result<(MethodParams, AuxState, PlantState), ConfigError> {
        let text = &self.source;
        let p = preset(&self.preset, method).map_err(|e| invalid(text, "preset", e.to_string()))?;
        let mut params = p.params;
        let mut aux = p.aux0;
        let own = self.method_section.name.parse::<Method>().ok() == Some(method);
        if !own {
            return Ok((params, aux, p.initial));
        }
        let m = &self.method_section;
        let mut unused: Vec<&str> = Vec::new();
        macro_rules! apply {
            ($target:expr, $($key:ident),*) => {{
                $(if let Some(v) = m.$key { $target.$key = v; })*
            }};
        }
        macro_rules! reject {
            ($($key:ident),*) => {{
                $(if m.$key.is_some() { unused.push(stringify!($key)); })*
            }};
        }
        match &mut params {
            MethodParams::Hocbf(h) => {
                apply!(h, k1, k2, q, c3);
                reject!(l1, l2, w1, w2, a1_target, q_p, eps, freeze_aux, p1_target, rho, p1_max);
                reject!(a1_0, pi12_0, p1_0, p2_0);
            }
            MethodParams::Avcbf(a) => {
                apply!(a, k1, k2, l1, l2, w1, a1_target, q, c3, eps, freeze_aux);
                reject!(w2, q_p, p1_target, rho, p1_max, p1_0, p2_0);
                if let AuxState::Avcbf { a1, pi12 } = &mut aux {
                    *a1 = m.a1_0.unwrap_or(*a1);
                    *pi12 = m.pi12_0.unwrap_or(*pi12);
                }
            }
            MethodParams::Pacbf(pa) => {
                apply!(pa, w1, w2, q, q_p, c3, p1_target, rho, p1_max);
                reject!(k1, k2, l1, l2, a1_target, eps, freeze_aux, a1_0, pi12_0);
                if let AuxState::Pacbf { p1, p2 } = &mut aux {
                    *p1 = m.p1_0.unwrap_or(*p1);
                    *p2 = m.p2_0.unwrap_or(*p2);
                }
            }
        }
        if let Some(key) = unused.first() {
            return Err(invalid(
                text,
                key,
                format!("does not apply to method {method}"),
            ));
        }
        Ok((params, aux, p.initial))
    }

    fn check(&self, scn: &Scenario) -> Result<Vec<String>, ConfigError> {
        scn.validate().map_err(|e: SimError| {
            let msg = e.to_string();
            let key = named_field(&msg).unwrap_or("run").to_string();
            ConfigError::Invalid {
                line: key_line(&self.source, &key),
                key,
                msg,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_lines_are_one_based() {
        let t = "[run]\nhorizon = 3\n  dt=0.1\n";
        assert_eq!(key_line(t, "horizon"), Some(2));
        assert_eq!(key_line(t, "dt"), Some(3));
        assert_eq!(key_line(t, "d"), None);
    }

    #[test]
    fn backticked_field_is_found() {
        assert_eq!(
            named_field("bound profile: `t_end` = 1 must"),
            Some("t_end")
        );
        assert_eq!(named_field("nothing here"), None);
    }
}
