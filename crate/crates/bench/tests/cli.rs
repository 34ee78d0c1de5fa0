//! Scenario files, CSV round trips and the binary's exit codes.

use std::path::Path;
use std::process::Command;

use cbf_bench::commands::{compare_scenarios, run_scenario};
use cbf_bench::config::{parse_scenario, ConfigError};
use cbf_bench::output::{read_csv, write_csv, CSV_HEADER};
use cbf_core::acc::{preset, AccParams, BoundProfile};
use cbf_core::cbf::{AuxState, Method, MethodParams};
use cbf_core::qp::QpStatus;
use cbf_core::sim::{run_closed_loop, StepRecord};
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbf-bench"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn invalid_key(e: ConfigError) -> (String, Option<usize>) {
    match e {
        ConfigError::Invalid { key, line, .. } => (key, line),
        other => panic!("expected a key error, got {other}"),
    }
}

#[test]
fn preset_expands_to_library_values() {
    let cfg = parse_scenario("[method]\nname = \"avcbf\"\npreset = \"fig1\"\n").unwrap();
    let p = preset("fig1", Method::Avcbf).unwrap();
    assert_eq!(cfg.scenario.params, p.params);
    assert_eq!(cfg.scenario.aux0, p.aux0);
    assert_eq!(cfg.scenario.initial, p.initial);
    assert_eq!(cfg.scenario.bounds, BoundProfile::constant(0.4));
    assert_eq!(cfg.scenario.horizon, 50.0);
    assert_eq!(cfg.scenario.integrator.dt, 0.1);
}

#[test]
fn empty_plant_section_gives_defaults() {
    let cfg = parse_scenario("[plant]\n\n[method]\nname = \"hocbf\"\n").unwrap();
    assert_eq!(cfg.scenario.plant, AccParams::default());
    assert_eq!(cfg.preset, "fig1");
}

#[test]
fn method_overrides_apply() {
    let cfg = parse_scenario("[method]\nname = \"avcbf\"\nw1 = 5.0\na1_0 = 2.0\n").unwrap();
    let MethodParams::Avcbf(p) = &cfg.scenario.params else {
        panic!()
    };
    assert_eq!(p.w1, 5.0);
    assert!(matches!(cfg.scenario.aux0, AuxState::Avcbf { a1, .. } if a1 == 2.0));
}

#[test]
fn backwards_ramp_names_key_and_line() {
    let text = "[method]\nname = \"avcbf\"\n\n[bounds]\nkind = \"linear_ramp\"\nc_start = 0.4\nc_end = 0.2\nt_start = 10.0\nt_end = 5.0\n";
    let (key, line) = invalid_key(parse_scenario(text).unwrap_err());
    assert_eq!(key, "t_end");
    assert_eq!(line, Some(9));
}

#[test]
fn unknown_key_names_key_and_line() {
    let text = "[method]\nname = \"hocbf\"\n\n[bounds]\nkind = \"constant\"\ncd = 0.4\n";
    let (key, line) = invalid_key(parse_scenario(text).unwrap_err());
    assert_eq!(key, "cd");
    assert_eq!(line, Some(6));
}

#[test]
fn inapplicable_key_is_rejected() {
    let text = "[method]\nname = \"hocbf\"\nrho = 2.0\n";
    let (key, line) = invalid_key(parse_scenario(text).unwrap_err());
    assert_eq!(key, "rho");
    assert_eq!(line, Some(3));
}

#[test]
fn one_step_horizon_gives_one_row() {
    let cfg = parse_scenario("[method]\nname = \"avcbf\"\n\n[run]\nhorizon = 0.1\n").unwrap();
    let traj = run_closed_loop(&cfg.scenario).unwrap();
    assert_eq!(traj.records.len(), 1);
    let mut buf = Vec::new();
    write_csv(&traj.records, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
}

#[test]
fn closed_loop_csv_round_trips() {
    let cfg = parse_scenario("[method]\nname = \"pacbf\"\n\n[run]\nhorizon = 5.0\n").unwrap();
    let traj = run_closed_loop(&cfg.scenario).unwrap();
    let mut buf = Vec::new();
    write_csv(&traj.records, &mut buf).unwrap();
    assert_eq!(read_csv(buf.as_slice()).unwrap(), traj.records);
}

fn opt_f64() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(prop::num::f64::NORMAL | prop::num::f64::ZERO)
}

prop_compose! {
    fn record()(
        a in prop::array::uniform6(prop::num::f64::NORMAL),
        b in prop::collection::vec(opt_f64(), 12),
        ok in any::<bool>(),
    ) -> StepRecord {
        StepRecord {
            t: a[0], z: a[1], v: a[2], u: b[0], u_min: a[3], u_max: a[4],
            a1: b[1], pi12: b[2], nu1: b[3], nu2: b[4], p1: b[5], p2: b[6],
            delta: b[7], delta_p: b[8], psi0: a[5], psi1: a[0] * 0.5,
            psi2: b[9], phi11: b[10],
            qp_status: if ok { QpStatus::Optimal } else { QpStatus::Infeasible },
            kkt_residual: b[11],
        }
    }
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(recs in prop::collection::vec(record(), 0..20)) {
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), recs);
    }
}

#[test]
fn comparison_rows_match_single_runs() {
    let cfg = parse_scenario("[method]\nname = \"avcbf\"\n\n[run]\nhorizon = 20.0\n").unwrap();
    let members: Vec<_> = Method::ALL
        .iter()
        .map(|&m| (m.name().to_string(), cfg.scenario_for(m).unwrap()))
        .collect();
    let cmp = compare_scenarios(&members).unwrap();
    for ((label, scn), row) in members.iter().zip(&cmp.rows) {
        let single = run_scenario(scn, label).unwrap();
        let (a, b) = (&row.summary, &single.report.summary);
        assert_eq!(row.label, *label);
        assert_eq!(a.feasible_to, b.feasible_to);
        assert_eq!(a.min_gap, b.min_gap);
        assert_eq!(a.terminal_speed_error, b.terminal_speed_error);
        assert_eq!(a.steps, b.steps);
    }
}

#[test]
fn exit_code_zero_when_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "ok.toml",
        "[method]\nname = \"avcbf\"\n\n[run]\nhorizon = 2.0\n",
    );
    let out = dir.path().join("out");
    let st = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(read_csv(text.as_bytes()).unwrap().len(), 20);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["steps"], 20);
}

#[test]
fn exit_code_two_on_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.toml",
        "[method]\nname = \"avcbf\"\nk9 = 1.0\n",
    );
    let out = bin().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k9"));
    let missing = bin()
        .arg("run")
        .arg(dir.path().join("nope.toml"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));
    let unknown = bin().args(["frobnicate"]).status().unwrap();
    assert_eq!(unknown.code(), Some(2));
}

#[test]
fn exit_code_three_on_infeasible_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tight.toml",
        "[method]\nname = \"avcbf\"\npreset = \"fig2_large_gain\"\n\n[bounds]\nkind = \"constant\"\nc_d = 0.1\n",
    );
    let out = dir.path().join("out");
    let st = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
    let recs = read_csv(std::fs::File::open(out.join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(recs.last().unwrap().qp_status, QpStatus::Infeasible);
}

#[test]
fn exit_code_four_when_speed_reaches_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "stall.toml",
        "[plant]\nv_lead = 0.01\nz0 = 12.0\nv0 = 3.0\n\n[method]\nname = \"hocbf\"\n\n[bounds]\nkind = \"constant\"\nc_d = 2.0\n",
    );
    let out = dir.path().join("out");
    let st = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(4));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["error"].is_string());
}
