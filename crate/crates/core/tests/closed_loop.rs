//! Closed-loop properties: safety, determinism, discretization robustness,
//! solver health along trajectories and derivative-chain validation.

use cbf_core::acc::{preset, AccParams, BoundProfile};
use cbf_core::cbf::{AuxState, AvcbfParams, Method, MethodParams};
use cbf_core::ode::IntegratorConfig;
use cbf_core::qp::{QpStatus, KKT_TOL};
use cbf_core::report::invariance_violations;
use cbf_core::selftest::{fd_suite, nominal_scenario};
use cbf_core::sim::{run_closed_loop, Scenario, DEFAULT_SUBSTEP};
use cbf_core::validate::{finite_diff_validate, AccChainEvaluator};
use proptest::prelude::*;

fn wide_bounds() -> BoundProfile {
    let c = 1e6 / (1650.0 * 9.81);
    BoundProfile::Constant { c_d: c, c_a: c }
}

#[test]
fn fig1_avcbf_nominal_is_safe() {
    let scn = nominal_scenario(Method::Avcbf, None);
    let t = run_closed_loop(&scn).unwrap();
    assert!(t.feasible_to_horizon());
    assert_eq!(t.records.len(), 500);
    assert!(t.min_gap(10.0) >= 0.0, "{}", t.min_gap(10.0));
    assert!((t.final_state.v - 13.89).abs() <= 0.5);
}

#[test]
fn wide_bounds_keep_every_method_safe() {
    for m in Method::ALL {
        let mut scn = nominal_scenario(m, None);
        scn.bounds = wide_bounds();
        let t = run_closed_loop(&scn).unwrap();
        assert!(t.feasible_to_horizon(), "{m}");
        assert!(t.min_gap(10.0) >= -1e-6, "{m}: {}", t.min_gap(10.0));
    }
}

#[test]
fn every_stage_meets_kkt_tolerance() {
    for m in Method::ALL {
        let t = run_closed_loop(&nominal_scenario(m, None)).unwrap();
        for r in &t.records {
            assert_eq!(r.qp_status, QpStatus::Optimal);
            assert!(
                r.kkt_residual.unwrap() <= KKT_TOL,
                "{m} t={}: {:?}",
                r.t,
                r.kkt_residual
            );
        }
    }
}

#[test]
fn runs_are_bit_identical() {
    for m in Method::ALL {
        let scn = nominal_scenario(m, Some(DEFAULT_SUBSTEP));
        let mut short = scn.clone();
        short.horizon = 5.0;
        assert_eq!(
            run_closed_loop(&short).unwrap(),
            run_closed_loop(&short).unwrap()
        );
    }
}

#[test]
fn halving_dt_barely_moves_min_gap() {
    let coarse = nominal_scenario(Method::Avcbf, None);
    let mut fine = coarse.clone();
    fine.integrator.dt = 0.05;
    let a = run_closed_loop(&coarse).unwrap();
    let b = run_closed_loop(&fine).unwrap();
    assert!(b.feasible_to_horizon());
    assert_eq!(b.records.len(), 1000);
    let (ga, gb) = (a.min_gap(10.0), b.min_gap(10.0));
    assert!((ga - gb).abs() <= 0.5, "{ga} vs {gb}");
}

#[test]
fn frozen_avcbf_reproduces_hocbf_inputs() {
    let h = preset("fig1", Method::Hocbf).unwrap();
    let MethodParams::Hocbf(hp) = &h.params else {
        unreachable!()
    };
    let MethodParams::Avcbf(base) = preset("fig1", Method::Avcbf).unwrap().params else {
        unreachable!()
    };
    let frozen = AvcbfParams {
        k1: hp.k1,
        k2: hp.k2,
        c3: hp.c3,
        q: hp.q,
        freeze_aux: true,
        ..base
    };
    let mk = |params, aux0| Scenario {
        plant: AccParams::default(),
        params,
        bounds: BoundProfile::constant(0.4),
        initial: h.initial,
        aux0,
        horizon: 10.0,
        integrator: IntegratorConfig::default(),
        substep_log: None,
    };
    let th = run_closed_loop(&mk(h.params.clone(), AuxState::None)).unwrap();
    let ta = run_closed_loop(&mk(
        MethodParams::Avcbf(frozen),
        AuxState::Avcbf { a1: 1.0, pi12: 0.0 },
    ))
    .unwrap();
    assert_eq!(th.records.len(), 100);
    for (a, b) in th.records.iter().zip(&ta.records) {
        assert!((a.u.unwrap() - b.u.unwrap()).abs() <= 1e-6, "t={}", a.t);
        assert_eq!(b.a1, Some(1.0));
    }
}

#[test]
fn finite_differences_match_analytic_chains() {
    for (m, rep) in fd_suite().unwrap() {
        assert!(rep.max_rel_err <= 1e-4, "{m}: {rep:?}");
        assert!(rep.samples > 10_000);
    }
}

#[test]
fn auxiliary_rate_matches_logged_derivative() {
    let mut scn = nominal_scenario(Method::Avcbf, Some(DEFAULT_SUBSTEP));
    scn.horizon = 10.0;
    let t = run_closed_loop(&scn).unwrap();
    let mut worst: f64 = 0.0;
    for w in t.substeps.windows(3).filter(|w| w[0].step == w[2].step) {
        let fd = (w[2].state[2] - w[0].state[2]) / (w[2].t - w[0].t);
        let pi = w[1].state[3];
        worst = worst.max((fd - pi).abs() / pi.abs().max(1.0));
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn sacc_like_gap_derivative_is_exact() {
    // With the gap as ψ0 of the HOCBF chain, dψ0/dt = v_p - v exactly.
    let mut scn = nominal_scenario(Method::Hocbf, Some(DEFAULT_SUBSTEP));
    scn.horizon = 0.1;
    let t = run_closed_loop(&scn).unwrap();
    let eval = AccChainEvaluator {
        params: scn.params.clone(),
        plant: scn.plant.clone(),
    };
    let rep = finite_diff_validate(&t, &eval).unwrap();
    assert!(rep.max_rel_err <= 1e-6, "{rep:?}");
}

#[test]
fn feasible_runs_stay_invariant() {
    for profile in [
        BoundProfile::constant(0.4),
        BoundProfile::ramp(0.4, 0.2, 0.0, 50.0),
    ] {
        for m in Method::ALL {
            let mut scn = nominal_scenario(m, None);
            scn.bounds = profile.clone();
            let t = run_closed_loop(&scn).unwrap();
            if t.feasible_to_horizon() {
                let v = invariance_violations(&t, &scn.params, 10.0, 1e-6);
                assert!(v.is_empty(), "{m}: {v:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn short_runs_keep_time_strictly_increasing(
        z0 in 40.0f64..150.0, v0 in 2.0f64..20.0, c_d in 0.2f64..0.5, mi in 0usize..3,
    ) {
        let mut scn = nominal_scenario(Method::ALL[mi], None);
        scn.initial.z = z0;
        scn.initial.v = v0;
        scn.bounds = BoundProfile::constant(c_d);
        scn.horizon = 3.0;
        let t = run_closed_loop(&scn).unwrap();
        for w in t.records.windows(2) {
            prop_assert!(w[1].t > w[0].t);
        }
        prop_assert!(t.records.len() <= 30);
        if t.feasible_to_horizon() {
            prop_assert_eq!(t.records.len(), 30);
        }
    }
}
