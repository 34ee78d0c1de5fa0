//! Chain construction: worked examples and algebraic invariants.

use cbf_core::acc::{build_stage, plant_terms, preset, AccParams, PlantState};
use cbf_core::cbf::{
    avcbf_chain_rd2, clf_row, eval_phi_chain, eval_psi_chain_avcbf, eval_psi_chain_hocbf,
    psi1_ratio_form, psi1_recursion_form, AuxState, AuxVariable, AvcbfParams, BarrierDerivs,
    ClassKappa, HocbfParams, Method, MethodParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const M: f64 = 1650.0;

fn acc_barrier(z: f64, v: f64) -> BarrierDerivs {
    plant_terms(&PlantState { z, v }, &AccParams::default()).barrier
}

fn hocbf(k: f64) -> HocbfParams {
    HocbfParams {
        k1: k,
        k2: k,
        c3: 2.0,
        q: 1000.0,
    }
}

fn avcbf(k: f64) -> AvcbfParams {
    match preset("fig1", Method::Avcbf).unwrap().params {
        MethodParams::Avcbf(mut p) => {
            p.k1 = k;
            p.k2 = k;
            p
        }
        _ => unreachable!(),
    }
}

#[test]
fn class_kappa_examples() {
    assert!((ClassKappa::Linear(0.1).eval(90.0) - 9.0).abs() < 1e-12);
    assert_eq!(ClassKappa::Quadratic(1.0).eval(90.0), 8100.0);
    assert_eq!(ClassKappa::Linear(0.7).eval(0.0), 0.0);
    assert_eq!(ClassKappa::Quadratic(0.7).eval(0.0), 0.0);
}

#[test]
fn sacc_hocbf_example() {
    // SACC: b = z - 10, ḃ = 13.89 - v, b̈ = -u.
    let b = BarrierDerivs {
        lie: vec![90.0, 7.89, 0.0],
        input_gain: -1.0,
    };
    let c = eval_psi_chain_hocbf(
        &b,
        &[ClassKappa::Linear(0.1), ClassKappa::Linear(0.1)],
        0,
        1,
    );
    assert!((c.values[0] - 90.0).abs() < 1e-12);
    assert!((c.values[1] - 16.89).abs() < 1e-12);
    assert_eq!(c.top.coeffs[0], -1.0);
    assert!((c.top.constant - (0.1 * 7.89 + 0.1 * 16.89)).abs() < 1e-12);
}

#[test]
fn avcbf_initial_example() {
    let c = avcbf_chain_rd2(&acc_barrier(100.0, 6.0), 1.0, 1.0, 0.1, 0.1, 0, 1, 3);
    assert!((c.values[0] - 90.0).abs() < 1e-12);
    assert!((c.values[1] - 106.89).abs() < 1e-12);
    assert!((c.top.coeffs[0] + 1.0 / M).abs() < 1e-18);
    assert_eq!(c.top.coeffs[1], 90.0);
}

#[test]
fn closed_form_matches_general_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let b = acc_barrier(rng.gen_range(10.0..150.0), rng.gen_range(0.5..30.0));
        let (a1, pi) = (rng.gen_range(0.01..10.0), rng.gen_range(-5.0..5.0));
        let (k1, k2) = (rng.gen_range(0.01..2.0), rng.gen_range(0.01..2.0));
        let closed = avcbf_chain_rd2(&b, a1, pi, k1, k2, 0, 1, 3);
        let aux = AuxVariable {
            derivs: vec![a1, pi],
            input_col: 1,
        };
        let general = eval_psi_chain_avcbf(
            &b,
            &[aux],
            &[ClassKappa::Linear(k1), ClassKappa::Linear(k2)],
            0,
            3,
        )
        .unwrap();
        for (x, y) in closed.values.iter().zip(&general.values) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
        for (x, y) in closed.top.coeffs.iter().zip(&general.top.coeffs) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
        let scale = 1.0 + closed.top.constant.abs();
        assert!((closed.top.constant - general.top.constant).abs() <= 1e-10 * scale);
    }
}

#[test]
fn phi_chain_examples() {
    let aux = AuxVariable {
        derivs: vec![1.0, 1.0],
        input_col: 1,
    };
    let phi = eval_phi_chain(&aux, &[0.1, 0.1], 1e-10, 3);
    assert!((phi.values[1] - 1.1).abs() < 1e-15);
    let row = phi.row("phi12");
    assert!((row.constant - (0.21 - 1e-10)).abs() < 1e-15);
    assert_eq!(row.coeffs, vec![0.0, 1.0, 0.0]);

    let flat = AuxVariable {
        derivs: vec![1.0, 0.0],
        input_col: 1,
    };
    let row = eval_phi_chain(&flat, &[0.0, 0.0], 1e-10, 3).row("phi12");
    assert_eq!(row.constant, -1e-10);
}

#[test]
fn clf_row_example() {
    let terms = plant_terms(&PlantState { z: 100.0, v: 6.0 }, &AccParams::default());
    // V = 324, L_f V = 36·39.1/1650, L_g V = -36/1650.
    assert!((terms.clf.lf - 0.853_090_909).abs() < 1e-8);
    assert!((terms.clf.lg + 0.021_818_18).abs() < 1e-8);
    let row = clf_row(&terms.clf, 2.0, 0, 1, 2);
    // Stored as δ - L_g V u - L_f V - c3 V >= 0.
    assert!((row.coeffs[0] - 36.0 / M).abs() < 1e-15);
    assert_eq!(row.coeffs[1], 1.0);
    assert!((row.constant + 36.0 * 39.1 / M + 648.0).abs() < 1e-12);
}

#[test]
fn avcbf_stage_layout_and_bounds() {
    let p = preset("fig1", Method::Avcbf).unwrap();
    let qp = build_stage(
        &p.initial,
        &p.aux0,
        &p.params,
        &AccParams::default(),
        (-6474.6, 6474.6),
    )
    .unwrap();
    assert_eq!(qp.dim(), 3);
    assert_eq!(qp.var_labels, vec!["u", "nu1", "delta"]);
    let pac = preset("fig1", Method::Pacbf).unwrap();
    let qp = build_stage(
        &pac.initial,
        &pac.aux0,
        &pac.params,
        &AccParams::default(),
        (-1.0, 1.0),
    )
    .unwrap();
    assert_eq!(qp.dim(), 5);
    let up = qp.row_by_tag("p1_upper").unwrap();
    let lo = qp.row_by_tag("p1_lower").unwrap();
    assert_eq!((up.coeffs[1], lo.coeffs[1]), (-1.0, 1.0));
    assert!((up.constant - (3.0 - 0.103)).abs() < 1e-15 && (lo.constant - 0.103).abs() < 1e-15);
    // At the target penalty the CLF-p1 row collapses to δ_p >= 0.
    let clf_p = qp.row_by_tag("clf_p1").unwrap();
    assert_eq!(clf_p.constant, 0.0);
    assert_eq!(clf_p.coeffs, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn degenerate_avcbf_rows_equal_hocbf_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let plant = AccParams::default();
    for _ in 0..200 {
        let s = PlantState {
            z: rng.gen_range(5.0..200.0),
            v: rng.gen_range(0.5..35.0),
        };
        let k = rng.gen_range(0.01..3.0);
        let bounds = (-6474.6, 6474.6);
        let h = build_stage(
            &s,
            &AuxState::None,
            &MethodParams::Hocbf(hocbf(k)),
            &plant,
            bounds,
        )
        .unwrap();
        let aux = AuxState::Avcbf { a1: 1.0, pi12: 0.0 };
        let a = build_stage(&s, &aux, &MethodParams::Avcbf(avcbf(k)), &plant, bounds).unwrap();
        for tag in ["psi2", "clf_speed"] {
            let (rh, ra) = (h.row_by_tag(tag).unwrap(), a.row_by_tag(tag).unwrap());
            // HOCBF layout (u, δ) vs AVCBF layout (u, ν1, δ); ν1 multiplies zero.
            assert!((rh.coeffs[0] - ra.coeffs[0]).abs() <= 1e-12);
            assert!((rh.coeffs[1] - ra.coeffs[2]).abs() <= 1e-12);
            assert!((rh.constant - ra.constant).abs() <= 1e-12 * (1.0 + rh.constant.abs()));
        }
    }
}

#[test]
fn ratio_form_equals_recursion_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let (b, db) = (rng.gen_range(0.0..200.0), rng.gen_range(-30.0..30.0));
        let (a1, da1) = (rng.gen_range(1e-3..=10.0), rng.gen_range(-5.0..5.0));
        let (a2, k1) = (rng.gen_range(0.1..5.0), rng.gen_range(0.01..2.0));
        let rec = psi1_recursion_form(a2, b, db, a1, da1, k1);
        let ratio = psi1_ratio_form(a2, b, db, a1, da1, k1);
        // Relative to the size of the summed terms so near-cancelling
        // states do not blow up the quotient.
        let scale = a2 * ((da1 * b).abs() + (a1 * db).abs() + (k1 * a1 * b).abs());
        assert!((rec - ratio).abs() <= 1e-10 * scale, "{rec} vs {ratio}");
    }
}

proptest! {
    #[test]
    fn positive_scaling_scales_chain(
        z in 10.0f64..200.0, v in 0.5f64..35.0,
        a1 in 0.01f64..10.0, pi in -3.0f64..3.0, lam in 1e-3f64..1e3,
    ) {
        let b = acc_barrier(z, v);
        let c = avcbf_chain_rd2(&b, a1, pi, 0.1, 0.1, 0, 1, 3);
        let s = avcbf_chain_rd2(&b, lam * a1, lam * pi, 0.1, 0.1, 0, 1, 3);
        for (x, y) in c.values.iter().zip(&s.values) {
            prop_assert!((lam * x - y).abs() <= 1e-12 * (1.0 + (lam * x).abs()));
            prop_assert_eq!(x.signum(), y.signum());
        }
    }

    #[test]
    fn chain_consistency(
        z in 10.0f64..200.0, v in 0.5f64..35.0,
        a1 in 0.01f64..10.0, pi in -3.0f64..3.0, k1 in 0.01f64..2.0,
    ) {
        let b = acc_barrier(z, v);
        let c = avcbf_chain_rd2(&b, a1, pi, k1, 0.1, 0, 1, 3);
        // ψ̇0 = ȧ b + a ḃ from the plant Lie derivatives directly.
        let dpsi0 = pi * (z - 10.0) + a1 * (13.89 - v);
        prop_assert!((c.values[1] - (dpsi0 + k1 * c.values[0])).abs() <= 1e-12 * (1.0 + c.values[1].abs()));
        let h = eval_psi_chain_hocbf(&b, &[ClassKappa::Linear(k1), ClassKappa::Linear(0.1)], 0, 2);
        prop_assert!((h.values[1] - ((13.89 - v) + k1 * (z - 10.0))).abs() <= 1e-12 * (1.0 + h.values[1].abs()));
    }

    #[test]
    fn ratio_form_equivalence(
        b in 0.0f64..200.0, db in -30.0f64..30.0,
        a1 in 1e-3f64..10.0, da1 in -5.0f64..5.0, k1 in 0.01f64..2.0,
    ) {
        let rec = psi1_recursion_form(1.0, b, db, a1, da1, k1);
        let ratio = psi1_ratio_form(1.0, b, db, a1, da1, k1);
        let scale = (da1 * b).abs() + (a1 * db).abs() + (k1 * a1 * b).abs();
        prop_assert!((rec - ratio).abs() <= 1e-10 * scale);
    }
}
