mod common;

use common::{coarse, ergodic, h, problem_text, spec};
use hjswitch::ergodic::{
    convergence_audit, ergodic_from_start, refine_ergodic, residuals, Tolerances,
};
use hjswitch::grid::sup_diff;

#[test]
fn symmetric_cosine_has_constant_one() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let tol = 5.0 * h(&spec);
    assert!((es.c_slope - 1.0).abs() <= tol, "{}", es.c_slope);
    assert!(
        (es.c_relative_value - 1.0).abs() <= tol,
        "{}",
        es.c_relative_value
    );
    assert!(es.converged);
    assert_eq!(es.v[0][0], 0.0);
}

#[test]
fn estimators_agree_and_residuals_are_small() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    assert!((es.c_slope - es.c_relative_value).abs() <= es.tolerances.c);
    assert!(
        es.max_residual <= es.tolerances.residual,
        "{}",
        es.max_residual
    );
    let recomputed = residuals(&spec, &es.v, es.c);
    assert_eq!(recomputed, es.residuals);
}

#[test]
fn shifting_every_potential_shifts_the_constant() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let kappa = 0.5;
    let shifted = spec.with_potential_shift(kappa);
    let mut slope = es.slope;
    slope.c += kappa;
    let tol = Tolerances::for_spec(&spec, &params);
    let moved = ergodic_from_start(&shifted, &params, slope, &es.v, tol, 4000).unwrap();
    assert!((moved.c - es.c - kappa).abs() <= tol.c / 10.0);
    for (a, b) in moved.v.iter().zip(&es.v) {
        assert!(sup_diff(a, b) <= 1e-8);
    }
}

#[test]
fn swapping_states_swaps_the_ergodic_functions() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let swapped = spec.permuted(&[1, 0]);
    let mut p = params.clone();
    p.lf_dissipation.reverse();
    let es2 = ergodic(&swapped, &p);
    assert!((es.c - es2.c).abs() <= es.tolerances.c / 10.0);
    // normalisations differ by the value of the other state at the origin
    for (a, b) in [(0, 1), (1, 0)] {
        let offset = es.v[a][0] - es2.v[b][0];
        let diff = es.v[a]
            .iter()
            .zip(&es2.v[b])
            .map(|(x, y)| (x - y - offset).abs())
            .fold(0.0, f64::max);
        assert!(diff <= es.tolerances.c, "{diff}");
    }
}

#[test]
fn starting_on_the_ergodic_functions_is_stationary() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    for beta in [0.0, 0.75] {
        let start: Vec<Vec<f64>> =
            es.v.iter()
                .map(|v| v.iter().map(|x| x + beta).collect())
                .collect();
        let audit = convergence_audit(&spec.with_initial(start), &params, &es, 6.0).unwrap();
        for row in &audit.ladder {
            assert!(row.distance <= es.tolerances.convergence, "{row:?}");
        }
    }
}

#[test]
fn generic_data_converge_to_the_asymptotic_profile() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let audit = convergence_audit(&spec, &params, &es, 12.0).unwrap();
    assert!(audit.passed, "{audit:?}");
}

#[test]
fn refinement_keeps_the_constant() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let fine = spec.refined(2).unwrap();
    let refined = refine_ergodic(&es, &spec, &fine, &params.refined(&fine), 2000).unwrap();
    assert!((refined.c - 1.0).abs() <= 5.0 * h(&fine));
}

#[test]
fn three_state_chain_has_a_common_constant() {
    let (spec, params) = spec(&problem_text(
        32,
        1.0 / 64.0,
        12.0,
        "[[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [-1.0, 0.0, 1.0]]",
        &[
            ("cosine(1, 1, 0)", "zero"),
            ("cosine(0.5, 1, 0.25)", "sine(0.2, 1, 0)"),
            ("cosine(-0.5, 1, 0)", "zero"),
        ],
    ));
    let es = ergodic(&spec, &params);
    assert_eq!(es.m(), 3);
    assert!((es.c_slope - es.c_relative_value).abs() <= es.tolerances.c);
    assert!(es.max_residual <= es.tolerances.residual);
}
