mod common;

use common::{coarse, h, problem_text, spec, TWO};
use hjswitch::solver::{
    crosscheck, dpp_window_check, field_difference, lf_substeps, solve, solve_lf,
    solve_lf_substepped, two_segment_bound,
};

#[test]
fn flat_data_stay_flat() {
    let (spec, params) = spec(&problem_text(
        16,
        1.0 / 32.0,
        2.0,
        TWO,
        &[("zero", "zero"), ("zero", "zero")],
    ));
    let vf = solve(&spec, &params).unwrap();
    assert!(vf.values.iter().flatten().flatten().all(|u| *u == 0.0));
}

#[test]
fn zero_horizon_returns_the_initial_data() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 0.0);
    let vf = solve(&spec, &params).unwrap();
    assert_eq!(vf.len(), 1);
    assert_eq!(vf.at(0), &spec.initial[..]);
}

#[test]
fn gap_in_initial_data_relaxes_like_the_weights() {
    let alpha = 1.0;
    let (spec, params) = spec(&problem_text(
        32,
        1.0 / 64.0,
        5.0,
        TWO,
        &[("zero", "zero"), ("zero", &format!("constant({alpha})"))],
    ));
    let vf = solve(&spec, &params).unwrap();
    for (t, u) in vf.times.iter().zip(&vf.values) {
        let exact = alpha * (1.0 - (-2.0 * t).exp()) / 2.0;
        for x in &u[0] {
            assert!((x - exact).abs() <= 2.0 * spec.time_step * alpha);
        }
    }
}

#[test]
fn identical_states_give_identical_values() {
    let text = problem_text(
        32,
        1.0 / 64.0,
        2.0,
        TWO,
        &[
            ("cosine(1, 1, 0)", "sine(0.3, 1, 0)"),
            ("cosine(1, 1, 0)", "sine(0.3, 1, 0)"),
        ],
    );
    let (spec, params) = spec(&text);
    let sub = lf_substeps(&spec, &params);
    let lf = solve_lf_substepped(&spec, &params, sub).unwrap();
    for vf in [solve(&spec, &params).unwrap(), lf] {
        for u in &vf.values {
            assert!(u[0].iter().zip(&u[1]).all(|(a, b)| (a - b).abs() <= 1e-10));
        }
    }
}

#[test]
fn lax_friedrichs_keeps_constants() {
    let (spec, params) = spec(&problem_text(
        16,
        1.0 / 32.0,
        1.0,
        TWO,
        &[("zero", "constant(0.7)"), ("zero", "constant(0.7)")],
    ));
    assert!(solve_lf(&spec, &params).is_err());
    let vf = solve_lf_substepped(&spec, &params, lf_substeps(&spec, &params)).unwrap();
    assert!(vf.values.iter().flatten().flatten().all(|u| *u == 0.7));
}

#[test]
fn one_step_window_reproduces_the_scheme() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 1.0);
    let vf = solve(&spec, &params).unwrap();
    let r = dpp_window_check(&vf, &spec, &params, spec.time_step, 0.5, 10, 7).unwrap();
    assert!(r.max_discrepancy <= 1e-12, "{}", r.max_discrepancy);
    let two = dpp_window_check(&vf, &spec, &params, 2.0 * spec.time_step, 0.5, 10, 7).unwrap();
    assert!(two.max_discrepancy <= 3.0 * h(&spec));
    assert!(dpp_window_check(&vf, &spec, &params, 0.75, 0.5, 10, 7).is_err());
}

#[test]
fn broken_line_curves_bound_the_value_from_above() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 1.0);
    let vf = solve(&spec, &params).unwrap();
    let r = two_segment_bound(&vf, &spec, &params, 1.0, 6, 3).unwrap();
    assert!(r.min_margin >= -h(&spec), "{}", r.min_margin);
}

#[test]
fn scheme_gap_shrinks_under_refinement() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(1, 1, 0)", 2.0);
    let cc = crosscheck(&spec, &params).unwrap();
    assert_eq!(cc.rows.len(), 2 * 64 + 1);
    assert_eq!(cc.rows[0].sup_difference, 0.0);
    let fine = spec.refined(2).unwrap();
    let cf = crosscheck(&fine, &params.refined(&fine)).unwrap();
    let ratio = cc.max_difference / cf.max_difference;
    assert!((1.5..=3.0).contains(&ratio), "{ratio}");
}

#[test]
fn self_convergence_is_first_order() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 2.0);
    let run = |factor: usize| {
        let s = spec.refined(factor).unwrap();
        let vf = solve(&s, &params.refined(&s)).unwrap();
        vf.last()
            .iter()
            .map(|u| u.iter().step_by(factor).copied().collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let (u1, u2, u4) = (run(1), run(2), run(4));
    let ratio = field_difference(&u1, &u2) / field_difference(&u2, &u4);
    assert!((1.5..=3.0).contains(&ratio), "{ratio}");
}
