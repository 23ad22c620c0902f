mod common;

use common::{coarse, ergodic, problem_text, spec, TWO};
use hjswitch::curves::{
    along_curve_identities, deterministic_defect_floor, kink_mask, lipschitz_audit,
    max_state_difference, stability_audit, subsolution_check, CurveExtractor, DEFAULT_DELTA0,
};
use hjswitch::grid::TorusGrid;
use hjswitch::solver::solve;

#[test]
fn zero_potential_curves_are_stationary() {
    let (spec, params) = spec(&problem_text(
        32,
        1.0 / 64.0,
        4.0,
        TWO,
        &[("zero", "zero"), ("zero", "zero")],
    ));
    let es = ergodic(&spec, &params);
    assert_eq!(es.c, 0.0);
    let ex = CurveExtractor::new(&es, &spec, &params).unwrap();
    for x in [0.0, 0.3, 0.71875] {
        for i in 0..2 {
            let c = ex.extract([x, 0.0], i, 2.0).unwrap();
            assert!(c.velocities.iter().all(|q| q[0] == 0.0));
            assert!(c.points.iter().all(|p| p[0] == x));
            assert_eq!(c.total_defect(), 0.0);
            let id = along_curve_identities(&c, &es, &spec).unwrap();
            assert_eq!(id.max_fenchel_defect, vec![0.0, 0.0]);
            assert_eq!(id.max_equation_defect, vec![0.0, 0.0]);
        }
    }
}

#[test]
fn curves_from_the_potential_maximum_stay_put() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let ex = CurveExtractor::new(&es, &spec, &params).unwrap();
    let dx = spec.grid.spacing();
    for i in 0..2 {
        let c = ex.extract([0.0, 0.0], i, 3.0).unwrap();
        for p in &c.points {
            assert!(spec.grid.distance(*p, [0.0, 0.0]) <= 2.0 * dx + 1e-12);
        }
    }
}

#[test]
fn fenchel_young_holds_along_every_curve() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let ex = CurveExtractor::new(&es, &spec, &params).unwrap();
    for node in [0, 5, 11, 16, 27] {
        for i in 0..2 {
            let c = ex.extract(spec.grid.coords(node), i, 2.0).unwrap();
            let id = along_curve_identities(&c, &es, &spec).unwrap();
            assert!(id.min_fenchel_gap >= -1e-12, "{}", id.min_fenchel_gap);
            assert_eq!(id.total, c.steps());
        }
    }
}

#[test]
fn window_defect_is_at_least_the_deterministic_floor() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let ex = CurveExtractor::new(&es, &spec, &params).unwrap();
    let floor = deterministic_defect_floor(&es, &spec, &params, 0, 1.0).unwrap();
    for node in (0..32).step_by(4) {
        let c = ex.extract(spec.grid.coords(node), 0, 1.0).unwrap();
        assert!(c.total_defect() >= floor[node] - 1e-9);
    }
}

#[test]
fn concatenation_is_exact() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let ex = CurveExtractor::new(&es, &spec, &params).unwrap();
    let x = spec.grid.coords(9);
    let first = ex.extract(x, 1, 2.0).unwrap();
    let whole = ex.extract(x, 1, 4.0).unwrap();
    let rest = ex.extract_window(first.end(), 1, first.steps(), first.steps());
    assert_eq!(first.concat(rest), whole);
}

#[test]
fn coupling_bound_is_half_the_state_gap_for_two_states() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 16.0);
    let long = solve(&spec, &params).unwrap();
    let es = ergodic(&spec, &params);
    let ex = CurveExtractor::new(&es, &spec, &params).unwrap();
    let beta = max_state_difference(&es.v);
    for node in [0, 8, 16, 24] {
        let c = ex.extract(spec.grid.coords(node), 0, 15.0).unwrap();
        let r = stability_audit(
            &c,
            &long,
            &es,
            &spec,
            1.0,
            15.0,
            DEFAULT_DELTA0,
            es.tolerances.convergence,
        )
        .unwrap();
        assert_eq!(r.coupling_terms.len(), 1);
        let t = &r.coupling_terms[0];
        assert!((t.bound - beta / 2.0).abs() < 1e-6 * beta.max(1.0));
        assert!(t.margin >= 0.0);
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn stability_rejects_out_of_range_windows() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(1, 1, 0)", 4.0);
    let long = solve(&spec, &params).unwrap();
    let es = ergodic(&spec, &params);
    let ex = CurveExtractor::new(&es, &spec, &params).unwrap();
    let c = ex.extract([0.25, 0.0], 0, 4.0).unwrap();
    assert!(stability_audit(&c, &long, &es, &spec, 2.0, 4.0, 0.1, 0.0).is_err());
    assert!(stability_audit(&c, &long, &es, &spec, 4.0, 4.0, 0.1, 0.0).is_err());
}

#[test]
fn kinks_are_found_where_slopes_jump() {
    let grid = TorusGrid::new(1, 64).unwrap();
    // tent with its peak at 1/2 and a corner at 0
    let tent = grid.sample(|x| 0.5 - (x[0] - 0.5).abs());
    let smooth = grid.sample(|x| (2.0 * std::f64::consts::PI * x[0]).cos() / 10.0);
    let mask = kink_mask(&grid, &[tent, smooth]);
    let kinks: Vec<usize> = (0..64).filter(|&n| mask[0][n]).collect();
    assert_eq!(kinks, vec![0, 32]);
    assert!(mask[1].iter().all(|k| !k));
}

#[test]
fn lipschitz_quotients_vanish_for_the_trivial_problem() {
    let (spec, params) = spec(&problem_text(
        16,
        1.0 / 32.0,
        2.0,
        TWO,
        &[("zero", "zero"), ("zero", "zero")],
    ));
    let r = lipschitz_audit(&solve(&spec, &params).unwrap(), &spec);
    assert_eq!(r.max_time_quotient, 0.0);
    assert_eq!(r.max_space_quotient, 0.0);
    assert!(r.passed);
}

#[test]
fn lipschitz_time_quotient_is_bounded_by_the_data_gap() {
    let alpha = 0.8;
    let (spec, params) = spec(&problem_text(
        16,
        1.0 / 32.0,
        3.0,
        TWO,
        &[("zero", "zero"), ("zero", &format!("constant({alpha})"))],
    ));
    let r = lipschitz_audit(&solve(&spec, &params).unwrap(), &spec);
    assert!(r.max_time_quotient <= alpha + r.slack);
    assert!(r.passed);
}

#[test]
fn ergodic_functions_are_subsolutions_along_sampled_curves() {
    let (spec, params) = coarse("cosine(1, 1, 0)", "cosine(-1, 1, 0)", 12.0);
    let es = ergodic(&spec, &params);
    let velocities: Vec<_> = [-1.0, -0.3, 0.0, 0.4, 1.2]
        .iter()
        .map(|&q| [q, 0.0])
        .collect();
    let r = subsolution_check(
        &es,
        &spec,
        &[0, 7, 13, 22],
        &velocities,
        1.0,
        64,
        es.tolerances.residual,
    )
    .unwrap();
    assert!(r.passed, "min margin {}", r.min_margin);
}
