mod common;

use common::{problem_text, spec, TWO};
use hjswitch::model::CouplingMatrix;
use hjswitch::solver::solve;
use hjswitch::weights::{weight_gap_integral, weights_general, weights_two_state, WeightSystem};
use proptest::prelude::*;

/// Symmetric three-state chain with positive rates, so rows and columns both sum to zero.
fn three_state(a: f64, b: f64, c: f64) -> CouplingMatrix {
    CouplingMatrix::new(vec![
        vec![a + b, -a, -b],
        vec![-a, a + c, -c],
        vec![-b, -c, b + c],
    ])
    .unwrap()
}

fn rates() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0)
}

proptest! {
    #[test]
    fn weights_are_a_probability_vector((a, b, c) in rates(), i in 0usize..3, s in -20.0f64..0.0) {
        let w = weights_general(&three_state(a, b, c), i).unwrap();
        let phi = w.eval(s);
        prop_assert!((phi.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(phi.iter().all(|p| *p >= -1e-12));
        let at_zero = w.eval(0.0);
        for (k, p) in at_zero.iter().enumerate() {
            let expected = if k == i { 1.0 } else { 0.0 };
            prop_assert!((p - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn weights_satisfy_the_semigroup_law(
        (a, b, c) in rates(),
        i in 0usize..3,
        s in -5.0f64..0.0,
        h in 0.0f64..5.0,
    ) {
        let coupling = three_state(a, b, c);
        let family: Vec<WeightSystem> =
            (0..3).map(|k| weights_general(&coupling, k).unwrap()).collect();
        let lhs = family[i].eval(s - h);
        let phi = family[i].eval(s);
        for j in 0..3 {
            let rhs: f64 = (0..3).map(|k| phi[k] * family[k].eval(-h)[j]).sum();
            prop_assert!((lhs[j] - rhs).abs() <= 1e-9);
        }
    }

    #[test]
    fn doubly_stochastic_chains_equidistribute((a, b, c) in rates(), i in 0usize..3) {
        let w = weights_general(&three_state(a, b, c), i).unwrap();
        let s = -30.0;
        for (k, p) in w.eval(s).iter().enumerate() {
            prop_assert!((p - 1.0 / 3.0).abs() <= w.tail_bound(k, s) + 1e-12);
        }
    }

    #[test]
    fn two_state_mixing_identity(c in 0.1f64..4.0, s in -5.0f64..0.0, h in 0.0f64..5.0) {
        let w: Vec<WeightSystem> = (0..2).map(|i| weights_two_state(c, c, i).unwrap()).collect();
        let phi = w[0].eval(s);
        let lhs = w[0].eval(s - h);
        for j in 0..2 {
            let rhs = phi[0] * w[0].eval(-h)[j] + phi[1] * w[1].eval(-h)[j];
            prop_assert!((lhs[j] - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_state_gap_integral(c in 0.25f64..4.0) {
        let w = weights_two_state(c, c, 0).unwrap();
        let gap = weight_gap_integral(&w, 0, 1);
        prop_assert!((gap.value - 1.0 / (2.0 * c)).abs() <= 1e-8);
    }
}

fn small(initial: (&str, &str)) -> String {
    problem_text(
        16,
        1.0 / 32.0,
        0.5,
        TWO,
        &[
            ("cosine(1, 1, 0)", initial.0),
            ("cosine(-0.5, 1, 0)", initial.1),
        ],
    )
}

fn waves() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn constant_shift_moves_values_by_the_constant((a1, a2, p1, p2) in waves(), beta in -2.0f64..2.0) {
        let (sp, params) = spec(&small((
            &format!("sine({a1}, 1, {p1})"),
            &format!("cosine({a2}, 2, {p2})"),
        )));
        let shifted = sp.with_initial(
            sp.initial.iter().map(|g| g.iter().map(|x| x + beta).collect()).collect(),
        );
        let u = solve(&sp, &params).unwrap();
        let w = solve(&shifted, &params).unwrap();
        for (a, b) in u.values.iter().flatten().flatten().zip(w.values.iter().flatten().flatten()) {
            prop_assert!((b - a - beta).abs() <= 1e-12);
        }
    }

    #[test]
    fn larger_data_give_larger_values((a1, a2, p1, p2) in waves(), bump in 0.0f64..1.0) {
        let (sp, params) = spec(&small((
            &format!("sine({a1}, 1, {p1})"),
            &format!("cosine({a2}, 2, {p2})"),
        )));
        let grid = sp.grid.clone();
        let raised = sp.with_initial(vec![
            sp.initial[0].clone(),
            sp.initial[1]
                .iter()
                .enumerate()
                .map(|(n, x)| x + bump * (grid.coords(n)[0] * 6.0).sin().max(0.0))
                .collect(),
        ]);
        let u = solve(&sp, &params).unwrap();
        let w = solve(&raised, &params).unwrap();
        // Monotone up to the velocity search: each step may miss the minimum by the search
        // resolution times the objective's Lipschitz constant in q (at most 2 * bound * dt).
        let slack = sp.horizon * 2.0 * params.velocity_bound * params.search(1).resolution();
        for (a, b) in u.values.iter().flatten().flatten().zip(w.values.iter().flatten().flatten()) {
            prop_assert!(*b >= a - slack, "{} < {} - {}", b, a, slack);
        }
    }

    #[test]
    fn relabelling_states_permutes_values((a1, a2, p1, p2) in waves()) {
        let (sp, params) = spec(&small((
            &format!("sine({a1}, 1, {p1})"),
            &format!("cosine({a2}, 2, {p2})"),
        )));
        let mut p = params.clone();
        p.lf_dissipation.reverse();
        let u = solve(&sp, &params).unwrap();
        let w = solve(&sp.permuted(&[1, 0]), &p).unwrap();
        for (a, b) in u.values.iter().zip(&w.values) {
            prop_assert_eq!(&a[0], &b[1]);
            prop_assert_eq!(&a[1], &b[0]);
        }
    }
}
