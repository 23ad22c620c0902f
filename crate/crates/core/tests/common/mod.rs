#![allow(dead_code)]

use hjswitch::ergodic::{ergodic_from_run, ErgodicSolution, Tolerances};
use hjswitch::model::{problem_from_toml, ProblemSpec};
use hjswitch::solver::{solve, SchemeParams};

/// Two-state (or m-state) quadratic problem on a 1-D grid, as problem-file text.
pub fn problem_text(
    points: usize,
    step: f64,
    horizon: f64,
    matrix: &str,
    states: &[(&str, &str)],
) -> String {
    let mut s = format!(
        "name = \"test\"\n[grid]\ndim = 1\npoints = {points}\n[time]\nhorizon = {horizon}\nstep = {step}\n[coupling]\nmatrix = {matrix}\n"
    );
    for (potential, initial) in states {
        s.push_str(&format!(
            "[[state]]\nkappa = 1.0\npotential = \"{potential}\"\ninitial = \"{initial}\"\n"
        ));
    }
    s
}

pub const TWO: &str = "[[1.0, -1.0], [-1.0, 1.0]]";

pub fn spec(text: &str) -> (ProblemSpec, SchemeParams) {
    let cfg = problem_from_toml(text).unwrap();
    let params = SchemeParams::from_config(&cfg);
    (cfg.spec, params)
}

/// Coarse two-state problem: 32 nodes, step 1/64.
pub fn coarse(p1: &str, p2: &str, horizon: f64) -> (ProblemSpec, SchemeParams) {
    spec(&problem_text(
        32,
        1.0 / 64.0,
        horizon,
        TWO,
        &[(p1, "sine(0.3, 1, 0)"), (p2, "cosine(0.2, 2, 0.1)")],
    ))
}

pub fn ergodic(spec: &ProblemSpec, params: &SchemeParams) -> ErgodicSolution {
    let long = solve(spec, params).unwrap();
    ergodic_from_run(spec, params, &long, Tolerances::for_spec(spec, params)).unwrap()
}

pub fn h(spec: &ProblemSpec) -> f64 {
    spec.grid.spacing() + spec.time_step
}
