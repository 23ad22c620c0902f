//! Ergodic constant and ergodic functions: long-time slope, relative value iteration,
//! stationarity residuals, and the large-time convergence audit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sup_diff, Field};
use crate::model::ProblemSpec;
use crate::solver::{
    evolve, godunov_hamiltonian, lf_numerical_hamiltonian, solve, DppOperator, SchemeParams,
    ValueField,
};

/// Cap on relative value iterations.
pub const RVI_MAX_ITERATIONS: usize = 6000;
/// Fixed-point tolerance of relative value iteration.
pub const RVI_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Agreement of the two estimators of `c`.
    pub c: f64,
    /// Stationarity residual.
    pub residual: f64,
    /// Distance to the limit at the end of the long run.
    pub convergence: f64,
}

impl Tolerances {
    /// `tol_c = 5 (dx + dt)`, `tol_E = 10 (dx + dt) K`, `tol_conv = 10 (dx + dt)`.
    pub fn for_spec(spec: &ProblemSpec, params: &SchemeParams) -> Self {
        let h = spec.grid.spacing() + params.time_step;
        Self {
            c: 5.0 * h,
            residual: 10.0 * h * spec.constants().scale,
            convergence: 10.0 * h,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            c: self.c * factor,
            residual: self.residual * factor,
            convergence: self.convergence * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    /// `-slope` of `mean_x u_1` over the last half of the run.
    pub c: f64,
    /// Same over the last quarter.
    pub c_quarter: f64,
    pub converged: bool,
}

fn least_squares_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in t.iter().zip(y) {
        num += (a - tm) * (b - ym);
        den += (a - tm) * (a - tm);
    }
    num / den
}

/// Slope estimate from an existing long run.
pub fn slope_from_run(vf: &ValueField, tol_c: f64) -> Result<SlopeEstimate> {
    let t_end = vf.final_time();
    if vf.len() < 8 {
        return Err(Error::Problem(
            "long run too short for a slope estimate".into(),
        ));
    }
    let means: Vec<f64> = vf
        .values
        .iter()
        .map(|u| u[0].iter().sum::<f64>() / u[0].len() as f64)
        .collect();
    let window = |from: f64| {
        let idx: Vec<usize> = (0..vf.len())
            .filter(|&n| vf.times[n] >= from - 1e-12)
            .collect();
        let t: Vec<f64> = idx.iter().map(|&n| vf.times[n]).collect();
        let y: Vec<f64> = idx.iter().map(|&n| means[n]).collect();
        -least_squares_slope(&t, &y)
    };
    let c = window(0.5 * t_end);
    let c_quarter = window(0.75 * t_end);
    Ok(SlopeEstimate {
        c,
        c_quarter,
        converged: (c - c_quarter).abs() <= tol_c,
    })
}

/// `c` as minus the long-time slope of the spatial mean of `u_1`.
pub fn ergodic_constant_slope(
    spec: &ProblemSpec,
    params: &SchemeParams,
    t_long: f64,
) -> Result<SlopeEstimate> {
    let vf = solve(&spec.with_horizon(t_long), params)?;
    slope_from_run(&vf, Tolerances::for_spec(spec, params).c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSolution {
    /// Ergodic constant attached to `v` (relative value estimate).
    pub c: f64,
    pub c_slope: f64,
    pub c_relative_value: f64,
    /// Ergodic functions, normalised by `v_1(origin) = 0`.
    pub v: Vec<Field>,
    /// `H_k(x, Dv_k) + sum_j c_kj v_j - c` with a monotone upwind Hamiltonian.
    pub residuals: Vec<Field>,
    pub max_residual: f64,
    /// Same residual with the Lax–Friedrichs Hamiltonian (diagnostic only).
    pub lf_max_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub final_increment: f64,
    pub slope: SlopeEstimate,
    pub tolerances: Tolerances,
}

impl ErgodicSolution {
    pub fn m(&self) -> usize {
        self.v.len()
    }

    /// `max_x |v_j - v_k|` over all pairs.
    pub fn max_state_gap(&self) -> f64 {
        let mut best = 0.0f64;
        for a in &self.v {
            for b in &self.v {
                best = best.max(sup_diff(a, b));
            }
        }
        best
    }
}

/// Residual fields of the stationary system for `(v, c)`.
pub fn residuals(spec: &ProblemSpec, v: &[Field], c: f64) -> Vec<Field> {
    let m = spec.m();
    (0..m)
        .map(|k| {
            (0..spec.grid.len())
                .map(|node| {
                    let h = godunov_hamiltonian(&spec.hamiltonians[k], &spec.grid, &v[k], node);
                    let coupled: f64 = (0..m).map(|j| spec.coupling.get(k, j) * v[j][node]).sum();
                    h + coupled - c
                })
                .collect()
        })
        .collect()
}

fn lf_residual_max(spec: &ProblemSpec, params: &SchemeParams, v: &[Field], c: f64) -> f64 {
    let m = spec.m();
    let mut worst = 0.0f64;
    for k in 0..m {
        for node in 0..spec.grid.len() {
            let h = lf_numerical_hamiltonian(
                &spec.hamiltonians[k],
                &spec.grid,
                &v[k],
                node,
                params.lf_dissipation[k],
            );
            let coupled: f64 = (0..m).map(|j| spec.coupling.get(k, j) * v[j][node]).sum();
            worst = worst.max((h + coupled - c).abs());
        }
    }
    worst
}

fn normalize(u: &mut [Field]) -> f64 {
    let r = u[0][0];
    for f in u.iter_mut() {
        for x in f.iter_mut() {
            *x -= r;
        }
    }
    r
}

/// Relative value iteration for the shifted one-step operator, started from `start`.
/// Returns (fixed point, increment, iterations, converged, `S(w)_1(origin)`).
pub fn relative_value_iteration(
    op: &DppOperator,
    start: &[Field],
    max_iterations: usize,
    tol: f64,
) -> (Vec<Field>, f64, usize, bool, f64) {
    let mut w = start.to_vec();
    normalize(&mut w);
    let mut increment = f64::INFINITY;
    let mut reference = 0.0;
    let mut it = 0;
    while it < max_iterations {
        let mut next = op.apply(&w).fields;
        reference = normalize(&mut next);
        increment = w
            .iter()
            .zip(&next)
            .map(|(a, b)| sup_diff(a, b))
            .fold(0.0, f64::max);
        w = next;
        it += 1;
        if increment < tol {
            break;
        }
    }
    (w, increment, it, increment < tol, reference)
}

/// Ergodic pair from a long run: the slope estimate fixes the shift, relative value
/// iteration (started from the end of the run) gives `v` and an independent `c`.
pub fn ergodic_from_run(
    spec: &ProblemSpec,
    params: &SchemeParams,
    long: &ValueField,
    tolerances: Tolerances,
) -> Result<ErgodicSolution> {
    let slope = slope_from_run(long, tolerances.c)?;
    ergodic_from_start(
        spec,
        params,
        slope,
        long.last(),
        tolerances,
        RVI_MAX_ITERATIONS,
    )
}

/// Relative value iteration shifted by `slope.c` and started from `start`.
pub fn ergodic_from_start(
    spec: &ProblemSpec,
    params: &SchemeParams,
    slope: SlopeEstimate,
    start: &[Field],
    tolerances: Tolerances,
    max_iterations: usize,
) -> Result<ErgodicSolution> {
    let dt = params.time_step;
    let op = DppOperator::new(spec, params, dt, slope.c)?;
    let (v, increment, iterations, converged, reference) =
        relative_value_iteration(&op, start, max_iterations, RVI_TOLERANCE);
    // at the fixed point S_c(w) = w + reference, and S_c adds c_s dt
    let c_rv = slope.c - reference / dt;
    let res = residuals(spec, &v, c_rv);
    let max_residual = res
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, b| a.max(b.abs()));
    let lf_max_residual = lf_residual_max(spec, params, &v, c_rv);
    Ok(ErgodicSolution {
        c: c_rv,
        c_slope: slope.c,
        c_relative_value: c_rv,
        v,
        residuals: res,
        max_residual,
        lf_max_residual,
        converged,
        iterations,
        final_increment: increment,
        slope,
        tolerances,
    })
}

/// Ergodic pair on the refined problem `fine`, started from `es` interpolated onto its grid.
pub fn refine_ergodic(
    es: &ErgodicSolution,
    coarse: &ProblemSpec,
    fine: &ProblemSpec,
    params: &SchemeParams,
    max_iterations: usize,
) -> Result<ErgodicSolution> {
    let start: Vec<Field> =
        es.v.iter()
            .map(|v| fine.grid.sample(|x| coarse.grid.interpolate(v, x)))
            .collect();
    ergodic_from_start(
        fine,
        params,
        es.slope,
        &start,
        Tolerances::for_spec(fine, params),
        max_iterations,
    )
}

pub fn ergodic_functions(
    spec: &ProblemSpec,
    params: &SchemeParams,
    t_long: f64,
) -> Result<ErgodicSolution> {
    let long = solve(&spec.with_horizon(t_long), params)?;
    ergodic_from_run(spec, params, &long, Tolerances::for_spec(spec, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub time: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceAudit {
    pub ladder: Vec<LadderRow>,
    /// Additive constant selecting the dynamical limit `v + alpha`.
    pub alpha: f64,
    pub transient: f64,
    pub decreasing: bool,
    /// First ladder time (after the transient) where `d` increased, if any.
    pub first_increase: Option<f64>,
    pub final_distance: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Geometric time ladder with ratio `sqrt 2` ending at `t_end`, snapped to the record lattice.
pub fn time_ladder(vf: &ValueField, t_end: f64, t_min: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = t_end;
    while t >= t_min - 1e-12 {
        let n = vf
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(n, _)| n)
            .unwrap();
        if out.last() != Some(&n) {
            out.push(n);
        }
        t /= std::f64::consts::SQRT_2;
    }
    out.reverse();
    out
}

/// `d(t) = max_k |u_k(., t) + c t - v_k - alpha|` on a geometric ladder of a run from `g`.
pub fn convergence_audit_run(
    es: &ErgodicSolution,
    run: &ValueField,
    transient: f64,
    tolerance: f64,
    dt: f64,
) -> ConvergenceAudit {
    let t_end = run.final_time();
    let last = run.last();
    let alpha = last[0][0] + es.c * t_end - es.v[0][0];
    let dist = |n: usize| {
        let t = run.times[n];
        run.values[n]
            .iter()
            .zip(&es.v)
            .map(|(u, v)| {
                u.iter()
                    .zip(v)
                    .fold(0.0f64, |a, (x, y)| a.max((x + es.c * t - y - alpha).abs()))
            })
            .fold(0.0, f64::max)
    };
    let ladder: Vec<LadderRow> = time_ladder(run, t_end, 0.25)
        .into_iter()
        .map(|n| LadderRow {
            time: run.times[n],
            distance: dist(n),
        })
        .collect();
    let mut first_increase = None;
    for w in ladder.windows(2) {
        if w[0].time < transient - 1e-12 {
            continue;
        }
        let slack = (((w[1].time - w[0].time) / dt) * es.final_increment).max(1e-6);
        if w[1].distance > w[0].distance + slack {
            first_increase = Some(w[1].time);
            break;
        }
    }
    let final_distance = ladder.last().map(|r| r.distance).unwrap_or(0.0);
    let decreasing = first_increase.is_none();
    ConvergenceAudit {
        ladder,
        alpha,
        transient,
        decreasing,
        first_increase,
        final_distance,
        tolerance,
        passed: decreasing && final_distance <= tolerance,
    }
}

/// Runs from the spec's own initial data up to `t_long` and audits convergence.
pub fn convergence_audit(
    spec: &ProblemSpec,
    params: &SchemeParams,
    es: &ErgodicSolution,
    t_long: f64,
) -> Result<ConvergenceAudit> {
    let run = solve(&spec.with_horizon(t_long), params)?;
    Ok(convergence_audit_run(
        es,
        &run,
        2.0,
        es.tolerances.convergence,
        params.time_step,
    ))
}

/// Runs the scheme from `start` without recording intermediate steps beyond the stride.
pub fn run_from(
    spec: &ProblemSpec,
    params: &SchemeParams,
    start: &[Field],
    horizon: f64,
) -> Result<ValueField> {
    let op = DppOperator::new(spec, params, params.time_step, 0.0)?;
    let steps = (horizon / params.time_step).round() as usize;
    Ok(evolve(&op, start, steps, params.record_every))
}
