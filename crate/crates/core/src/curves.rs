//! Approximate extremal curves of the ergodic problem and along-curve audits.
//!
//! A curve ending at `x` in state `i` is built backwards one time step at a time: the
//! velocity on `[s - dt, s]` minimises the one-step functional against the stationary
//! fields `v` (running cost shifted by `c`), weighted by the switching weights started at
//! `i` and evaluated at the absolute time `s`. Unit windows are concatenated, each new
//! window starting where the previous one ended, so the result on `[-2T, 0]` is exactly the
//! result on `[-T, 0]` followed by a re-extraction from `gamma(-T)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic::ErgodicSolution;
use crate::error::{Error, Result};
use crate::grid::{Field, Point, TorusGrid};
use crate::model::{one_sided, LagrangianSpec, ProblemSpec};
use crate::solver::{SchemeParams, ValueField, VelocitySearch};
use crate::weights::{weight_family, weight_gap_integral, WeightSystem};

/// Length of the windows the extraction is concatenated from.
pub const UNIT_WINDOW: f64 = 1.0;
/// Kink threshold factor: a node is a kink when a slope jump exceeds `factor dx max(1, Lip v)`.
pub const KINK_FACTOR: f64 = 10.0;
/// Fraction of excluded steps above which an identity report is low-confidence.
pub const LOW_CONFIDENCE_FRACTION: f64 = 0.2;
/// Default proxy for the admissible rescaling range `tau / (T - tau)`.
pub const DEFAULT_DELTA0: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub start_state: usize,
    /// The curve lives on `[-window, 0]`.
    pub window: f64,
    pub step: f64,
    /// Running-cost shift used in the extraction.
    pub shift: f64,
    /// `s_n = -n step`, `n = 0..=N`.
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    /// `velocities[n]` is the constant velocity on `[s_{n+1}, s_n]`.
    pub velocities: Vec<Point>,
    /// `lagrangian[n][k] = L_k` at the step midpoint with `velocities[n]`.
    pub lagrangian: Vec<Vec<f64>>,
    /// Weights of the start state at `s_n`.
    pub weights: Vec<Vec<f64>>,
    /// One-step defect: functional at the chosen velocity minus the weighted `v` at `s_n`.
    pub step_defects: Vec<f64>,
    /// Steps touching a cell with a kink of some `v_k`.
    pub kink_steps: Vec<bool>,
    pub boundary_steps: usize,
    /// Some minimiser sat on the velocity-box boundary.
    pub untrusted: bool,
}

impl Curve {
    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    pub fn end(&self) -> Point {
        *self.points.last().unwrap()
    }

    /// Window-cost defect over all steps.
    pub fn total_defect(&self) -> f64 {
        self.step_defects.iter().sum()
    }

    /// Window-cost defect over steps away from kinks.
    pub fn smooth_defect(&self) -> f64 {
        self.step_defects
            .iter()
            .zip(&self.kink_steps)
            .filter(|(_, k)| !**k)
            .map(|(d, _)| d)
            .sum()
    }

    pub fn excluded_fraction(&self) -> f64 {
        if self.kink_steps.is_empty() {
            return 0.0;
        }
        self.kink_steps.iter().filter(|k| **k).count() as f64 / self.kink_steps.len() as f64
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities
            .iter()
            .map(|q| (q[0] * q[0] + q[1] * q[1]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Index of the node at `s = -t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let n = (t / self.step).round();
        if (n * self.step - t).abs() > 1e-9 * t.max(1.0) || n as usize > self.steps() {
            return Err(Error::OffLattice(-t));
        }
        Ok(n as usize)
    }

    /// Appends `next`, which must start where `self` ends.
    pub fn concat(mut self, next: Curve) -> Curve {
        let offset = self.steps();
        self.window += next.window;
        debug_assert_eq!(next.times[0], self.times[offset]);
        self.times.extend(next.times.into_iter().skip(1));
        self.points.extend(next.points.into_iter().skip(1));
        self.weights.extend(next.weights.into_iter().skip(1));
        self.velocities.extend(next.velocities);
        self.lagrangian.extend(next.lagrangian);
        self.step_defects.extend(next.step_defects);
        self.kink_steps.extend(next.kink_steps);
        self.boundary_steps += next.boundary_steps;
        self.untrusted |= next.untrusted;
        self
    }
}

/// Largest one-sided difference quotient over all states and axes.
pub fn lipschitz_estimate(grid: &TorusGrid, v: &[Field]) -> f64 {
    let mut lip = 0.0f64;
    for f in v {
        for node in 0..grid.len() {
            for a in 0..grid.dim() {
                let (b, fw) = one_sided(grid, f, node, a);
                lip = lip.max(b.abs()).max(fw.abs());
            }
        }
    }
    lip
}

/// `mask[k][node]`: the slope of `v_k` jumps by more than the kink threshold at `node`.
pub fn kink_mask(grid: &TorusGrid, v: &[Field]) -> Vec<Vec<bool>> {
    let thr = KINK_FACTOR * grid.spacing() * lipschitz_estimate(grid, v).max(1.0);
    v.iter()
        .map(|f| {
            (0..grid.len())
                .map(|node| {
                    (0..grid.dim()).any(|a| {
                        let (b, fw) = one_sided(grid, f, node, a);
                        (fw - b).abs() > thr
                    })
                })
                .collect()
        })
        .collect()
}

/// Centered-difference gradient field of `f`, one field per axis.
fn centered_gradient(grid: &TorusGrid, f: &[f64]) -> Vec<Field> {
    (0..grid.dim())
        .map(|a| {
            (0..grid.len())
                .map(|node| {
                    let (b, fw) = one_sided(grid, f, node, a);
                    0.5 * (b + fw)
                })
                .collect()
        })
        .collect()
}

/// Nodes of the grid cell containing `x`.
fn cell_nodes(grid: &TorusGrid, x: Point) -> Vec<usize> {
    grid.stencil(x).nodes().to_vec()
}

/// Shared state for extracting many curves from one ergodic solution.
#[derive(Debug, Clone)]
pub struct CurveExtractor {
    pub grid: TorusGrid,
    pub step: f64,
    pub shift: f64,
    pub v: Vec<Field>,
    pub lagrangians: Vec<LagrangianSpec>,
    pub family: Vec<WeightSystem>,
    pub search: VelocitySearch,
    pub kinks: Vec<Vec<bool>>,
}

impl CurveExtractor {
    pub fn new(es: &ErgodicSolution, spec: &ProblemSpec, params: &SchemeParams) -> Result<Self> {
        if es.v.len() != spec.m() {
            return Err(Error::Problem(
                "ergodic solution does not match the problem".into(),
            ));
        }
        Ok(Self {
            grid: spec.grid,
            step: params.time_step,
            shift: es.c,
            v: es.v.clone(),
            lagrangians: spec.lagrangians()?,
            family: weight_family(&spec.coupling)?,
            search: params.search(spec.dim()),
            kinks: kink_mask(&spec.grid, &es.v),
        })
    }

    pub fn m(&self) -> usize {
        self.v.len()
    }

    fn near_kink(&self, x: Point) -> bool {
        cell_nodes(&self.grid, x)
            .into_iter()
            .any(|node| self.kinks.iter().any(|mask| mask[node]))
    }

    pub fn is_kink_node(&self, node: usize) -> bool {
        self.kinks.iter().any(|mask| mask[node])
    }

    /// Functional of the step `[s - dt, s]` from `y` with velocity `q`.
    fn functional(&self, half: &[f64], full: &[f64], y: Point, q: Point) -> f64 {
        let h = self.step;
        let mid = self
            .grid
            .stencil([y[0] - 0.5 * h * q[0], y[1] - 0.5 * h * q[1]]);
        let end = self.grid.stencil([y[0] - h * q[0], y[1] - h * q[1]]);
        let mut run = 0.0;
        let mut term = 0.0;
        for (k, l) in self.lagrangians.iter().enumerate() {
            run += half[k] * (l.kinetic(q) - mid.apply(l.potential()));
            term += full[k] * end.apply(&self.v[k]);
        }
        h * (run + self.shift) + term
    }

    /// Extracts `steps` steps from `x`, the first one ending at `s = -first dt`.
    pub fn extract_window(&self, x: Point, i: usize, first: usize, steps: usize) -> Curve {
        let w = &self.family[i];
        let h = self.step;
        let x = self.grid.wrap(x);
        let mut points = vec![x];
        let mut velocities = Vec::with_capacity(steps);
        let mut lagrangian = Vec::with_capacity(steps);
        let mut weights = vec![w.eval(-(first as f64) * h)];
        let mut step_defects = Vec::with_capacity(steps);
        let mut kink_steps = Vec::with_capacity(steps);
        let mut boundary_steps = 0;
        let mut y = x;
        for n in 0..steps {
            let s = -((first + n) as f64) * h;
            let now = weights.last().unwrap().clone();
            let half = w.eval(s - 0.5 * h);
            let full = w.eval(s - h);
            let r = self
                .search
                .minimize(|q| self.functional(&half, &full, y, q));
            let base: f64 = (0..self.m())
                .map(|k| now[k] * self.grid.interpolate(&self.v[k], y))
                .sum();
            let q = r.q;
            let mid = [y[0] - 0.5 * h * q[0], y[1] - 0.5 * h * q[1]];
            lagrangian.push(
                self.lagrangians
                    .iter()
                    .map(|l| l.eval(&self.grid, mid, q))
                    .collect::<Vec<_>>(),
            );
            let next = self.grid.wrap([y[0] - h * q[0], y[1] - h * q[1]]);
            kink_steps.push(self.near_kink(y) || self.near_kink(next));
            step_defects.push(r.value - base);
            boundary_steps += r.on_boundary as usize;
            velocities.push(q);
            points.push(next);
            weights.push(full);
            y = next;
        }
        Curve {
            start_state: i,
            window: steps as f64 * h,
            step: h,
            shift: self.shift,
            times: (0..=steps).map(|n| -((first + n) as f64) * h).collect(),
            points,
            velocities,
            lagrangian,
            weights,
            step_defects,
            kink_steps,
            boundary_steps,
            untrusted: boundary_steps > 0,
        }
    }

    /// Curve on `[-t, 0]`, concatenated from unit windows.
    pub fn extract(&self, x: Point, i: usize, t: f64) -> Result<Curve> {
        if i >= self.m() {
            return Err(Error::Problem(format!("state {i} out of range")));
        }
        let total = (t / self.step).round();
        if !(t >= 0.0) || (total * self.step - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::OffLattice(-t));
        }
        let total = total as usize;
        let unit = ((UNIT_WINDOW / self.step).round() as usize).max(1);
        let mut curve = self.extract_window(x, i, 0, unit.min(total));
        let mut done = curve.steps();
        while done < total {
            let n = unit.min(total - done);
            let next = self.extract_window(curve.end(), i, done, n);
            curve = curve.concat(next);
            done += n;
        }
        Ok(curve)
    }
}

pub fn extract_curve(
    es: &ErgodicSolution,
    x: Point,
    i: usize,
    t: f64,
    spec: &ProblemSpec,
    params: &SchemeParams,
) -> Result<Curve> {
    CurveExtractor::new(es, spec, params)?.extract(x, i, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Smallest `L_k + H_k(p) - p.q` over all steps and states, kinks included.
    pub min_fenchel_gap: f64,
    /// Largest `|L_k + H_k(p) - p.q|` away from kinks, per state.
    pub max_fenchel_defect: Vec<f64>,
    /// Largest `|H_k(p) + sum_j c_kj v_j - c|` away from kinks, per state.
    pub max_equation_defect: Vec<f64>,
    pub excluded: usize,
    pub total: usize,
    pub low_confidence: bool,
}

/// Along-curve versions of the equality cases: `p` is the centered-difference gradient of `v_k`
/// at `gamma(s_n)` and `q` the velocity of the step ending there.
pub fn along_curve_identities(
    curve: &Curve,
    es: &ErgodicSolution,
    spec: &ProblemSpec,
) -> Result<IdentityReport> {
    if curve.untrusted {
        return Err(Error::UntrustedCurve(format!(
            "{} of {} steps hit the velocity bound",
            curve.boundary_steps,
            curve.steps()
        )));
    }
    let grid = &spec.grid;
    let m = spec.m();
    let lag = spec.lagrangians()?;
    let grads: Vec<Vec<Field>> = es.v.iter().map(|f| centered_gradient(grid, f)).collect();
    let mut min_gap = f64::INFINITY;
    let mut fenchel = vec![0.0f64; m];
    let mut equation = vec![0.0f64; m];
    let mut excluded = 0;
    for n in 0..curve.steps() {
        let y = curve.points[n];
        let q = curve.velocities[n];
        let st = grid.stencil(y);
        let vals: Vec<f64> = es.v.iter().map(|f| st.apply(f)).collect();
        let kink = curve.kink_steps[n];
        excluded += kink as usize;
        for k in 0..m {
            let mut p = [0.0; 2];
            for (a, g) in grads[k].iter().enumerate() {
                p[a] = st.apply(g);
            }
            let hk = spec.hamiltonians[k].eval(grid, y, p);
            let gap = lag[k].eval(grid, y, q) + hk - (p[0] * q[0] + p[1] * q[1]);
            min_gap = min_gap.min(gap);
            if !kink {
                fenchel[k] = fenchel[k].max(gap.abs());
                let coupled: f64 = (0..m).map(|j| spec.coupling.get(k, j) * vals[j]).sum();
                equation[k] = equation[k].max((hk + coupled - es.c).abs());
            }
        }
    }
    let total = curve.steps();
    Ok(IdentityReport {
        min_fenchel_gap: if total == 0 { 0.0 } else { min_gap },
        max_fenchel_defect: fenchel,
        max_equation_defect: equation,
        excluded,
        total,
        low_confidence: total > 0 && excluded as f64 > LOW_CONFIDENCE_FRACTION * total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTerm {
    pub other: usize,
    /// `|int_{-T}^0 (phi_i - phi_j)(t) (v_j - v_i)(gamma(t)) dt|`.
    pub realized: f64,
    /// `max |v_j - v_i|` times the weight-gap integral.
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub tau: f64,
    pub horizon: f64,
    pub state: usize,
    pub x: Point,
    /// `u_i(x,T) + cT - sum_k phi_k(-T) (u_k(gamma(-T), tau) + c tau)`.
    pub left: f64,
    /// `v_i(x) - sum_k phi_k(-T) v_k(gamma(-T))`.
    pub stationary_term: f64,
    /// `tau / (T - tau)`.
    pub epsilon: f64,
    /// Slope of the linear modulus actually used.
    pub modulus: f64,
    /// Modulus before any widening.
    pub calibrated_modulus: f64,
    pub widened: bool,
    pub modulus_term: f64,
    pub right: f64,
    pub slack: f64,
    /// `right + slack - left`.
    pub margin: f64,
    pub passed: bool,
    pub coupling_terms: Vec<CouplingTerm>,
    pub notes: Vec<String>,
}

/// Largest `|v_j - v_k|` over the grid and all pairs.
pub fn max_state_difference(v: &[Field]) -> f64 {
    let mut best = 0.0f64;
    for a in v {
        for b in v {
            for (x, y) in a.iter().zip(b) {
                best = best.max((x - y).abs());
            }
        }
    }
    best
}

/// Evaluates both sides of the scaling inequality along `curve` with a linear modulus
/// `A r`, `A = C_v + 2 max|v_j - v_k|` and `C_v` the kinetic curvature times `M^2 / 2` for the
/// curve's top speed `M`. A failure widens `A` once (doubling) before being reported.
#[allow(clippy::too_many_arguments)]
pub fn stability_audit(
    curve: &Curve,
    vf: &ValueField,
    es: &ErgodicSolution,
    spec: &ProblemSpec,
    tau: f64,
    horizon: f64,
    delta0: f64,
    slack: f64,
) -> Result<StabilityReport> {
    if !(tau > 0.0 && tau < horizon) {
        return Err(Error::Problem(format!(
            "need 0 < tau < T, got tau={tau}, T={horizon}"
        )));
    }
    let epsilon = tau / (horizon - tau);
    if epsilon > delta0 + 1e-12 {
        return Err(Error::Problem(format!(
            "tau/(T-tau) = {epsilon} exceeds the admissible range {delta0}"
        )));
    }
    let grid = &spec.grid;
    let i = curve.start_state;
    let n_end = curve.index_of(horizon)?;
    let x = curve.points[0];
    let y = curve.points[n_end];
    let phi = &curve.weights[n_end];
    let c = es.c;
    let big = vf.time_index(horizon)?;
    let small = vf.time_index(tau)?;
    let m = spec.m();
    let left = vf.value(big, i, x) + c * horizon
        - (0..m)
            .map(|k| phi[k] * (vf.value(small, k, y) + c * tau))
            .sum::<f64>();
    let stationary_term = grid.interpolate(&es.v[i], x)
        - (0..m)
            .map(|k| phi[k] * grid.interpolate(&es.v[k], y))
            .sum::<f64>();
    let speed = curve.max_speed();
    let lag = spec.lagrangians()?;
    let curvature = lag
        .iter()
        .map(|l| l.curvature_bound(speed))
        .fold(0.0, f64::max);
    let spread = max_state_difference(&es.v);
    let calibrated = 0.5 * curvature * speed * speed + 2.0 * spread;
    let factor = 1.0 + tau * horizon / (horizon - tau);
    let mut notes = Vec::new();
    let mut modulus = calibrated;
    let mut widened = false;
    let mut right = stationary_term + factor * modulus * epsilon;
    if left > right + slack {
        modulus *= 2.0;
        widened = true;
        right = stationary_term + factor * modulus * epsilon;
        notes.push(format!(
            "modulus widened from {calibrated:.6} to {modulus:.6} after a first failure"
        ));
    }
    let margin = right + slack - left;

    let family = weight_family(&spec.coupling)?;
    let w = &family[i];
    let mut coupling_terms = Vec::new();
    for j in (0..m).filter(|&j| j != i) {
        let gap = weight_gap_integral(w, i, j);
        let diff_max = es.v[i]
            .iter()
            .zip(&es.v[j])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let integrand = |n: usize| {
            let st = grid.stencil(curve.points[n]);
            (curve.weights[n][i] - curve.weights[n][j]) * (st.apply(&es.v[j]) - st.apply(&es.v[i]))
        };
        let mut sum = 0.5 * (integrand(0) + integrand(n_end));
        for n in 1..n_end {
            sum += integrand(n);
        }
        let realized = (sum * curve.step).abs();
        let bound = diff_max * gap.value;
        coupling_terms.push(CouplingTerm {
            other: j,
            realized,
            bound,
            margin: bound - realized,
        });
    }
    Ok(StabilityReport {
        tau,
        horizon,
        state: i,
        x,
        left,
        stationary_term,
        epsilon,
        modulus,
        calibrated_modulus: calibrated,
        widened,
        modulus_term: factor * modulus * epsilon,
        right,
        slack,
        margin,
        passed: margin >= 0.0,
        coupling_terms,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub c1: f64,
    pub slack: f64,
    /// Largest `||u(t) - g|| - C1 t` over the lattice.
    pub worst_excess_from_initial: f64,
    /// Largest `||u(t+h) - u(t)|| - C1 h` over all recorded pairs with `h` on a doubling ladder.
    pub worst_excess_increment: f64,
    /// Largest `||u(t_{n+1}) - u(t_n)|| / (t_{n+1} - t_n)`.
    pub max_time_quotient: f64,
    /// Largest one-sided spatial difference quotient over all snapshots.
    pub max_space_quotient: f64,
    pub passed: bool,
}

fn snapshot_difference(a: &[Field], b: &[Field]) -> f64 {
    crate::solver::field_difference(a, b)
}

/// Time- and space-Lipschitz audit of a computed value field against `C1`.
pub fn lipschitz_audit(vf: &ValueField, spec: &ProblemSpec) -> LipschitzReport {
    let c1 = spec.constants().c1;
    let slack = 2.0 * (spec.grid.spacing() + spec.time_step);
    let n = vf.len();
    let mut from_initial = f64::NEG_INFINITY;
    let mut increment = f64::NEG_INFINITY;
    let mut quotient = 0.0f64;
    for a in 0..n {
        let t = vf.times[a];
        from_initial = from_initial.max(snapshot_difference(vf.at(a), vf.at(0)) - c1 * t);
        let mut stride = 1;
        while a + stride < n {
            let b = a + stride;
            let h = vf.times[b] - t;
            let d = snapshot_difference(vf.at(b), vf.at(a));
            increment = increment.max(d - c1 * h);
            if stride == 1 && h > 0.0 {
                quotient = quotient.max(d / h);
            }
            stride *= 2;
        }
    }
    if n < 2 {
        increment = 0.0;
    }
    let space = vf
        .values
        .iter()
        .map(|u| lipschitz_estimate(&vf.grid, u))
        .fold(0.0, f64::max);
    LipschitzReport {
        c1,
        slack,
        worst_excess_from_initial: from_initial,
        worst_excess_increment: increment,
        max_time_quotient: quotient,
        max_space_quotient: space,
        passed: from_initial <= slack && increment <= slack,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionReport {
    pub curves: usize,
    /// Smallest `cost - v_i(start)` over the sampled curves.
    pub min_margin: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Along any admissible curve the shifted cost plus the weighted end value dominates `v_i(x)`.
/// Curves are straight segments with sampled constant velocities over `[-t, 0]`.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_check(
    es: &ErgodicSolution,
    spec: &ProblemSpec,
    nodes: &[usize],
    velocities: &[Point],
    t: f64,
    quadrature: usize,
    slack: f64,
) -> Result<SubsolutionReport> {
    let grid = &spec.grid;
    let lag = spec.lagrangians()?;
    let family = weight_family(&spec.coupling)?;
    let ds = t / quadrature as f64;
    let mut min_margin = f64::INFINITY;
    let mut curves = 0;
    for &node in nodes {
        let x = grid.coords(node);
        for (i, w) in family.iter().enumerate() {
            for q in velocities {
                let mut cost = 0.0;
                for n in 0..quadrature {
                    let s = -(n as f64 + 0.5) * ds;
                    let phi = w.eval(s);
                    let y = [x[0] + s * q[0], x[1] + s * q[1]];
                    for (k, l) in lag.iter().enumerate() {
                        cost += phi[k] * (l.eval(grid, y, *q) + es.c) * ds;
                    }
                }
                let phi = w.eval(-t);
                let end = [x[0] - t * q[0], x[1] - t * q[1]];
                cost += (0..phi.len())
                    .map(|k| phi[k] * grid.interpolate(&es.v[k], end))
                    .sum::<f64>();
                min_margin = min_margin.min(cost - es.v[i][node]);
                curves += 1;
            }
        }
    }
    Ok(SubsolutionReport {
        curves,
        min_margin,
        slack,
        passed: min_margin >= -slack,
    })
}

/// Smallest window defect any curve with state-independent velocity can reach on `[-t, 0]`:
/// dynamic programming for the averaged Lagrangian `sum_k phi_k(s) L_k` with terminal cost
/// `sum_k phi_k(-t) v_k`, minus `v_i`. Returned per node.
pub fn deterministic_defect_floor(
    es: &ErgodicSolution,
    spec: &ProblemSpec,
    params: &SchemeParams,
    i: usize,
    t: f64,
) -> Result<Field> {
    let ex = CurveExtractor::new(es, spec, params)?;
    let grid = ex.grid;
    let h = ex.step;
    let steps = (t / h).round() as usize;
    let w = &ex.family[i];
    let phi = w.eval(-(steps as f64) * h);
    let mut value: Field = (0..grid.len())
        .map(|n| (0..ex.m()).map(|k| phi[k] * ex.v[k][n]).sum())
        .collect();
    for n in (0..steps).rev() {
        let half = w.eval(-(n as f64 + 0.5) * h);
        let next: Field = (0..grid.len())
            .into_par_iter()
            .map(|node| {
                let x = grid.coords(node);
                ex.search
                    .minimize(|q| {
                        let mid = grid.stencil([x[0] - 0.5 * h * q[0], x[1] - 0.5 * h * q[1]]);
                        let end = grid.stencil([x[0] - h * q[0], x[1] - h * q[1]]);
                        let run: f64 = ex
                            .lagrangians
                            .iter()
                            .enumerate()
                            .map(|(k, l)| half[k] * (l.kinetic(q) - mid.apply(l.potential())))
                            .sum();
                        h * (run + ex.shift) + end.apply(&value)
                    })
                    .value
            })
            .collect();
        value = next;
    }
    Ok(value.iter().zip(&es.v[i]).map(|(w, v)| w - v).collect())
}
