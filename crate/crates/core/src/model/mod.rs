//! Problem data: Hamiltonians, couplings, initial data, discretization, and validation.

mod config;
mod constants;
mod coupling;
mod hamiltonian;

pub use config::{parse_field_preset, problem_from_toml, ProblemConfig};
pub use constants::{max_one_sided_hamiltonian, one_sided, ProblemConstants};
pub use coupling::CouplingMatrix;
pub use hamiltonian::{
    legendre_transform, legendre_transform_lagrangian, Axis, HamiltonianSpec, LagrangianSpec, Table,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, TorusGrid};

/// One named pass/fail line of a validation or audit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: Option<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.accepted() {
            Ok(self)
        } else {
            let msg: Vec<String> = self
                .failures()
                .map(|c| match &c.detail {
                    Some(d) => format!("{}: {d}", c.name),
                    None => c.name.clone(),
                })
                .collect();
            Err(Error::Problem(msg.join("; ")))
        }
    }
}

/// A weakly coupled system on the torus together with its discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub grid: TorusGrid,
    pub hamiltonians: Vec<HamiltonianSpec>,
    pub coupling: CouplingMatrix,
    pub initial: Vec<Field>,
    pub horizon: f64,
    pub time_step: f64,
    pub velocity_bound: f64,
}

impl ProblemSpec {
    /// Builds a spec; a missing velocity bound is filled in from the constants ledger.
    pub fn new(
        name: impl Into<String>,
        grid: TorusGrid,
        hamiltonians: Vec<HamiltonianSpec>,
        coupling: CouplingMatrix,
        initial: Vec<Field>,
        horizon: f64,
        time_step: f64,
        velocity_bound: Option<f64>,
    ) -> Self {
        let mut spec = Self {
            name: name.into(),
            grid,
            hamiltonians,
            coupling,
            initial,
            horizon,
            time_step,
            velocity_bound: 0.0,
        };
        spec.velocity_bound = match velocity_bound {
            Some(q) => q,
            None => spec.constants().default_velocity_bound,
        };
        spec
    }

    pub fn m(&self) -> usize {
        self.hamiltonians.len()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn constants(&self) -> ProblemConstants {
        ProblemConstants::compute(
            &self.grid,
            &self.hamiltonians,
            &self.coupling,
            &self.initial,
        )
    }

    /// Lagrangians sampled on the velocity box (closed form for the quadratic kind).
    pub fn lagrangians(&self) -> Result<Vec<LagrangianSpec>> {
        self.hamiltonians
            .iter()
            .map(|h| {
                let points = match h {
                    HamiltonianSpec::Tabulated { kinetic, .. } => kinetic.axis.points,
                    HamiltonianSpec::Quadratic { .. } => 3,
                };
                legendre_transform(h, Axis::new(self.velocity_bound, points))
            })
            .collect()
    }

    pub fn with_initial(&self, initial: Vec<Field>) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    /// Adds `shift` to every potential.
    pub fn with_potential_shift(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for h in &mut out.hamiltonians {
            for v in h.potential_mut().iter_mut() {
                *v += shift;
            }
        }
        out
    }

    /// Relabels states: new state `a` is old state `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            hamiltonians: perm.iter().map(|&k| self.hamiltonians[k].clone()).collect(),
            initial: perm.iter().map(|&k| self.initial[k].clone()).collect(),
            coupling: self.coupling.permuted(perm),
            ..self.clone()
        }
    }

    /// Same continuous problem on a grid refined by `factor` in space and time.
    /// Fields are resampled by interpolation.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let grid = TorusGrid::new(self.dim(), self.grid.points_per_axis() * factor)?;
        let resample = |f: &Field| grid.sample(|x| self.grid.interpolate(f, x));
        let mut hamiltonians = self.hamiltonians.clone();
        for h in &mut hamiltonians {
            let v = resample(h.potential());
            *h.potential_mut() = v;
        }
        Ok(Self {
            grid,
            hamiltonians,
            initial: self.initial.iter().map(resample).collect(),
            time_step: self.time_step / factor as f64,
            ..self.clone()
        })
    }
}

fn first_non_finite(f: &[f64]) -> Option<usize> {
    f.iter().position(|v| !v.is_finite())
}

/// Checks every verifiable assumption; never fails, the report carries the failures.
pub fn validate(spec: &ProblemSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let m = spec.m();
    let len = spec.grid.len();

    let shape_err = if spec.coupling.size() != m {
        Some(format!(
            "coupling is {0}x{0} but {m} Hamiltonians",
            spec.coupling.size()
        ))
    } else if spec.initial.len() != m {
        Some(format!(
            "{} initial fields for {m} states",
            spec.initial.len()
        ))
    } else if m < 2 {
        Some(format!("need at least 2 states, got {m}"))
    } else {
        None
    };
    checks.push(Check::new(
        "shape.state_count",
        shape_err.is_none(),
        shape_err,
    ));

    let mut field_err = None;
    for (k, g) in spec.initial.iter().enumerate() {
        if g.len() != len {
            field_err = Some(format!(
                "initial[{k}] has {} samples, grid has {len}",
                g.len()
            ));
            break;
        }
        if let Some(n) = first_non_finite(g) {
            field_err = Some(format!("initial[{k}] not finite at node {n}"));
            break;
        }
    }
    checks.push(Check::new(
        "shape.initial_fields",
        field_err.is_none(),
        field_err,
    ));

    for (k, h) in spec.hamiltonians.iter().enumerate() {
        let v = h.potential();
        let err = if v.len() != len {
            Some(format!("potential has {} samples, grid has {len}", v.len()))
        } else {
            first_non_finite(v).map(|n| format!("potential not finite at node {n}"))
        };
        checks.push(Check::new(
            format!("hamiltonian[{k}].potential"),
            err.is_none(),
            err,
        ));

        match h {
            HamiltonianSpec::Quadratic { kappa, .. } => {
                let ok = kappa.is_finite() && *kappa > 0.0;
                checks.push(Check::new(
                    format!("hamiltonian[{k}].kappa_positive"),
                    ok,
                    (!ok).then(|| format!("kappa = {kappa}")),
                ));
            }
            HamiltonianSpec::Tabulated {
                kinetic,
                coercivity_margin,
                ..
            } => {
                let dim_ok = kinetic.dim == spec.dim()
                    && kinetic.axis.points >= 3
                    && kinetic.values.len() == kinetic.axis.points.pow(kinetic.dim as u32);
                checks.push(Check::new(
                    format!("hamiltonian[{k}].table_shape"),
                    dim_ok,
                    (!dim_ok)
                        .then(|| format!("table dim {} vs grid dim {}", kinetic.dim, spec.dim())),
                ));
                if !dim_ok {
                    continue;
                }
                let scale = kinetic.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                let conv = kinetic.convexity_violation(1e-12 * scale);
                checks.push(Check::new(
                    format!("hamiltonian[{k}].convex"),
                    conv.is_none(),
                    conv.map(|(axis, idx, d2)| {
                        format!("axis {axis}, p-index {idx}, second difference {d2:e}")
                    }),
                ));
                let h0 = kinetic.eval([0.0, 0.0]);
                let pm = kinetic.axis.max;
                let mut worst: Option<String> = None;
                for a in 0..kinetic.dim {
                    for s in [-1.0, 1.0] {
                        let mut p = [0.0; 2];
                        p[a] = s * pm;
                        let rise = kinetic.eval(p) - h0;
                        if !(rise >= *coercivity_margin) && worst.is_none() {
                            worst = Some(format!("axis {a}, p = {}: rise {rise}", p[a]));
                        }
                    }
                }
                checks.push(Check::new(
                    format!("hamiltonian[{k}].coercive"),
                    worst.is_none(),
                    worst,
                ));
            }
        }
    }

    // growth sandwich of the Lagrangian on the velocity box, with C from the Hamiltonians
    let c = spec
        .hamiltonians
        .iter()
        .map(|h| h.growth_constant())
        .fold(0.0, f64::max);
    let all_ok = checks.iter().all(|c| c.passed);
    if all_ok {
        match spec.lagrangians() {
            Ok(ls) => {
                for (k, l) in ls.iter().enumerate() {
                    let mut err = None;
                    let n = 41;
                    'outer: for node in 0..len {
                        let v = l.potential()[node];
                        for a in 0..n {
                            let q = spec.velocity_bound * (2.0 * a as f64 / (n - 1) as f64 - 1.0);
                            let q = [q, if spec.dim() == 2 { q } else { 0.0 }];
                            let q2 = q[0] * q[0] + q[1] * q[1];
                            let val = l.kinetic(q) - v;
                            let lo = q2 / (2.0 * c) - c;
                            let hi = 0.5 * c * (q2 + 1.0);
                            if val < lo - 1e-9 || val > hi + 1e-9 {
                                err = Some(format!("node {node}, q = {:?}: L = {val}", q));
                                break 'outer;
                            }
                        }
                    }
                    checks.push(Check::new(
                        format!("lagrangian[{k}].growth"),
                        err.is_none(),
                        err,
                    ));
                }
            }
            Err(e) => checks.push(Check::new(
                "lagrangian.transform",
                false,
                Some(e.to_string()),
            )),
        }
    }

    checks.extend(spec.coupling.checks());

    let t_ok = spec.time_step > 0.0 && spec.time_step.is_finite();
    checks.push(Check::new(
        "time.step_positive",
        t_ok,
        (!t_ok).then(|| format!("dt = {}", spec.time_step)),
    ));
    let h_ok = spec.horizon >= spec.time_step && spec.horizon.is_finite();
    checks.push(Check::new(
        "time.step_within_horizon",
        h_ok,
        (!h_ok).then(|| format!("dt = {} > T = {}", spec.time_step, spec.horizon)),
    ));
    let reach = spec.velocity_bound * spec.time_step;
    let q_ok = spec.velocity_bound > 0.0 && reach >= spec.grid.spacing() * (1.0 - 1e-12);
    checks.push(Check::new(
        "time.velocity_reach",
        q_ok,
        (!q_ok).then(|| format!("Q_max*dt = {reach} < spacing {}", spec.grid.spacing())),
    ));

    ValidationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> ProblemSpec {
        let grid = TorusGrid::new(1, 16).unwrap();
        let v = grid.sample(|x| (2.0 * std::f64::consts::PI * x[0]).cos());
        ProblemSpec::new(
            "t",
            grid,
            vec![
                HamiltonianSpec::quadratic(1.0, v.clone()),
                HamiltonianSpec::quadratic(1.0, v),
            ],
            CouplingMatrix::two_state(1.0, 1.0).unwrap(),
            vec![vec![0.0; 16], vec![0.0; 16]],
            1.0,
            1.0 / 32.0,
            None,
        )
    }

    #[test]
    fn canonical_setting_passes() {
        let r = validate(&two_state());
        assert!(r.accepted(), "{:?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn single_mutations_are_rejected() {
        let base = two_state();
        let mut muts: Vec<(&str, ProblemSpec)> = Vec::new();

        let mut s = base.clone();
        s.hamiltonians[1] = HamiltonianSpec::quadratic(0.0, vec![0.0; 16]);
        muts.push(("hamiltonian[1].kappa_positive", s));

        let mut s = base.clone();
        s.coupling = s.coupling.scaled_row(0, 2.0);
        muts.push(("coupling.column_sums", s));

        let mut s = base.clone();
        s.time_step = 2.0;
        muts.push(("time.step_within_horizon", s));

        let mut s = base.clone();
        s.velocity_bound = 0.5;
        muts.push(("time.velocity_reach", s));

        let mut s = base.clone();
        s.initial[0].pop();
        muts.push(("shape.initial_fields", s));

        for (name, spec) in muts {
            let r = validate(&spec);
            assert!(!r.accepted(), "{name}");
            assert!(
                r.failures().any(|c| c.name == name),
                "{name}: {:?}",
                r.checks
            );
        }
    }

    #[test]
    fn permutation_round_trip() {
        let s = two_state();
        assert_eq!(s.permuted(&[1, 0]).permuted(&[1, 0]), s);
    }
}
