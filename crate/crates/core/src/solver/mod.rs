//! Value functions of the coupled system: a semi-Lagrangian scheme built on the dynamic
//! programming principle with exact switching weights, and a Lax–Friedrichs oracle.

mod audit;
mod dpp;
mod lf;
mod search;

pub use audit::{dpp_window_check, two_segment_bound, TwoSegmentReport, WindowReport};
pub use dpp::{DppOperator, StepOutput};
pub use lf::{
    godunov_hamiltonian, lf_cfl_number, lf_numerical_hamiltonian, lf_substeps, solve_lf,
    solve_lf_substepped,
};
pub use search::{SearchResult, VelocitySearch};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sup_diff, Field, Point, TorusGrid};
use crate::model::{ProblemConfig, ProblemSpec};

/// Fraction of boundary minimisers above which the velocity box is reported as too small.
pub const BOUNDARY_WARN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub time_step: f64,
    pub velocity_bound: f64,
    /// Odd, at least 3.
    pub velocity_samples: usize,
    /// Golden-section refinement rounds after the sampled search.
    pub refine_rounds: usize,
    /// Lax–Friedrichs dissipation per state.
    pub lf_dissipation: Vec<f64>,
    /// Keep every `record_every`-th step in the output.
    pub record_every: usize,
}

impl SchemeParams {
    /// `2 ceil(2 Q dt / dx) + 1` samples (at least 9), so neighbouring samples move
    /// the foot point by at most half a cell.
    pub fn default_samples(time_step: f64, velocity_bound: f64, spacing: f64) -> usize {
        let k = (2.0 * velocity_bound * time_step / spacing - 1e-9).ceil() as usize;
        (2 * k + 1).max(9)
    }

    pub fn for_spec(spec: &ProblemSpec) -> Self {
        let consts = spec.constants();
        Self {
            time_step: spec.time_step,
            velocity_bound: spec.velocity_bound,
            velocity_samples: Self::default_samples(
                spec.time_step,
                spec.velocity_bound,
                spec.grid.spacing(),
            ),
            refine_rounds: 3,
            lf_dissipation: consts.lf_dissipation,
            record_every: 1,
        }
    }

    pub fn from_config(cfg: &ProblemConfig) -> Self {
        let mut p = Self::for_spec(&cfg.spec);
        if let Some(n) = cfg.velocity_samples {
            p.velocity_samples = n;
        }
        if let Some(t) = &cfg.lf_dissipation {
            p.lf_dissipation = t.clone();
        }
        p
    }

    /// Same parameters for a spec refined by `factor` in space and time.
    pub fn refined(&self, spec: &ProblemSpec) -> Self {
        Self {
            time_step: spec.time_step,
            velocity_samples: Self::default_samples(
                spec.time_step,
                self.velocity_bound,
                spec.grid.spacing(),
            ),
            ..self.clone()
        }
    }

    pub fn search(&self, dim: usize) -> VelocitySearch {
        VelocitySearch {
            dim,
            bound: self.velocity_bound,
            samples: self.velocity_samples,
            rounds: self.refine_rounds,
        }
    }

    pub fn check(&self, m: usize) -> Result<()> {
        if self.velocity_samples < 3 || self.velocity_samples % 2 == 0 {
            return Err(Error::Problem(format!(
                "velocity samples must be odd and >= 3, got {}",
                self.velocity_samples
            )));
        }
        if !(self.time_step > 0.0) || !(self.velocity_bound > 0.0) || self.record_every == 0 {
            return Err(Error::Problem(
                "time step, velocity bound and record stride must be positive".into(),
            ));
        }
        if self.lf_dissipation.len() != m || self.lf_dissipation.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Problem(format!(
                "need {m} positive dissipation coefficients, got {:?}",
                self.lf_dissipation
            )));
        }
        Ok(())
    }
}

/// `u_k(., t)` on the grid at a sequence of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: TorusGrid,
    pub times: Vec<f64>,
    /// `values[n][k]`: state `k` at `times[n]`.
    pub values: Vec<Vec<Field>>,
    pub warnings: Vec<String>,
    /// Largest per-step fraction of (node, state) minimisers on the velocity-box boundary.
    pub max_boundary_fraction: f64,
}

impl ValueField {
    pub fn m(&self) -> usize {
        self.values[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn at(&self, n: usize) -> &[Field] {
        &self.values[n]
    }

    pub fn last(&self) -> &[Field] {
        self.values.last().unwrap()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index of the snapshot at time `t`.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(Error::OffLattice(t))
    }

    pub fn value(&self, n: usize, k: usize, x: Point) -> f64 {
        self.grid.interpolate(&self.values[n][k], x)
    }
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Problem(format!(
            "horizon {horizon} is not a multiple of the time step {dt}"
        )));
    }
    Ok(n as usize)
}

/// One step of the scheme from `u_prev` (all states).
pub fn step_dpp(u_prev: &[Field], spec: &ProblemSpec, params: &SchemeParams) -> Result<Vec<Field>> {
    let op = DppOperator::new(spec, params, params.time_step, 0.0)?;
    Ok(op.apply(u_prev).fields)
}

/// Iterates the scheme from `initial` for `steps` steps with running-cost shift `shift`.
pub fn evolve(
    op: &DppOperator,
    initial: &[Field],
    steps: usize,
    record_every: usize,
) -> ValueField {
    let m = initial.len();
    let nodes = op.grid.len() * m;
    let mut times = vec![0.0];
    let mut values = vec![initial.to_vec()];
    let mut u = initial.to_vec();
    let mut worst = 0.0f64;
    let mut worst_step = 0;
    for n in 1..=steps {
        let out = op.apply(&u);
        let frac = out.boundary_hits as f64 / nodes as f64;
        if frac > worst {
            worst = frac;
            worst_step = n;
        }
        u = out.fields;
        if n % record_every == 0 || n == steps {
            times.push(n as f64 * op.window);
            values.push(u.clone());
        }
    }
    let mut warnings = Vec::new();
    if worst > BOUNDARY_WARN_FRACTION {
        warnings.push(format!(
            "velocity bound {} active at {:.2}% of minimisers (step {worst_step}); the infimum may be truncated",
            op.search.bound,
            100.0 * worst
        ));
    }
    ValueField {
        grid: op.grid,
        times,
        values,
        warnings,
        max_boundary_fraction: worst,
    }
}

/// Semi-Lagrangian solution on `{0, dt, ..., T}`.
pub fn solve(spec: &ProblemSpec, params: &SchemeParams) -> Result<ValueField> {
    params.check(spec.m())?;
    let steps = if spec.horizon == 0.0 {
        0
    } else {
        step_count(spec.horizon, params.time_step)?
    };
    let op = DppOperator::new(spec, params, params.time_step, 0.0)?;
    Ok(evolve(&op, &spec.initial, steps, params.record_every))
}

/// Sup-norm difference of two fields over all states at matching times.
pub fn field_difference(a: &[Field], b: &[Field]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| sup_diff(x, y))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckRow {
    pub time: f64,
    pub sup_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub rows: Vec<CrossCheckRow>,
    pub lf_substeps: usize,
    pub max_difference: f64,
}

/// Runs both schemes and tabulates their sup-difference at the semi-Lagrangian output times.
/// The oracle substeps the time step until its CFL condition holds.
pub fn crosscheck(spec: &ProblemSpec, params: &SchemeParams) -> Result<CrossCheck> {
    let sl = solve(spec, params)?;
    let sub = lf_substeps(spec, params);
    let lf = solve_lf_substepped(spec, params, sub)?;
    let rows: Vec<CrossCheckRow> = sl
        .times
        .iter()
        .zip(&sl.values)
        .map(|(&t, u)| {
            let n = lf.time_index(t).expect("oracle records the same lattice");
            CrossCheckRow {
                time: t,
                sup_difference: field_difference(u, lf.at(n)),
            }
        })
        .collect();
    let max_difference = rows.iter().map(|r| r.sup_difference).fold(0.0, f64::max);
    Ok(CrossCheck {
        rows,
        lf_substeps: sub,
        max_difference,
    })
}
