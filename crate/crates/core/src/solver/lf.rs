//! Explicit Lax–Friedrichs scheme and monotone numerical Hamiltonians.

use crate::error::{Error, Result};
use crate::grid::{Field, TorusGrid};
use crate::model::{one_sided, HamiltonianSpec, ProblemSpec};
use crate::solver::{SchemeParams, ValueField};

/// `H(x, (D- + D+)/2) - theta sum_a (D+ - D-)/2`.
pub fn lf_numerical_hamiltonian(
    h: &HamiltonianSpec,
    grid: &TorusGrid,
    u: &[f64],
    node: usize,
    theta: f64,
) -> f64 {
    let mut p = [0.0; 2];
    let mut diss = 0.0;
    for a in 0..grid.dim() {
        let (b, f) = one_sided(grid, u, node, a);
        p[a] = 0.5 * (b + f);
        diss += 0.5 * theta * (f - b);
    }
    h.eval_node(node, p) - diss
}

/// Godunov-type Hamiltonian for convex `H`: per axis the candidates `max(D-, p*)` and
/// `min(D+, p*)`, with `p*` the minimiser of the kinetic part; the largest value is taken.
pub fn godunov_hamiltonian(h: &HamiltonianSpec, grid: &TorusGrid, u: &[f64], node: usize) -> f64 {
    let d = grid.dim();
    let pstar = h.kinetic_minimizer();
    let mut cand = [[0.0; 2]; 2];
    for a in 0..d {
        let (b, f) = one_sided(grid, u, node, a);
        cand[a] = [b.max(pstar[a]), f.min(pstar[a])];
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 0..(1usize << d) {
        let mut p = [0.0; 2];
        for a in 0..d {
            p[a] = cand[a][(mask >> a) & 1];
        }
        best = best.max(h.eval_node(node, p));
    }
    best
}

pub fn lf_cfl_number(spec: &ProblemSpec, params: &SchemeParams, dt: f64) -> f64 {
    let theta = params.lf_dissipation.iter().cloned().fold(0.0, f64::max);
    dt * (spec.dim() as f64 * theta / spec.grid.spacing() + spec.coupling.max_rate())
}

/// Smallest number of substeps of `params.time_step` that satisfies the CFL condition.
pub fn lf_substeps(spec: &ProblemSpec, params: &SchemeParams) -> usize {
    let cfl = lf_cfl_number(spec, params, params.time_step);
    ((cfl / 0.5) * (1.0 + 1e-12)).ceil().max(1.0) as usize
}

pub fn solve_lf(spec: &ProblemSpec, params: &SchemeParams) -> Result<ValueField> {
    solve_lf_substepped(spec, params, 1)
}

/// Lax–Friedrichs with step `params.time_step / substeps`, recorded on the coarse lattice.
pub fn solve_lf_substepped(
    spec: &ProblemSpec,
    params: &SchemeParams,
    substeps: usize,
) -> Result<ValueField> {
    params.check(spec.m())?;
    let dt = params.time_step / substeps as f64;
    let cfl = lf_cfl_number(spec, params, dt);
    if cfl > 0.5 + 1e-12 {
        return Err(Error::Cfl { value: cfl });
    }
    let coarse = if spec.horizon == 0.0 {
        0
    } else {
        let n = (spec.horizon / params.time_step).round();
        if (n * params.time_step - spec.horizon).abs() > 1e-9 * spec.horizon.max(1.0) {
            return Err(Error::Problem(format!(
                "horizon {} is not a multiple of the time step {}",
                spec.horizon, params.time_step
            )));
        }
        n as usize
    };
    let grid = spec.grid;
    let m = spec.m();
    let c = &spec.coupling;
    let mut u: Vec<Field> = spec.initial.clone();
    let mut times = vec![0.0];
    let mut values = vec![u.clone()];
    for n in 1..=coarse {
        for _ in 0..substeps {
            let next: Vec<Field> = (0..m)
                .map(|k| {
                    let h = &spec.hamiltonians[k];
                    let theta = params.lf_dissipation[k];
                    (0..grid.len())
                        .map(|node| {
                            let flux = lf_numerical_hamiltonian(h, &grid, &u[k], node, theta);
                            let coupled: f64 = (0..m).map(|j| c.get(k, j) * u[j][node]).sum();
                            u[k][node] - dt * (flux + coupled)
                        })
                        .collect()
                })
                .collect();
            u = next;
        }
        if n % params.record_every == 0 || n == coarse {
            times.push(n as f64 * params.time_step);
            values.push(u.clone());
        }
    }
    Ok(ValueField {
        grid,
        times,
        values,
        warnings: Vec::new(),
        max_boundary_fraction: 0.0,
    })
}
