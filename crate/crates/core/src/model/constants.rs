//! Problem constants ledger: the a-priori bounds every audit tolerance is built from.

use serde::{Deserialize, Serialize};

use crate::grid::{oscillation, Field, TorusGrid};
use crate::model::{CouplingMatrix, HamiltonianSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Growth constant `C` of the coercivity sandwich, maximised over states.
    pub growth: f64,
    /// `K = max(1, C)`, the scale factor in cross-validation tolerances.
    pub scale: f64,
    /// `M1 >= H_i(x, Dg_i) + sum_j c_ij g_j`.
    pub m1: f64,
    /// Time-Lipschitz constant `C1`.
    pub c1: f64,
    /// Gradient bound `P` used for the Lax–Friedrichs dissipation.
    pub gradient_bound: f64,
    /// `max_k osc(g_k)`.
    pub initial_oscillation: f64,
    /// `max_x max_{j,k} |g_j - g_k|`.
    pub initial_spread: f64,
    /// Default velocity search box half-width.
    pub default_velocity_bound: f64,
    /// Default dissipation per state.
    pub lf_dissipation: Vec<f64>,
}

/// One-sided difference quotients of `f` at `node` along `axis`: (backward, forward).
pub fn one_sided(grid: &TorusGrid, f: &[f64], node: usize, axis: usize) -> (f64, f64) {
    let h = grid.spacing();
    let back = (f[node] - f[grid.neighbor(node, axis, -1)]) / h;
    let fwd = (f[grid.neighbor(node, axis, 1)] - f[node]) / h;
    (back, fwd)
}

/// Largest value of `H(x, p)` over the `2^dim` choices of one-sided gradients at `node`.
pub fn max_one_sided_hamiltonian(
    grid: &TorusGrid,
    h: &HamiltonianSpec,
    f: &[f64],
    node: usize,
) -> f64 {
    let d = grid.dim();
    let sides: Vec<(f64, f64)> = (0..d).map(|a| one_sided(grid, f, node, a)).collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0..(1usize << d) {
        let mut p = [0.0; 2];
        for a in 0..d {
            p[a] = if mask & (1 << a) == 0 {
                sides[a].0
            } else {
                sides[a].1
            };
        }
        best = best.max(h.eval_node(node, p));
    }
    best
}

impl ProblemConstants {
    pub fn compute(
        grid: &TorusGrid,
        hamiltonians: &[HamiltonianSpec],
        coupling: &CouplingMatrix,
        initial: &[Field],
    ) -> Self {
        let m = hamiltonians.len();
        let growth = hamiltonians
            .iter()
            .map(|h| h.growth_constant())
            .fold(0.0, f64::max);
        let scale = growth.max(1.0);

        let mut m1 = f64::NEG_INFINITY;
        let mut grad = 0.0f64;
        for (i, h) in hamiltonians.iter().enumerate() {
            for node in 0..grid.len() {
                let coupled: f64 = (0..m).map(|j| coupling.get(i, j) * initial[j][node]).sum();
                m1 = m1.max(max_one_sided_hamiltonian(grid, h, &initial[i], node) + coupled);
                for a in 0..grid.dim() {
                    let (b, f) = one_sided(grid, &initial[i], node, a);
                    grad = grad.max(b.abs()).max(f.abs());
                }
            }
        }

        let mut spread = 0.0f64;
        for node in 0..grid.len() {
            let (lo, hi) = initial
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), g| {
                    (l.min(g[node]), u.max(g[node]))
                });
            spread = spread.max(hi - lo);
        }
        let l0 = hamiltonians
            .iter()
            .flat_map(|h| {
                let k0 = -h.kinetic_min_value();
                h.potential().iter().map(move |v| (k0 - v).abs())
            })
            .fold(0.0, f64::max);
        let c1 = m1.max(l0 + coupling.max_rate() * spread);

        let osc = initial.iter().map(|g| oscillation(g)).fold(0.0, f64::max);
        let level = c1 + coupling.row_abs_max() * osc;
        let pbar = hamiltonians
            .iter()
            .map(|h| h.level_radius(level))
            .fold(grad, f64::max);
        // a unit floor keeps the scheme well defined when the data are flat
        let lf_dissipation = hamiltonians
            .iter()
            .map(|h| h.gradient_bound(pbar.max(1.0)))
            .collect();

        let qmax = 2.0 * (2.0 * growth * (growth + osc + 1.0)).sqrt();

        Self {
            growth,
            scale,
            m1,
            c1,
            gradient_bound: pbar,
            initial_oscillation: osc,
            initial_spread: spread,
            default_velocity_bound: qmax,
            lf_dissipation,
        }
    }
}
