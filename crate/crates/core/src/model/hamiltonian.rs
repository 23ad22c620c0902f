//! Hamiltonians `H(x,p) = K(p) + V(x)` and their Legendre duals `L(x,q) = K*(q) - V(x)`.
//!
//! The kinetic part is either `kappa |p|^2 / 2` (self-dual up to `kappa -> 1/kappa`)
//! or a convex table on a tensor grid over `[-P, P]^dim`, conjugated by brute force.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Point, TorusGrid};

/// Symmetric sample axis `[-max, max]` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(max: f64, points: usize) -> Self {
        Self { max, points }
    }

    pub fn step(&self) -> f64 {
        2.0 * self.max / (self.points - 1) as f64
    }

    pub fn value(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.max
        } else {
            -self.max + k as f64 * self.step()
        }
    }
}

/// Values of a function on the tensor grid `Axis^dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub dim: usize,
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl Table {
    pub fn from_fn<F: Fn(Point) -> f64>(dim: usize, axis: Axis, f: F) -> Self {
        let n = axis.points;
        let total = n.pow(dim as u32);
        let values = (0..total)
            .map(|idx| f(Self::node_point(dim, axis, idx)))
            .collect();
        Self { dim, axis, values }
    }

    fn node_point(dim: usize, axis: Axis, idx: usize) -> Point {
        let n = axis.points;
        if dim == 1 {
            [axis.value(idx), 0.0]
        } else {
            [axis.value(idx / n), axis.value(idx % n)]
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        Self::node_point(self.dim, self.axis, idx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multilinear interpolation; outside the box the boundary cell is extended linearly.
    pub fn eval(&self, p: Point) -> f64 {
        let n = self.axis.points;
        let h = self.axis.step();
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..self.dim {
            let u = (p[a] + self.axis.max) / h;
            let k = (u.floor() as i64).clamp(0, n as i64 - 2) as usize;
            base[a] = k;
            frac[a] = u - k as f64;
        }
        if self.dim == 1 {
            let f = frac[0];
            (1.0 - f) * self.values[base[0]] + f * self.values[base[0] + 1]
        } else {
            let at = |i: usize, j: usize| self.values[i * n + j];
            let (i, j) = (base[0], base[1]);
            let (fa, fb) = (frac[0], frac[1]);
            (1.0 - fa) * ((1.0 - fb) * at(i, j) + fb * at(i, j + 1))
                + fa * ((1.0 - fb) * at(i + 1, j) + fb * at(i + 1, j + 1))
        }
    }

    /// Node with the smallest value (first in row-major order on ties).
    pub fn argmin(&self) -> Point {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = k;
            }
        }
        self.point(best)
    }

    /// First axis-wise second difference below `-tol`, if any: (axis, node index along axis, value).
    pub fn convexity_violation(&self, tol: f64) -> Option<(usize, usize, f64)> {
        let n = self.axis.points;
        let lines: Vec<(usize, Vec<usize>)> = if self.dim == 1 {
            vec![(0, (0..n).collect())]
        } else {
            let mut v = Vec::with_capacity(2 * n);
            for j in 0..n {
                v.push((0, (0..n).map(|i| i * n + j).collect()));
            }
            for i in 0..n {
                v.push((1, (0..n).map(|j| i * n + j).collect()));
            }
            v
        };
        for (axis, line) in lines {
            for k in 1..n - 1 {
                let d2 = self.values[line[k - 1]] - 2.0 * self.values[line[k]]
                    + self.values[line[k + 1]];
                if d2 < -tol {
                    return Some((axis, k, d2));
                }
            }
        }
        None
    }

    /// Largest one-sided slope magnitude over nodes with `|p_a| <= bound` on every axis.
    pub fn slope_bound(&self, bound: f64) -> f64 {
        let n = self.axis.points;
        let h = self.axis.step();
        let mut best = 0.0f64;
        let stride = |a: usize| if self.dim == 1 || a == 1 { 1 } else { n };
        for idx in 0..self.values.len() {
            let p = self.point(idx);
            if (0..self.dim).any(|a| p[a].abs() > bound + h) {
                continue;
            }
            for a in 0..self.dim {
                let k = if self.dim == 1 || a == 1 {
                    idx % n
                } else {
                    idx / n
                };
                if k + 1 < n {
                    let s = (self.values[idx + stride(a)] - self.values[idx]) / h;
                    best = best.max(s.abs());
                }
            }
        }
        best
    }

    /// Brute-force convex conjugate `sup_p (p.q - f(p))` over the table nodes, sampled on `target`.
    pub fn conjugate(&self, target: Axis) -> Table {
        let dim = self.dim;
        let n = target.points;
        let total = n.pow(dim as u32);
        let nodes: Vec<Point> = (0..self.values.len()).map(|i| self.point(i)).collect();
        let values = (0..total)
            .into_par_iter()
            .map(|idx| {
                let q = Self::node_point(dim, target, idx);
                let mut best = f64::NEG_INFINITY;
                for (p, f) in nodes.iter().zip(&self.values) {
                    let s = p[0] * q[0] + p[1] * q[1] - f;
                    if s > best {
                        best = s;
                    }
                }
                best
            })
            .collect();
        Table {
            dim,
            axis: target,
            values,
        }
    }
}

/// `H_i(x, p) = K_i(p) + V_i(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HamiltonianSpec {
    /// `kappa |p|^2 / 2 + V(x)`.
    Quadratic { kappa: f64, potential: Field },
    /// Convex table `K(p)` plus potential. `coercivity_margin` is the required rise of
    /// `K` from `p = 0` to each face of the table box.
    Tabulated {
        kinetic: Table,
        potential: Field,
        coercivity_margin: f64,
    },
}

impl HamiltonianSpec {
    pub fn quadratic(kappa: f64, potential: Field) -> Self {
        Self::Quadratic { kappa, potential }
    }

    pub fn potential(&self) -> &Field {
        match self {
            Self::Quadratic { potential, .. } | Self::Tabulated { potential, .. } => potential,
        }
    }

    pub fn potential_mut(&mut self) -> &mut Field {
        match self {
            Self::Quadratic { potential, .. } | Self::Tabulated { potential, .. } => potential,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Quadratic { .. } => None,
            Self::Tabulated { kinetic, .. } => Some(kinetic.dim),
        }
    }

    #[inline]
    pub fn kinetic(&self, p: Point) -> f64 {
        match self {
            Self::Quadratic { kappa, .. } => 0.5 * kappa * (p[0] * p[0] + p[1] * p[1]),
            Self::Tabulated { kinetic, .. } => kinetic.eval(p),
        }
    }

    pub fn eval_node(&self, node: usize, p: Point) -> f64 {
        self.kinetic(p) + self.potential()[node]
    }

    pub fn eval(&self, grid: &TorusGrid, x: Point, p: Point) -> f64 {
        self.kinetic(p) + grid.interpolate(self.potential(), x)
    }

    /// Minimiser of the kinetic part.
    pub fn kinetic_minimizer(&self) -> Point {
        match self {
            Self::Quadratic { .. } => [0.0, 0.0],
            Self::Tabulated { kinetic, .. } => kinetic.argmin(),
        }
    }

    /// `min_p K(p)`, so that `L(x, 0) = -min_p K - V(x)`.
    pub fn kinetic_min_value(&self) -> f64 {
        match self {
            Self::Quadratic { .. } => 0.0,
            Self::Tabulated { kinetic, .. } => {
                kinetic.values.iter().cloned().fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Bound on `|dH/dp_a|` over `|p_a| <= pbar`.
    pub fn gradient_bound(&self, pbar: f64) -> f64 {
        match self {
            Self::Quadratic { kappa, .. } => kappa * pbar,
            Self::Tabulated { kinetic, .. } => kinetic.slope_bound(pbar),
        }
    }

    /// Smallest `|p|` beyond which `H(x,p) >= level` for all `x` (for tabulated data,
    /// searched along the axes of the table; the table bound if never reached).
    pub fn level_radius(&self, level: f64) -> f64 {
        let vmin = self
            .potential()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        match self {
            Self::Quadratic { kappa, .. } => (2.0 * (level - vmin).max(0.0) / kappa).sqrt(),
            Self::Tabulated { kinetic, .. } => {
                let n = 2000;
                let pm = kinetic.axis.max;
                for k in 0..=n {
                    let r = pm * k as f64 / n as f64;
                    let mut ok = true;
                    for a in 0..kinetic.dim {
                        for sign in [-1.0, 1.0] {
                            let mut p = [0.0; 2];
                            p[a] = sign * r;
                            if kinetic.eval(p) + vmin < level {
                                ok = false;
                            }
                        }
                    }
                    if ok {
                        return r;
                    }
                }
                pm
            }
        }
    }

    /// Constant `C` of the growth sandwich `|p|^2/(2C) - C <= H <= C(|p|^2+1)/2`.
    pub fn growth_constant(&self) -> f64 {
        let vmax = self.potential().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match self {
            Self::Quadratic { kappa, .. } => kappa.max(1.0 / kappa).max(2.0 * vmax),
            Self::Tabulated {
                kinetic, potential, ..
            } => {
                let vlo = potential.iter().cloned().fold(f64::INFINITY, f64::min);
                let vhi = potential.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let fits = |c: f64| {
                    (0..kinetic.len()).all(|k| {
                        let p = kinetic.point(k);
                        let p2 = p[0] * p[0] + p[1] * p[1];
                        let h = kinetic.values[k];
                        p2 / (2.0 * c) - c <= h + vlo && h + vhi <= 0.5 * c * (p2 + 1.0)
                    })
                };
                let mut c = 1.0;
                while !fits(c) && c < 1e8 {
                    c *= 1.01;
                }
                c
            }
        }
    }
}

/// `L_i(x, q) = K_i*(q) - V_i(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LagrangianSpec {
    Quadratic { kappa: f64, potential: Field },
    Tabulated { kinetic: Table, potential: Field },
}

impl LagrangianSpec {
    #[inline]
    pub fn kinetic(&self, q: Point) -> f64 {
        match self {
            Self::Quadratic { kappa, .. } => (q[0] * q[0] + q[1] * q[1]) / (2.0 * kappa),
            Self::Tabulated { kinetic, .. } => kinetic.eval(q),
        }
    }

    pub fn potential(&self) -> &Field {
        match self {
            Self::Quadratic { potential, .. } | Self::Tabulated { potential, .. } => potential,
        }
    }

    pub fn eval(&self, grid: &TorusGrid, x: Point, q: Point) -> f64 {
        self.kinetic(q) - grid.interpolate(self.potential(), x)
    }

    pub fn eval_node(&self, node: usize, q: Point) -> f64 {
        self.kinetic(q) - self.potential()[node]
    }

    /// Upper bound on the second derivative of the kinetic part along rays `|q| <= speed`.
    pub fn curvature_bound(&self, speed: f64) -> f64 {
        match self {
            Self::Quadratic { kappa, .. } => 1.0 / kappa,
            Self::Tabulated { kinetic, .. } => {
                let h = kinetic.axis.step();
                let n = kinetic.axis.points;
                let mut best = 0.0f64;
                for idx in 0..kinetic.len() {
                    let q = kinetic.point(idx);
                    if (0..kinetic.dim).any(|a| q[a].abs() > speed + h) {
                        continue;
                    }
                    for a in 0..kinetic.dim {
                        let stride = if kinetic.dim == 1 || a == 1 { 1 } else { n };
                        let k = if kinetic.dim == 1 || a == 1 {
                            idx % n
                        } else {
                            idx / n
                        };
                        if k >= 1 && k + 1 < n {
                            let d2 = kinetic.values[idx - stride] - 2.0 * kinetic.values[idx]
                                + kinetic.values[idx + stride];
                            best = best.max(d2 / (h * h));
                        }
                    }
                }
                best
            }
        }
    }
}

/// Legendre transform in `p`. Closed form for the quadratic kind; brute-force supremum over
/// the table nodes for the tabulated kind, sampled on `q_axis`.
pub fn legendre_transform(h: &HamiltonianSpec, q_axis: Axis) -> Result<LagrangianSpec> {
    match h {
        HamiltonianSpec::Quadratic { kappa, potential } => {
            if !(*kappa > 0.0) {
                return Err(Error::Hamiltonian(format!(
                    "kappa must be positive, got {kappa}"
                )));
            }
            Ok(LagrangianSpec::Quadratic {
                kappa: *kappa,
                potential: potential.clone(),
            })
        }
        HamiltonianSpec::Tabulated {
            kinetic, potential, ..
        } => {
            let scale = kinetic.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if let Some((axis, p_index, d2)) = kinetic.convexity_violation(1e-12 * scale) {
                return Err(Error::NonConvexTable {
                    axis,
                    p_index,
                    second_difference: d2,
                });
            }
            Ok(LagrangianSpec::Tabulated {
                kinetic: kinetic.conjugate(q_axis),
                potential: potential.clone(),
            })
        }
    }
}

/// Inverse transform `H(x,p) = sup_q (p.q - L(x,q))`.
pub fn legendre_transform_lagrangian(l: &LagrangianSpec, p_axis: Axis) -> HamiltonianSpec {
    match l {
        LagrangianSpec::Quadratic { kappa, potential } => HamiltonianSpec::Quadratic {
            kappa: *kappa,
            potential: potential.clone(),
        },
        LagrangianSpec::Tabulated { kinetic, potential } => HamiltonianSpec::Tabulated {
            kinetic: kinetic.conjugate(p_axis),
            potential: potential.clone(),
            coercivity_margin: 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(1, 16).unwrap()
    }

    #[test]
    fn quadratic_is_self_conjugate() {
        let g = grid();
        let h = HamiltonianSpec::quadratic(1.0, vec![0.0; g.len()]);
        let l = legendre_transform(&h, Axis::new(4.0, 11)).unwrap();
        for q in [-2.0, -0.5, 0.0, 1.5] {
            assert_eq!(l.eval_node(3, [q, 0.0]), q * q / 2.0);
        }
    }

    #[test]
    fn potential_flips_sign_under_conjugation() {
        let g = grid();
        let v = g.sample(|x| (2.0 * std::f64::consts::PI * x[0]).cos());
        let h = HamiltonianSpec::quadratic(1.0, v.clone());
        let l = legendre_transform(&h, Axis::new(4.0, 11)).unwrap();
        for node in 0..g.len() {
            assert_eq!(l.eval_node(node, [0.7, 0.0]), 0.7 * 0.7 / 2.0 - v[node]);
        }
    }

    #[test]
    fn quartic_table_conjugate_matches_closed_form() {
        // brute-force supremum over 2001 nodes vs (3/4) q^(4/3)
        let kinetic = Table::from_fn(1, Axis::new(4.0, 2001), |p| p[0].powi(4) / 4.0);
        let h = HamiltonianSpec::Tabulated {
            kinetic,
            potential: vec![0.0; 16],
            coercivity_margin: 1.0,
        };
        let l = legendre_transform(&h, Axis::new(4.0, 401)).unwrap();
        let exact = 0.75 * 2f64.powf(4.0 / 3.0);
        assert!((exact - 1.889_881_574_8).abs() < 1e-9);
        assert!((l.kinetic([2.0, 0.0]) - exact).abs() < 1e-3);
    }

    #[test]
    fn non_convex_table_is_rejected_with_location() {
        let kinetic = Table::from_fn(1, Axis::new(2.0, 41), |p| (p[0] * p[0] - 1.0).powi(2));
        let h = HamiltonianSpec::Tabulated {
            kinetic,
            potential: vec![0.0; 16],
            coercivity_margin: 0.0,
        };
        match legendre_transform(&h, Axis::new(2.0, 41)) {
            Err(Error::NonConvexTable { axis, p_index, .. }) => {
                assert_eq!(axis, 0);
                // |p| < 1/sqrt(3) is the concave region; first node there is p = -0.5 (index 15)
                let p = Axis::new(2.0, 41).value(p_index);
                assert!(p.abs() < 1.0 / 3f64.sqrt() + 0.1, "p = {p}");
            }
            other => panic!("expected NonConvexTable, got {other:?}"),
        }
    }

    #[test]
    fn double_transform_of_table_is_close() {
        let pa = Axis::new(3.0, 301);
        let kinetic = Table::from_fn(1, pa, |p| p[0].powi(4) / 4.0 + 0.5 * p[0] * p[0]);
        let h = HamiltonianSpec::Tabulated {
            kinetic: kinetic.clone(),
            potential: vec![0.0; 16],
            coercivity_margin: 0.0,
        };
        let q_max = 8.0;
        let l = legendre_transform(&h, Axis::new(q_max, 801)).unwrap();
        let h2 = legendre_transform_lagrangian(&l, pa);
        let bound = 2.0 * pa.step() * q_max;
        for k in 0..pa.points {
            let p = pa.value(k);
            // only where the supporting slope stays inside the q-range
            if (p.powi(3) + p).abs() <= q_max {
                let err = (h2.kinetic([p, 0.0]) - kinetic.values[k]).abs();
                assert!(err <= bound, "p={p} err={err}");
            }
        }
    }

    #[test]
    fn growth_constant_for_quadratic() {
        let h = HamiltonianSpec::quadratic(0.5, vec![1.5, -0.5, 0.0, 0.0]);
        assert_eq!(h.growth_constant(), 3.0);
        let h = HamiltonianSpec::quadratic(4.0, vec![0.1; 4]);
        assert_eq!(h.growth_constant(), 4.0);
    }
}
