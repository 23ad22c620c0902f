//! One-window dynamic programming operator along straight segments.
//!
//! For a window of length `h`, state `i` and point `x`:
//!
//! `S_h(u)_i(x) = min_q  h sum_k phi^(i)_k(-h/2) (L_k(x - h q/2, q) + shift)
//!                      + sum_k phi^(i)_k(-h) u_k(x - h q)`.

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{Field, Point, TorusGrid};
use crate::model::{LagrangianSpec, ProblemSpec};
use crate::solver::search::{SearchResult, VelocitySearch};
use crate::solver::SchemeParams;
use crate::weights::weight_family;

#[derive(Debug, Clone)]
pub struct DppOperator {
    pub grid: TorusGrid,
    pub window: f64,
    pub lagrangians: Vec<LagrangianSpec>,
    /// `half[i][k] = phi^(i)_k(-h/2)`.
    pub half: Vec<Vec<f64>>,
    /// `full[i][k] = phi^(i)_k(-h)`.
    pub full: Vec<Vec<f64>>,
    /// Constant added to every running cost (the ergodic constant in relative value iteration).
    pub shift: f64,
    pub search: VelocitySearch,
}

/// Result of one application of the operator on the whole grid.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub fields: Vec<Field>,
    pub boundary_hits: usize,
}

impl DppOperator {
    pub fn new(spec: &ProblemSpec, params: &SchemeParams, window: f64, shift: f64) -> Result<Self> {
        let family = weight_family(&spec.coupling)?;
        let half = family.iter().map(|w| w.eval(-0.5 * window)).collect();
        let full = family.iter().map(|w| w.eval(-window)).collect();
        Ok(Self {
            grid: spec.grid,
            window,
            lagrangians: spec.lagrangians()?,
            half,
            full,
            shift,
            search: params.search(spec.dim()),
        })
    }

    pub fn m(&self) -> usize {
        self.half.len()
    }

    /// Window cost of velocity `q` from `x` in state `i` against fields `u`.
    #[inline]
    pub fn functional(&self, u: &[Field], x: Point, i: usize, q: Point) -> f64 {
        let h = self.window;
        let mid = self
            .grid
            .stencil([x[0] - 0.5 * h * q[0], x[1] - 0.5 * h * q[1]]);
        let end = self.grid.stencil([x[0] - h * q[0], x[1] - h * q[1]]);
        let wh = &self.half[i];
        let wf = &self.full[i];
        let mut run = 0.0;
        let mut term = 0.0;
        for (k, l) in self.lagrangians.iter().enumerate() {
            run += wh[k] * (l.kinetic(q) - mid.apply(l.potential()));
            term += wf[k] * end.apply(&u[k]);
        }
        h * (run + self.shift) + term
    }

    pub fn minimize_at(&self, u: &[Field], x: Point, i: usize) -> SearchResult {
        let f = |q| self.functional(u, x, i, q);
        if self.grid.dim() == 1 {
            self.search.minimize_piecewise(f, &self.breakpoints(x[0]))
        } else {
            self.search.minimize(f)
        }
    }

    /// Velocities at which the midpoint or the foot of the segment from `x` crosses a node;
    /// the window cost is convex in between.
    fn breakpoints(&self, x: f64) -> Vec<f64> {
        let (dx, h, b) = (self.grid.spacing(), self.window, self.search.bound);
        let mut out = Vec::new();
        for scale in [1.0, 0.5] {
            let reach = scale * h * b;
            let first = ((x - reach) / dx).ceil() as i64;
            let last = ((x + reach) / dx).floor() as i64;
            out.extend((first..=last).map(|j| (x - j as f64 * dx) / (scale * h)));
        }
        out
    }

    /// Applies the operator at every node, in parallel; output is independent of scheduling.
    pub fn apply(&self, u: &[Field]) -> StepOutput {
        let m = self.m();
        let per_node: Vec<(Vec<f64>, usize)> = (0..self.grid.len())
            .into_par_iter()
            .map(|node| {
                let x = self.grid.coords(node);
                let mut vals = Vec::with_capacity(m);
                let mut hits = 0;
                for i in 0..m {
                    let r = self.minimize_at(u, x, i);
                    vals.push(r.value);
                    hits += r.on_boundary as usize;
                }
                (vals, hits)
            })
            .collect();
        let mut fields = vec![vec![0.0; self.grid.len()]; m];
        let mut boundary_hits = 0;
        for (node, (vals, hits)) in per_node.into_iter().enumerate() {
            for (k, v) in vals.into_iter().enumerate() {
                fields[k][node] = v;
            }
            boundary_hits += hits;
        }
        StepOutput {
            fields,
            boundary_hits,
        }
    }
}
