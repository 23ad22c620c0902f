//! Uniform periodic grids on the unit torus and multilinear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on the torus. Only the first `dim` coordinates are meaningful.
pub type Point = [f64; 2];

/// Grid-sampled real field, stored in row-major node order.
pub type Field = Vec<f64>;

/// Uniform grid with `n` points per axis on the torus of unit period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Grid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if points_per_axis < 4 {
            return Err(Error::Grid(format!(
                "need at least 4 points per axis, got {points_per_axis}"
            )));
        }
        Ok(Self {
            dim,
            n: points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    pub fn flat_index(&self, multi: [usize; 2]) -> usize {
        if self.dim == 1 {
            multi[0] % self.n
        } else {
            (multi[0] % self.n) * self.n + multi[1] % self.n
        }
    }

    pub fn coords(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let h = self.spacing();
        if self.dim == 1 {
            [mi[0] as f64 * h, 0.0]
        } else {
            [mi[0] as f64 * h, mi[1] as f64 * h]
        }
    }

    /// Periodic neighbour of `idx` along `axis`, `offset` steps away.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut mi = self.multi_index(idx);
        let n = self.n as isize;
        mi[axis] = (mi[axis] as isize + offset).rem_euclid(n) as usize;
        self.flat_index(mi)
    }

    /// Node nearest to `x` (periodic).
    pub fn nearest_node(&self, x: Point) -> usize {
        let mut mi = [0usize; 2];
        for a in 0..self.dim {
            let u = (x[a] * self.n as f64).round() as i64;
            mi[a] = u.rem_euclid(self.n as i64) as usize;
        }
        self.flat_index(mi)
    }

    /// Wraps a point into [0,1)^dim.
    pub fn wrap(&self, x: Point) -> Point {
        let mut y = x;
        for c in y.iter_mut().take(self.dim) {
            *c = c.rem_euclid(1.0);
            if *c >= 1.0 {
                *c = 0.0;
            }
        }
        y
    }

    /// Periodic Euclidean distance between two points.
    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dim {
            let mut d = (a[k] - b[k]).rem_euclid(1.0);
            if d > 0.5 {
                d = 1.0 - d;
            }
            s += d * d;
        }
        s.sqrt()
    }

    pub fn stencil(&self, x: Point) -> Stencil {
        Stencil::new(self, x)
    }

    pub fn interpolate(&self, field: &[f64], x: Point) -> f64 {
        self.stencil(x).apply(field)
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(Point) -> f64>(&self, f: F) -> Field {
        (0..self.len()).map(|i| f(self.coords(i))).collect()
    }
}

/// Periodic multilinear interpolation weights for one point, reusable across fields.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    nodes: [usize; 4],
    weights: [f64; 4],
    count: usize,
}

impl Stencil {
    fn new(grid: &TorusGrid, x: Point) -> Self {
        let n = grid.n as f64;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..grid.dim {
            let u = x[a] * n;
            let fl = u.floor();
            frac[a] = u - fl;
            base[a] = (fl as i64).rem_euclid(grid.n as i64) as usize;
        }
        if grid.dim == 1 {
            let i0 = base[0];
            let i1 = if i0 + 1 == grid.n { 0 } else { i0 + 1 };
            Self {
                nodes: [i0, i1, 0, 0],
                weights: [1.0 - frac[0], frac[0], 0.0, 0.0],
                count: 2,
            }
        } else {
            let mut nodes = [0usize; 4];
            let mut weights = [0.0f64; 4];
            let mut k = 0;
            for da in 0..2 {
                for db in 0..2 {
                    nodes[k] = grid.flat_index([base[0] + da, base[1] + db]);
                    let wa = if da == 0 { 1.0 - frac[0] } else { frac[0] };
                    let wb = if db == 0 { 1.0 - frac[1] } else { frac[1] };
                    weights[k] = wa * wb;
                    k += 1;
                }
            }
            Self {
                nodes,
                weights,
                count: 4,
            }
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes[..self.count]
    }

    #[inline]
    pub fn apply(&self, field: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.count {
            s += self.weights[k] * field[self.nodes[k]];
        }
        s
    }
}

pub fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn oscillation(f: &[f64]) -> f64 {
    let (lo, hi) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_high_dimensional_grids() {
        assert!(TorusGrid::new(1, 3).is_err());
        assert!(TorusGrid::new(3, 8).is_err());
        assert!(TorusGrid::new(2, 4).is_ok());
    }

    #[test]
    fn spacing_times_n_is_one() {
        for n in [4, 7, 64, 128, 100] {
            let g = TorusGrid::new(1, n).unwrap();
            assert!((g.spacing() * n as f64 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn neighbors_wrap() {
        let g = TorusGrid::new(1, 8).unwrap();
        assert_eq!(g.neighbor(7, 0, 1), 0);
        assert_eq!(g.neighbor(0, 0, -1), 7);
        let g2 = TorusGrid::new(2, 4).unwrap();
        let idx = g2.flat_index([3, 0]);
        assert_eq!(g2.multi_index(g2.neighbor(idx, 0, 1)), [0, 0]);
        assert_eq!(g2.multi_index(g2.neighbor(idx, 1, -1)), [3, 3]);
    }

    #[test]
    fn interpolation_is_exact_on_nodes_and_linear_between() {
        let g = TorusGrid::new(1, 8).unwrap();
        let f = g.sample(|x| 3.0 * x[0]);
        assert_eq!(g.interpolate(&f, [0.25, 0.0]), f[2]);
        // wraps across the seam: between node 7 (2.625) and node 0 (0.0)
        let mid = g.interpolate(&f, [0.9375, 0.0]);
        assert!((mid - 1.3125).abs() < 1e-14);
        let neg = g.interpolate(&f, [-0.0625, 0.0]);
        assert!((neg - mid).abs() < 1e-14);
    }

    #[test]
    fn bilinear_reproduces_affine_cell_values() {
        let g = TorusGrid::new(2, 4).unwrap();
        let f = g.sample(|x| x[0] + 2.0 * x[1]);
        let v = g.interpolate(&f, [0.3, 0.4]);
        assert!((v - (0.3 + 0.8)).abs() < 1e-14);
    }
}
