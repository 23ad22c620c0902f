//! Velocity search: uniform sampling of the box, then golden-section refinement per axis.

use crate::grid::Point;

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const GOLDEN_ITERS: usize = 24;
const MAX_BASINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySearch {
    pub dim: usize,
    pub bound: f64,
    /// Odd sample count per axis.
    pub samples: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub q: Point,
    pub value: f64,
    pub on_boundary: bool,
}

impl VelocitySearch {
    pub fn sample(&self, k: usize) -> f64 {
        let half = (self.samples / 2) as i64;
        let j = k as i64 - half;
        if j == half {
            self.bound
        } else if j == -half {
            -self.bound
        } else {
            self.bound * j as f64 / half as f64
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.bound / (self.samples - 1) as f64
    }

    /// Width of the final golden-section bracket: how far a refined velocity can sit from the
    /// minimiser it approximates. In one dimension no piece is longer than the box.
    pub fn resolution(&self) -> f64 {
        let shrink = INV_PHI.powi(GOLDEN_ITERS as i32);
        if self.dim == 1 {
            return 2.0 * self.bound * shrink;
        }
        if self.rounds == 0 {
            return self.spacing();
        }
        2.0 * self.spacing() * 0.5f64.powi(self.rounds as i32 - 1) * shrink
    }

    /// One-dimensional search for an `f` that is convex between consecutive `breaks`: every
    /// piece is searched, so the result is the global minimum up to `resolution`.
    /// Ties go to the smallest velocity.
    pub fn minimize_piecewise<F: FnMut(Point) -> f64>(
        &self,
        mut f: F,
        breaks: &[f64],
    ) -> SearchResult {
        let mut knots = vec![-self.bound];
        knots.extend(breaks.iter().copied().filter(|b| b.abs() < self.bound));
        knots.push(self.bound);
        knots.sort_by(f64::total_cmp);
        knots.dedup();

        let mut line = |t: f64| f([t, 0.0]);
        let mut best_t = -self.bound;
        let mut best = line(best_t);
        for w in knots.windows(2) {
            for t in [golden(&mut line, w[0], w[1]), w[1]] {
                let v = line(t);
                if v < best {
                    best = v;
                    best_t = t;
                }
            }
        }
        SearchResult {
            q: [best_t, 0.0],
            value: best,
            on_boundary: best_t.abs() >= self.bound * (1.0 - 1e-12),
        }
    }

    /// Minimises `f` over the box. Ties go to the lexicographically smallest velocity.
    ///
    /// Every sampled local minimum (up to `MAX_BASINS`, lowest first) is refined, which keeps
    /// the search from locking onto one basin when the best sample moves.
    pub fn minimize<F: FnMut(Point) -> f64>(&self, mut f: F) -> SearchResult {
        let n = self.samples;
        let cols = if self.dim == 1 { 1 } else { n };
        let point = |k: usize| {
            if self.dim == 1 {
                [self.sample(k), 0.0]
            } else {
                [self.sample(k / n), self.sample(k % n)]
            }
        };
        let values: Vec<f64> = (0..n * cols).map(|k| f(point(k))).collect();

        let mut basins: Vec<usize> = (0..values.len())
            .filter(|&k| self.is_local_min(&values, k))
            .collect();
        // stable sort keeps index order among equal values
        basins.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        basins.truncate(MAX_BASINS);

        let mut best_q = point(basins[0]);
        let mut best = values[basins[0]];
        for &k in &basins {
            let (q, v) = self.refine(&mut f, point(k), values[k]);
            if v < best {
                best = v;
                best_q = q;
            }
        }

        let on_boundary = (0..self.dim).any(|a| best_q[a].abs() >= self.bound * (1.0 - 1e-12));
        SearchResult {
            q: best_q,
            value: best,
            on_boundary,
        }
    }

    fn is_local_min(&self, values: &[f64], k: usize) -> bool {
        let n = self.samples as i64;
        let (a, b) = if self.dim == 1 {
            (k as i64, 0)
        } else {
            (k as i64 / n, k as i64 % n)
        };
        let db = if self.dim == 1 { 0 } else { 1 };
        for da in -1..=1 {
            for dbb in -db..=db {
                let (x, y) = (a + da, b + dbb);
                if (da, dbb) == (0, 0) || x < 0 || x >= n || y < 0 || (self.dim == 2 && y >= n) {
                    continue;
                }
                let j = if self.dim == 1 { x } else { x * n + y } as usize;
                // plateaus count once, at their first sample
                if values[j] < values[k] || (values[j] == values[k] && j < k) {
                    return false;
                }
            }
        }
        true
    }

    /// Alternating golden-section line searches with shrinking brackets around `q`.
    fn refine<F: FnMut(Point) -> f64>(
        &self,
        f: &mut F,
        mut q: Point,
        mut best: f64,
    ) -> (Point, f64) {
        let mut width = self.spacing();
        for _ in 0..self.rounds {
            for axis in 0..self.dim {
                let lo = (q[axis] - width).max(-self.bound);
                let hi = (q[axis] + width).min(self.bound);
                let mut line = |t: f64| {
                    let mut p = q;
                    p[axis] = t;
                    f(p)
                };
                let t = golden(&mut line, lo, hi);
                let v = line(t);
                if v < best {
                    best = v;
                    q[axis] = t;
                }
            }
            width *= 0.5;
        }
        (q, best)
    }
}

fn golden<F: FnMut(f64) -> f64>(f: &mut F, mut a: f64, mut b: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let s = VelocitySearch {
            dim: 1,
            bound: 4.0,
            samples: 9,
            rounds: 3,
        };
        let r = s.minimize(|q| (q[0] - 0.3137).powi(2));
        assert!((r.q[0] - 0.3137).abs() < 1e-3);
        assert!(!r.on_boundary);
    }

    #[test]
    fn flags_boundary_and_breaks_ties_low() {
        let s = VelocitySearch {
            dim: 2,
            bound: 1.0,
            samples: 5,
            rounds: 0,
        };
        let r = s.minimize(|q| -q[0]);
        assert!(r.on_boundary);
        assert_eq!(r.q, [1.0, -1.0]);
        let flat = s.minimize(|_| 0.0);
        assert_eq!(flat.q, [-1.0, -1.0]);
    }

    #[test]
    fn piecewise_search_finds_a_narrow_basin() {
        let s = VelocitySearch {
            dim: 1,
            bound: 4.0,
            samples: 9,
            rounds: 3,
        };
        // convex pieces; the deepest one, [1.1, 1.3], holds no sample
        let f = |q: crate::grid::Point| {
            let t = q[0];
            if (1.1..=1.3).contains(&t) {
                (t - 1.2).powi(2) - 1.0
            } else {
                0.1 * (t + 2.0).powi(2) - 0.5
            }
        };
        let sampled = s.minimize(f);
        let r = s.minimize_piecewise(f, &[1.1, 1.3]);
        assert!(sampled.value > -0.6);
        assert!((r.q[0] - 1.2).abs() < 1e-4, "{:?}", r);
        assert!((r.value + 1.0).abs() < 1e-8);
    }

    #[test]
    fn samples_are_symmetric_with_exact_zero() {
        let s = VelocitySearch {
            dim: 1,
            bound: 3.0,
            samples: 7,
            rounds: 0,
        };
        assert_eq!(s.sample(3), 0.0);
        assert_eq!(s.sample(0), -3.0);
        assert_eq!(s.sample(6), 3.0);
    }
}
