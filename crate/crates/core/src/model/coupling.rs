use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Check;

const SUM_TOL: f64 = 1e-12;

/// Switching-rate matrix `c_ij` of a weakly coupled system.
///
/// Construction only enforces shape and finiteness; the structural conditions
/// (signs, zero row/column sums, irreducibility) are reported by [`CouplingMatrix::checks`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl CouplingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m < 2 {
            return Err(Error::Coupling(format!("need at least 2 states, got {m}")));
        }
        let mut entries = Vec::with_capacity(m * m);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::Coupling(format!(
                    "row {i} has {} entries, expected {m}",
                    r.len()
                )));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Coupling(format!("entry ({i},{j}) is not finite")));
            }
            entries.extend_from_slice(r);
        }
        Ok(Self { m, entries })
    }

    /// `[[c1, -c1], [-c2, c2]]`.
    pub fn two_state(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::Coupling(format!(
                "two-state rates must be positive, got c1={c1}, c2={c2}"
            )));
        }
        Self::new(vec![vec![c1, -c1], vec![-c2, c2]])
    }

    /// Cyclic chain `k -> k+1 (mod m)` with unit rate.
    pub fn cyclic(m: usize) -> Result<Self> {
        let rows = (0..m)
            .map(|i| {
                let mut r = vec![0.0; m];
                r[i] = 1.0;
                r[(i + 1) % m] = -1.0;
                r
            })
            .collect();
        Self::new(rows)
    }

    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }

    /// Total jump rate out of state `k`.
    pub fn rate(&self, k: usize) -> f64 {
        self.get(k, k)
    }

    pub fn max_rate(&self) -> f64 {
        (0..self.m).map(|k| self.rate(k)).fold(0.0, f64::max)
    }

    /// `max_i sum_j |c_ij|`.
    pub fn row_abs_max(&self) -> f64 {
        (0..self.m)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.m, &self.entries)
    }

    pub fn scaled_row(&self, i: usize, factor: f64) -> Self {
        let mut out = self.clone();
        for j in 0..self.m {
            out.entries[i * self.m + j] *= factor;
        }
        out
    }

    /// Relabels states: new state `a` is old state `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.m;
        let mut entries = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                entries[a * m + b] = self.get(perm[a], perm[b]);
            }
        }
        Self { m, entries }
    }

    /// A proper nonempty subset `I` with no rate leaving it, if one exists.
    pub fn reducibility_witness(&self) -> Option<Vec<usize>> {
        let m = self.m;
        for mask in 1u32..(1u32 << m) - 1 {
            let inside = |k: usize| mask & (1 << k) != 0;
            let leaks = (0..m)
                .filter(|&i| inside(i))
                .any(|i| (0..m).any(|j| !inside(j) && self.get(i, j) != 0.0));
            if !leaks {
                return Some((0..m).filter(|&k| inside(k)).collect());
            }
        }
        None
    }

    pub fn checks(&self) -> Vec<Check> {
        let m = self.m;
        let mut out = Vec::new();

        let sign = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .find(|&(i, j)| {
                let v = self.get(i, j);
                if i == j {
                    v < 0.0
                } else {
                    v > 0.0
                }
            });
        out.push(Check::new(
            "coupling.sign",
            sign.is_none(),
            sign.map(|(i, j)| format!("entry ({i},{j}) = {}", self.get(i, j))),
        ));

        let bad_row = (0..m).find(|&i| self.row(i).iter().sum::<f64>().abs() > SUM_TOL);
        out.push(Check::new(
            "coupling.row_sums",
            bad_row.is_none(),
            bad_row.map(|i| format!("row {i} sums to {:e}", self.row(i).iter().sum::<f64>())),
        ));

        let col_sum = |j: usize| (0..m).map(|i| self.get(i, j)).sum::<f64>();
        let bad_col = (0..m).find(|&j| col_sum(j).abs() > SUM_TOL);
        out.push(Check::new(
            "coupling.column_sums",
            bad_col.is_none(),
            bad_col.map(|j| format!("column {j} sums to {:e}", col_sum(j))),
        ));

        let witness = self.reducibility_witness();
        out.push(Check::new(
            "coupling.irreducible",
            witness.is_none(),
            witness.map(|w| format!("closed subset I = {w:?}")),
        ));

        if m == 2 {
            let ok = self.get(0, 0) > 0.0 && self.get(1, 1) > 0.0;
            out.push(Check::new(
                "coupling.two_state_rates",
                ok,
                (!ok).then(|| format!("c1={}, c2={}", self.get(0, 0), self.get(1, 1))),
            ));
        }
        out
    }
}
