//! Switching weights `phi^(i)_k(s)`, `s <= 0`: the probability that the backward switching
//! chain started in state `i` at time 0 sits in state `k` at time `s`.
//!
//! As a matrix, `phi^(i)_k(s) = [exp(s C)]_{ik}`, so each row solves `phi' = C^T phi`
//! with `phi(0) = e_i`. Closed form for two states, eigendecomposition for diagonalizable
//! couplings, and a fixed-step exact propagator otherwise.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Point, TorusGrid};
use crate::model::CouplingMatrix;

/// Eigenvector matrices with a worse condition number are treated as defective.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Step of the fallback propagator.
pub const PROPAGATOR_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMethod {
    ClosedForm,
    Spectral,
    Propagator,
}

#[derive(Debug, Clone)]
enum Engine {
    TwoState {
        c1: f64,
        c2: f64,
    },
    Spectral {
        lambda: Vec<Complex64>,
        v: DMatrix<Complex64>,
        vinv: DMatrix<Complex64>,
    },
    /// `powers[k] = exp(-2^k h C)`.
    Propagator {
        powers: Vec<DMatrix<f64>>,
    },
}

/// Switching weights for one coupling and start state.
#[derive(Debug, Clone)]
pub struct WeightSystem {
    coupling: CouplingMatrix,
    start: usize,
    engine: Engine,
    /// Nonzero eigenvalues of the coupling matrix.
    eigenvalues: Vec<Complex64>,
    stationary: Vec<f64>,
    /// `a[k][l]`: amplitude of `e^{lambda_l s}` in `phi_k` (empty for the propagator).
    coefficients: Vec<Vec<Complex64>>,
    /// Measured constant of the half-rate tail bound (propagator only).
    tail_constant: Vec<f64>,
}

/// Scaling-and-squaring Taylor matrix exponential.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Right singular vectors of the `r` smallest singular values.
fn null_space(a: &DMatrix<Complex64>, r: usize) -> Option<Vec<Vec<Complex64>>> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    Some(
        order[..r]
            .iter()
            .map(|&k| vt.row(k).iter().map(|z| z.conj()).collect())
            .collect(),
    )
}

fn condition(v: &DMatrix<Complex64>) -> f64 {
    let s = v.clone().singular_values();
    let hi = s.iter().cloned().fold(0.0, f64::max);
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn times(row: &[f64], p: &DMatrix<f64>) -> Vec<f64> {
    let m = row.len();
    (0..m)
        .map(|k| (0..m).map(|j| row[j] * p[(j, k)]).sum())
        .collect()
}

/// Checks the spectral premise: one simple zero eigenvalue, all others with positive real part.
fn spectral_premise(c: &CouplingMatrix) -> Result<(Vec<Complex64>, usize)> {
    let mat = c.to_matrix();
    let scale = mat.abs().max().max(1.0);
    let eig: Vec<Complex64> = mat.complex_eigenvalues().iter().cloned().collect();
    let zeros: Vec<usize> = (0..eig.len())
        .filter(|&l| eig[l].norm() < 1e-9 * scale)
        .collect();
    if zeros.len() != 1 {
        return Err(Error::Spectral(format!(
            "zero eigenvalue has multiplicity {} (eigenvalues {:?})",
            zeros.len(),
            eig
        )));
    }
    if let Some(bad) = eig
        .iter()
        .enumerate()
        .find(|(l, z)| *l != zeros[0] && z.re <= 1e-12 * scale)
    {
        return Err(Error::Spectral(format!(
            "eigenvalue {} has non-positive real part",
            bad.1
        )));
    }
    Ok((eig, zeros[0]))
}

impl WeightSystem {
    /// Closed-form weights for `[[c1, -c1], [-c2, c2]]`; `i` is 0 or 1.
    pub fn two_state(c1: f64, c2: f64, i: usize) -> Result<Self> {
        let coupling = CouplingMatrix::two_state(c1, c2)?;
        if i > 1 {
            return Err(Error::Coupling(format!(
                "state index {i} out of range for 2 states"
            )));
        }
        let s = c1 + c2;
        let rate = [c1, c2];
        let (ci, cj) = (rate[i], rate[1 - i]);
        let mut stationary = vec![0.0; 2];
        stationary[i] = cj / s;
        stationary[1 - i] = ci / s;
        let mut coefficients = vec![vec![Complex64::new(0.0, 0.0)]; 2];
        coefficients[i][0] = Complex64::new(ci / s, 0.0);
        coefficients[1 - i][0] = Complex64::new(-ci / s, 0.0);
        Ok(Self {
            coupling,
            start: i,
            engine: Engine::TwoState { c1, c2 },
            eigenvalues: vec![Complex64::new(s, 0.0)],
            stationary,
            coefficients,
            tail_constant: Vec::new(),
        })
    }

    /// Weights for a general validated coupling.
    pub fn general(coupling: &CouplingMatrix, i: usize) -> Result<Self> {
        if let Some(bad) = coupling.checks().into_iter().find(|c| !c.passed) {
            return Err(Error::Coupling(format!(
                "{}: {}",
                bad.name,
                bad.detail.unwrap_or_default()
            )));
        }
        let m = coupling.size();
        if i >= m {
            return Err(Error::Coupling(format!(
                "state index {i} out of range for {m} states"
            )));
        }
        let (mut eig, zero) = spectral_premise(coupling)?;
        eig[zero] = Complex64::new(0.0, 0.0);
        let nonzero: Vec<usize> = (0..m).filter(|&l| l != zero).collect();

        let scale = coupling.to_matrix().abs().max().max(1.0);
        let cm = coupling.to_matrix().map(|x| Complex64::new(x, 0.0));
        let mut v = DMatrix::<Complex64>::zeros(m, m);
        let mut ok = true;
        let mut done = vec![false; m];
        for l in 0..m {
            if done[l] {
                continue;
            }
            // cluster of numerically equal eigenvalues shares one null space
            let cluster: Vec<usize> = (l..m)
                .filter(|&k| !done[k] && (eig[k] - eig[l]).norm() < 1e-8 * scale)
                .collect();
            let shifted = &cm - DMatrix::<Complex64>::identity(m, m) * eig[l];
            match null_space(&shifted, cluster.len()) {
                Some(cols) => {
                    for (&k, col) in cluster.iter().zip(cols) {
                        for r in 0..m {
                            v[(r, k)] = col[r];
                        }
                        done[k] = true;
                    }
                }
                None => ok = false,
            }
        }
        for l in 0..m {
            let col = v.column(l);
            let res = (&cm * col - col * eig[l]).norm();
            if !(res <= 1e-8 * scale) {
                ok = false;
            }
        }
        let cond = if ok { condition(&v) } else { f64::INFINITY };
        let vinv = if cond <= CONDITION_LIMIT {
            v.clone().try_inverse()
        } else {
            None
        };
        let eigenvalues: Vec<Complex64> = nonzero.iter().map(|&l| eig[l]).collect();

        if let Some(vinv) = vinv {
            let stationary = (0..m)
                .map(|k| (v[(i, zero)] * vinv[(zero, k)]).re)
                .collect();
            let coefficients = (0..m)
                .map(|k| nonzero.iter().map(|&l| v[(i, l)] * vinv[(l, k)]).collect())
                .collect();
            return Ok(Self {
                coupling: coupling.clone(),
                start: i,
                engine: Engine::Spectral {
                    lambda: eig,
                    v,
                    vinv,
                },
                eigenvalues,
                stationary,
                coefficients,
                tail_constant: Vec::new(),
            });
        }
        Ok(Self::propagator_unchecked(coupling, i, eigenvalues))
    }

    /// Fixed-step propagator weights, bypassing the eigendecomposition (same checks as `general`).
    pub fn propagator(coupling: &CouplingMatrix, i: usize) -> Result<Self> {
        if let Some(bad) = coupling.checks().into_iter().find(|c| !c.passed) {
            return Err(Error::Coupling(bad.name));
        }
        if i >= coupling.size() {
            return Err(Error::Coupling(format!("state index {i} out of range")));
        }
        let (eig, zero) = spectral_premise(coupling)?;
        let eigenvalues = eig
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != zero)
            .map(|(_, z)| *z)
            .collect();
        Ok(Self::propagator_unchecked(coupling, i, eigenvalues))
    }

    fn propagator_unchecked(
        coupling: &CouplingMatrix,
        i: usize,
        eigenvalues: Vec<Complex64>,
    ) -> Self {
        let m = coupling.size();
        // exact one-step propagator exp(-h C)
        let mut powers = vec![expm(&(coupling.to_matrix() * -PROPAGATOR_STEP))];
        for k in 1..48 {
            let p = &powers[k - 1] * &powers[k - 1];
            powers.push(p);
        }
        let mut out = Self {
            coupling: coupling.clone(),
            start: i,
            engine: Engine::Propagator { powers },
            eigenvalues,
            stationary: Vec::new(),
            coefficients: Vec::new(),
            tail_constant: Vec::new(),
        };
        let far = out.eval(-200.0 / out.decay_rate().max(1e-3));
        out.stationary = far;
        // B_k = max_s |phi_k(s) - pi_k| e^{mu |s| / 2} on a sampled window
        let half = 0.5 * out.decay_rate();
        let horizon = 60.0 / out.decay_rate();
        let mut b = vec![0.0f64; m];
        let mut row = out.unit_row();
        let steps = (horizon / PROPAGATOR_STEP).ceil() as usize;
        for n in 0..=steps {
            let s = n as f64 * PROPAGATOR_STEP;
            for k in 0..m {
                b[k] = b[k].max((row[k] - out.stationary[k]).abs() * (half * s).exp());
            }
            row = out.advance(&row);
        }
        out.tail_constant = b;
        out
    }

    fn unit_row(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.m()];
        r[self.start] = 1.0;
        r
    }

    fn advance(&self, row: &[f64]) -> Vec<f64> {
        match &self.engine {
            Engine::Propagator { powers } => times(row, &powers[0]),
            _ => unreachable!(),
        }
    }

    pub fn m(&self) -> usize {
        self.coupling.size()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn method(&self) -> WeightMethod {
        match self.engine {
            Engine::TwoState { .. } => WeightMethod::ClosedForm,
            Engine::Spectral { .. } => WeightMethod::Spectral,
            Engine::Propagator { .. } => WeightMethod::Propagator,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        self.method() == WeightMethod::ClosedForm
    }

    /// Nonzero eigenvalues of the coupling matrix.
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// `a[k][l]` in `phi_k(s) = pi_k + sum_l a[k][l] e^{lambda_l s}` (empty without a spectral form).
    pub fn coefficients(&self) -> &[Vec<Complex64>] {
        &self.coefficients
    }

    /// Limit weights as `s -> -infinity`.
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Smallest real part among nonzero eigenvalues.
    pub fn decay_rate(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    /// Bound on `|phi_k(s) - pi_k|` for `s <= 0`.
    pub fn tail_bound(&self, k: usize, s: f64) -> f64 {
        let mu = self.decay_rate();
        match self.engine {
            Engine::Propagator { .. } => self.tail_constant[k] * (0.5 * mu * s).exp(),
            _ => {
                let b: f64 = self.coefficients[k].iter().map(|a| a.norm()).sum();
                b * (mu * s).exp()
            }
        }
    }

    /// Bound on `|phi_i(s) - phi_j(s) - (pi_i - pi_j)|` for `s <= 0`, with its decay rate.
    fn gap_tail(&self, i: usize, j: usize) -> (f64, f64) {
        let mu = self.decay_rate();
        match self.engine {
            Engine::Propagator { .. } => (self.tail_constant[i] + self.tail_constant[j], 0.5 * mu),
            _ => {
                let b = self.coefficients[i]
                    .iter()
                    .zip(&self.coefficients[j])
                    .map(|(a, c)| (a - c).norm())
                    .sum();
                (b, mu)
            }
        }
    }

    /// `phi(s)` for `s <= 0`.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        debug_assert!(s <= 0.0);
        let m = self.m();
        match &self.engine {
            Engine::TwoState { c1, c2 } => {
                let rate = [*c1, *c2];
                let (ci, cj) = (rate[self.start], rate[1 - self.start]);
                let sum = c1 + c2;
                let e = (sum * s).exp();
                let mut out = vec![0.0; 2];
                out[self.start] = (cj + ci * e) / sum;
                out[1 - self.start] = ci * (1.0 - e) / sum;
                out
            }
            Engine::Spectral { lambda, v, vinv } => {
                if s == 0.0 {
                    return self.unit_row();
                }
                let ex: Vec<Complex64> = lambda
                    .iter()
                    .enumerate()
                    .map(|(l, z)| v[(self.start, l)] * (z * s).exp())
                    .collect();
                (0..m)
                    .map(|k| {
                        ex.iter()
                            .enumerate()
                            .map(|(l, e)| e * vinv[(l, k)])
                            .sum::<Complex64>()
                            .re
                    })
                    .collect()
            }
            Engine::Propagator { powers } => {
                let steps = (-s / PROPAGATOR_STEP).floor() as u64;
                let rest = -s - steps as f64 * PROPAGATOR_STEP;
                let mut row = self.unit_row();
                for (k, p) in powers.iter().enumerate() {
                    if steps >> k & 1 == 1 {
                        row = times(&row, p);
                    }
                }
                if rest > 0.0 {
                    row = times(&row, &expm(&(self.coupling.to_matrix() * -rest)));
                }
                debug_assert_eq!(row.len(), m);
                row
            }
        }
    }

    /// Weights started from another state of the same coupling.
    pub fn from_state(&self, k: usize) -> Result<Self> {
        match self.engine {
            Engine::TwoState { c1, c2 } => Self::two_state(c1, c2, k),
            _ => Self::general(&self.coupling, k),
        }
    }
}

/// All `m` weight systems of a coupling: closed form when `m = 2`, general otherwise.
pub fn weight_family(coupling: &CouplingMatrix) -> Result<Vec<WeightSystem>> {
    let m = coupling.size();
    if m == 2 && coupling.get(0, 0) > 0.0 && coupling.get(1, 1) > 0.0 {
        let (c1, c2) = (coupling.get(0, 0), coupling.get(1, 1));
        if coupling.get(0, 1) == -c1 && coupling.get(1, 0) == -c2 {
            return (0..2).map(|i| WeightSystem::two_state(c1, c2, i)).collect();
        }
    }
    (0..m).map(|i| WeightSystem::general(coupling, i)).collect()
}

/// `weights_two_state` with one-based-free indexing: `i` in {0, 1}.
pub fn weights_two_state(c1: f64, c2: f64, i: usize) -> Result<WeightSystem> {
    WeightSystem::two_state(c1, c2, i)
}

pub fn weights_general(coupling: &CouplingMatrix, i: usize) -> Result<WeightSystem> {
    WeightSystem::general(coupling, i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapIntegral {
    pub value: f64,
    /// Integration window `[-truncation, 0]`.
    pub truncation: f64,
    /// Bound on the neglected tail.
    pub tail_bound: f64,
    pub step: f64,
}

/// Default quadrature step of [`weight_gap_integral`].
pub const GAP_STEP: f64 = 1e-4;

/// `int_{-inf}^0 |phi_i - phi_j| ds` by composite trapezoid on a window chosen from the decay rate.
pub fn weight_gap_integral(w: &WeightSystem, i: usize, j: usize) -> GapIntegral {
    weight_gap_integral_with_step(w, i, j, GAP_STEP)
}

pub fn weight_gap_integral_with_step(
    w: &WeightSystem,
    i: usize,
    j: usize,
    step: f64,
) -> GapIntegral {
    if i == j {
        return GapIntegral {
            value: 0.0,
            truncation: 0.0,
            tail_bound: 0.0,
            step,
        };
    }
    let pi = w.stationary();
    if (pi[i] - pi[j]).abs() > 1e-12 {
        return GapIntegral {
            value: f64::INFINITY,
            truncation: f64::INFINITY,
            tail_bound: f64::INFINITY,
            step,
        };
    }
    let (b, mu) = w.gap_tail(i, j);
    // tail: int_{-inf}^{-S} b e^{mu s} ds = b e^{-mu S} / mu <= 1e-10
    let target = 1e-10;
    let truncation = if b <= 0.0 {
        1.0
    } else {
        ((b / (mu * target)).ln() / mu).max(1.0)
    };
    let n = (truncation / step).ceil() as usize;
    let h = truncation / n as f64;
    let f = |s: f64| {
        let phi = w.eval(s);
        (phi[i] - phi[j]).abs()
    };
    let vals: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|k| f(-(k as f64) * h))
        .collect();
    let mut sum = 0.5 * (vals[0] + vals[n]);
    for v in &vals[1..n] {
        sum += v;
    }
    GapIntegral {
        value: sum * h,
        truncation,
        tail_bound: b * (-mu * truncation).exp() / mu,
        step: h,
    }
}

/// A backward path of the switching chain on `[-t, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub horizon: f64,
    /// Jump times, decreasing, in `(-t, 0)`.
    pub jump_times: Vec<f64>,
    /// `states[0]` is the state at 0; `states[k + 1]` holds after `jump_times[k]`.
    pub states: Vec<usize>,
    pub seed: u64,
}

impl ChainSample {
    pub fn state_at(&self, s: f64) -> usize {
        let k = self.jump_times.iter().take_while(|&&tj| tj >= s).count();
        self.states[k]
    }

    pub fn end_state(&self) -> usize {
        *self.states.last().unwrap()
    }
}

/// Jump kernel of a coupling: holding rates and next-state distributions.
struct JumpKernel {
    rates: Vec<f64>,
    next: Vec<Option<(Vec<usize>, WeightedIndex<f64>)>>,
}

impl JumpKernel {
    fn new(c: &CouplingMatrix) -> Self {
        let m = c.size();
        let mut next = Vec::with_capacity(m);
        for k in 0..m {
            let targets: Vec<usize> = (0..m).filter(|&j| j != k && c.get(k, j) < 0.0).collect();
            let w: Vec<f64> = targets.iter().map(|&j| -c.get(k, j)).collect();
            next.push(WeightedIndex::new(&w).ok().map(|d| (targets, d)));
        }
        Self {
            rates: (0..m).map(|k| c.rate(k)).collect(),
            next,
        }
    }

    /// Forward exponential-clock run on `[0, t]`; returns (jump times, states visited).
    fn run<R: Rng>(
        &self,
        start: usize,
        t: f64,
        rng: &mut R,
        record: bool,
    ) -> (Vec<f64>, Vec<usize>, usize) {
        let mut state = start;
        let mut clock = 0.0;
        let mut times = Vec::new();
        let mut states = vec![start];
        loop {
            let rate = self.rates[state];
            let Some((targets, dist)) = &self.next[state] else {
                break;
            };
            if rate <= 0.0 {
                break;
            }
            let e: f64 = rng.sample(Exp1);
            clock += e / rate;
            if clock >= t {
                break;
            }
            state = targets[dist.sample(rng)];
            if record {
                times.push(clock);
                states.push(state);
            }
        }
        (times, states, state)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples the chain backward from state `i` at time 0 over `[-t, 0]`.
/// Seed contract: `ChaCha8Rng::seed_from_u64(seed)` on stream 0.
pub fn sample_chain(coupling: &CouplingMatrix, i: usize, t: f64, seed: u64) -> Result<ChainSample> {
    if !(t > 0.0) {
        return Err(Error::Problem(format!(
            "chain horizon must be positive, got {t}"
        )));
    }
    sample_chain_stream(coupling, i, t, seed, 0)
}

/// As [`sample_chain`], on an explicit RNG stream (sample index).
pub fn sample_chain_stream(
    coupling: &CouplingMatrix,
    i: usize,
    t: f64,
    seed: u64,
    stream: u64,
) -> Result<ChainSample> {
    let kernel = JumpKernel::new(coupling);
    let mut rng = stream_rng(seed, stream);
    let (times, states, _) = kernel.run(i, t, &mut rng, true);
    Ok(ChainSample {
        horizon: t,
        jump_times: times.iter().map(|&tau| -tau).collect(),
        states,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

/// End-state counts of `n` chains from `i` over `[-t, 0]`; sample `k` uses stream `k`.
pub fn end_state_counts(
    coupling: &CouplingMatrix,
    i: usize,
    t: f64,
    n: usize,
    seed: u64,
) -> Vec<usize> {
    let kernel = JumpKernel::new(coupling);
    let ends: Vec<usize> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            kernel.run(i, t, &mut rng, false).2
        })
        .collect();
    let mut counts = vec![0usize; coupling.size()];
    for e in ends {
        counts[e] += 1;
    }
    counts
}

/// Monte Carlo estimate of `E_i[psi_{nu(-t)}(x)]` with its standard error.
pub fn mc_expectation(
    coupling: &CouplingMatrix,
    i: usize,
    t: f64,
    grid: &TorusGrid,
    fields: &[Vec<f64>],
    x: Point,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::Problem("need at least one sample".into()));
    }
    let psi: Vec<f64> = fields.iter().map(|f| grid.interpolate(f, x)).collect();
    let counts = end_state_counts(coupling, i, t, n_samples, seed);
    let n = n_samples as f64;
    // offset by psi_0 so equal fields give psi_0 exactly
    let base = psi[0];
    let mean_off: f64 = counts
        .iter()
        .zip(&psi)
        .map(|(&c, &p)| c as f64 / n * (p - base))
        .sum();
    let estimate = base + mean_off;
    let var = if n_samples > 1 {
        counts
            .iter()
            .zip(&psi)
            .map(|(&c, &p)| c as f64 * (p - base - mean_off).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate,
        stderr: (var / n).sqrt(),
        n_samples,
    })
}

/// Deterministic counterpart `sum_k phi_k(-t) psi_k(x)`.
pub fn weighted_expectation(
    w: &WeightSystem,
    t: f64,
    grid: &TorusGrid,
    fields: &[Vec<f64>],
    x: Point,
) -> f64 {
    w.eval(-t)
        .iter()
        .zip(fields)
        .map(|(p, f)| p * grid.interpolate(f, x))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_matches_lemma_value() {
        let w = weights_two_state(1.0, 1.0, 0).unwrap();
        let p = w.eval(-0.5);
        let e = (-1f64).exp();
        assert!((p[0] - (1.0 + e) / 2.0).abs() < 1e-15);
        assert!((p[1] - (1.0 - e) / 2.0).abs() < 1e-15);
        assert!((p[0] - 0.68394).abs() < 1e-5);
    }

    #[test]
    fn two_state_general_rates() {
        let w = weights_two_state(2.0, 1.0, 0).unwrap();
        let p = w.eval(-1.0);
        assert!((p[0] - (1.0 + 2.0 * (-3f64).exp()) / 3.0).abs() < 1e-15);
        assert!((p[0] - 0.36653).abs() < 1e-5);
        assert_eq!(w.eval(0.0), vec![1.0, 0.0]);
        assert_eq!(
            weights_two_state(2.0, 1.0, 1).unwrap().eval(0.0),
            vec![0.0, 1.0]
        );
    }

    #[test]
    fn rejects_non_positive_rates() {
        assert!(weights_two_state(0.0, 1.0, 0).is_err());
        assert!(weights_two_state(1.0, -1.0, 0).is_err());
    }

    #[test]
    fn general_path_matches_closed_form() {
        let c = CouplingMatrix::two_state(1.0, 1.0).unwrap();
        let g = weights_general(&c, 0).unwrap();
        assert_eq!(g.method(), WeightMethod::Spectral);
        let w = weights_two_state(1.0, 1.0, 0).unwrap();
        for s in [-2.0, -1.0, -0.1] {
            let (a, b) = (g.eval(s), w.eval(s));
            for k in 0..2 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cyclic_equidistributes() {
        let c = CouplingMatrix::cyclic(3).unwrap();
        let w = weights_general(&c, 0).unwrap();
        assert_eq!(w.eval(0.0), vec![1.0, 0.0, 0.0]);
        for p in w.eval(-10.0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-3);
        }
        // eigenvalues 3/2 +- i sqrt(3)/2
        assert!((w.decay_rate() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn expm_matches_spectral_on_cyclic() {
        let c = CouplingMatrix::cyclic(3).unwrap();
        let e = expm(&(c.to_matrix() * -2.0));
        for i in 0..3 {
            let w = weights_general(&c, i).unwrap().eval(-2.0);
            for k in 0..3 {
                assert!((e[(i, k)] - w[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_reducible_and_bad_spectrum() {
        let block = CouplingMatrix::new(vec![
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!(weights_general(&block, 0).is_err());
    }

    #[test]
    fn repeated_eigenvalue_stays_spectral() {
        let c = CouplingMatrix::new(vec![
            vec![2.0, -1.0, -1.0],
            vec![-1.0, 2.0, -1.0],
            vec![-1.0, -1.0, 2.0],
        ])
        .unwrap();
        let w = weights_general(&c, 0).unwrap();
        // symmetric, so diagonalizable despite the double eigenvalue 3
        assert_eq!(w.method(), WeightMethod::Spectral);
        let e = expm(&(c.to_matrix() * -0.7));
        let p = w.eval(-0.7);
        for k in 0..3 {
            assert!((e[(0, k)] - p[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn propagator_agrees_with_spectral() {
        let c = CouplingMatrix::cyclic(3).unwrap();
        let p = WeightSystem::propagator(&c, 1).unwrap();
        let w = weights_general(&c, 1).unwrap();
        assert_eq!(p.method(), WeightMethod::Propagator);
        for s in [-0.0005, -0.3, -2.5, -7.0] {
            let (a, b) = (p.eval(s), w.eval(s));
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-11);
                assert!((a[k] - 1.0 / 3.0).abs() <= p.tail_bound(k, s) + 1e-12);
            }
        }
    }

    #[test]
    fn gap_integral_two_state_is_half() {
        let w = weights_two_state(1.0, 1.0, 0).unwrap();
        let g = weight_gap_integral(&w, 0, 1);
        assert!((g.value - 0.5).abs() < 1e-8, "{g:?}");
        assert!(g.tail_bound < 1e-9);
        assert_eq!(weight_gap_integral(&w, 1, 1).value, 0.0);
    }

    #[test]
    fn short_chains_rarely_jump() {
        let c = CouplingMatrix::two_state(1.0, 1.0).unwrap();
        let jumped = (0..10_000)
            .filter(|&k| !sample_chain(&c, 0, 1e-6, k).unwrap().jump_times.is_empty())
            .count();
        assert!(jumped <= 1);
    }

    #[test]
    fn chain_paths_are_well_formed() {
        let c = CouplingMatrix::cyclic(3).unwrap();
        for seed in 0..200 {
            let p = sample_chain(&c, 1, 5.0, seed).unwrap();
            assert_eq!(p.states[0], 1);
            assert_eq!(p.states.len(), p.jump_times.len() + 1);
            for w in p.jump_times.windows(2) {
                assert!(w[0] > w[1]);
            }
            for t in &p.jump_times {
                assert!(*t < 0.0 && *t > -5.0);
            }
            for s in p.states.windows(2) {
                assert_ne!(s[0], s[1]);
            }
            assert_eq!(p.state_at(0.0), 1);
            assert_eq!(p.state_at(-5.0), p.end_state());
        }
    }

    #[test]
    fn mc_with_equal_fields_is_exact() {
        let c = CouplingMatrix::two_state(1.0, 1.0).unwrap();
        let grid = TorusGrid::new(1, 8).unwrap();
        let f = grid.sample(|x| 0.1 + x[0]);
        let est = mc_expectation(
            &c,
            0,
            1.0,
            &grid,
            &[f.clone(), f.clone()],
            [0.3, 0.0],
            1000,
            7,
        )
        .unwrap();
        assert_eq!(est.estimate, grid.interpolate(&f, [0.3, 0.0]));
        assert_eq!(est.stderr, 0.0);
    }
}
