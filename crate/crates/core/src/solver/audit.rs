//! Audits of the dynamic programming principle on a computed value field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Point;
use crate::model::ProblemSpec;
use crate::solver::{DppOperator, SchemeParams, ValueField, VelocitySearch};
use crate::weights::weight_family;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub node: usize,
    pub state: usize,
    pub value: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: f64,
    pub time: f64,
    pub max_discrepancy: f64,
    pub probes: Vec<ProbeResult>,
}

fn probe_nodes(len: usize, n_probe: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_probe).map(|_| rng.random_range(0..len)).collect()
}

/// Re-minimises one window of length `h` ending at `t` against the stored field at `t - h`.
pub fn dpp_window_check(
    vf: &ValueField,
    spec: &ProblemSpec,
    params: &SchemeParams,
    h: f64,
    t: f64,
    n_probe: usize,
    seed: u64,
) -> Result<WindowReport> {
    if !(h > 0.0 && h <= t + 1e-12) {
        return Err(Error::Problem(format!("need 0 < h <= t, got h={h}, t={t}")));
    }
    let now = vf.time_index(t)?;
    let before = vf.time_index(t - h)?;
    let op = DppOperator::new(spec, params, h, 0.0)?;
    let mut probes = Vec::new();
    for node in probe_nodes(vf.grid.len(), n_probe, seed) {
        let x = vf.grid.coords(node);
        for i in 0..vf.m() {
            let r = op.minimize_at(vf.at(before), x, i);
            probes.push(ProbeResult {
                node,
                state: i,
                value: r.value,
                reference: vf.at(now)[i][node],
            });
        }
    }
    let max_discrepancy = probes
        .iter()
        .map(|p| (p.value - p.reference).abs())
        .fold(0.0, f64::max);
    Ok(WindowReport {
        window: h,
        time: t,
        max_discrepancy,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSegmentReport {
    pub time: f64,
    /// `min (J - u)` over probes: negative values mean a curve beat the computed infimum.
    pub min_margin: f64,
    pub probes: Vec<ProbeResult>,
}

/// Cost of the two-segment curve ending at `x` with velocity `q1` on `[-t/2, 0]` and `q2`
/// on `[-t, -t/2]`, integrated with `n` midpoint nodes per segment.
fn two_segment_cost(
    spec: &ProblemSpec,
    lag: &[crate::model::LagrangianSpec],
    weights: &dyn Fn(f64) -> Vec<f64>,
    g: &[Vec<f64>],
    x: Point,
    t: f64,
    q1: Point,
    q2: Point,
    n: usize,
) -> f64 {
    let half = 0.5 * t;
    let ds = half / n as f64;
    let corner = [x[0] - half * q1[0], x[1] - half * q1[1]];
    let mut run = 0.0;
    for seg in 0..2 {
        let (origin, q, offset) = if seg == 0 {
            (x, q1, 0.0)
        } else {
            (corner, q2, half)
        };
        for j in 0..n {
            let s_local = -(j as f64 + 0.5) * ds;
            let s = s_local - offset;
            let y = [origin[0] + s_local * q[0], origin[1] + s_local * q[1]];
            let w = weights(s);
            let st = spec.grid.stencil(y);
            for (k, l) in lag.iter().enumerate() {
                run += w[k] * (l.kinetic(q) - st.apply(l.potential())) * ds;
            }
        }
    }
    let end = [corner[0] - half * q2[0], corner[1] - half * q2[1]];
    let w = weights(-t);
    let st = spec.grid.stencil(end);
    run + (0..g.len()).map(|k| w[k] * st.apply(&g[k])).sum::<f64>()
}

/// Upper-bound check over the full window: every two-segment curve must cost at least
/// the computed value (minus scheme error), since the value is an infimum.
pub fn two_segment_bound(
    vf: &ValueField,
    spec: &ProblemSpec,
    params: &SchemeParams,
    t: f64,
    n_probe: usize,
    seed: u64,
) -> Result<TwoSegmentReport> {
    let now = vf.time_index(t)?;
    let lag = spec.lagrangians()?;
    let family = weight_family(&spec.coupling)?;
    let g = vf.at(0);
    let dim = spec.dim();
    let quad = 200;
    let mut probes = Vec::new();
    for node in probe_nodes(vf.grid.len(), n_probe, seed) {
        let x = vf.grid.coords(node);
        for (i, w) in family.iter().enumerate() {
            let weights = |s: f64| w.eval(s);
            let cost = |q1: Point, q2: Point| {
                two_segment_cost(spec, &lag, &weights, g, x, t, q1, q2, quad)
            };
            let best = if dim == 1 {
                let search = VelocitySearch {
                    dim: 2,
                    bound: params.velocity_bound,
                    samples: 41,
                    rounds: 3,
                };
                search.minimize(|q| cost([q[0], 0.0], [q[1], 0.0])).value
            } else {
                let search = params.search(dim);
                let mut q1 = [0.0; 2];
                let mut q2 = [0.0; 2];
                let mut v = cost(q1, q2);
                for _ in 0..3 {
                    let r = search.minimize(|q| cost(q, q2));
                    if r.value < v {
                        v = r.value;
                        q1 = r.q;
                    }
                    let r = search.minimize(|q| cost(q1, q));
                    if r.value < v {
                        v = r.value;
                        q2 = r.q;
                    }
                }
                v
            };
            probes.push(ProbeResult {
                node,
                state: i,
                value: best,
                reference: vf.at(now)[i][node],
            });
        }
    }
    let min_margin = probes
        .iter()
        .map(|p| p.value - p.reference)
        .fold(f64::INFINITY, f64::min);
    Ok(TwoSegmentReport {
        time: t,
        min_margin,
        probes,
    })
}
