//! TOML problem files.
//!
//! ```toml
//! name = "asymmetric-cosine"
//!
//! [grid]
//! dim = 1
//! points = 128
//!
//! [time]
//! horizon = 20.0
//! step = 0.00390625
//! # velocity_bound = 8.0        (optional; default from the constants ledger)
//!
//! [coupling]
//! matrix = [[1.0, -1.0], [-1.0, 1.0]]
//!
//! [[state]]
//! kappa = 1.0
//! potential = "cosine(1, 1, 0)"     # amplitude, frequency, phase (in periods)
//! initial = "sine(0.3, 1, 0)"
//!
//! [[state]]
//! potential = [0.0, 0.1, ...]       # or inline samples, one per node
//! initial = "constant(0)"
//! [state.table]                     # optional: tabulated kinetic part instead of kappa
//! p_max = 4.0
//! values = [...]                    # points^dim samples on [-p_max, p_max]^dim
//! coercivity_margin = 1.0
//!
//! [scheme]                          # optional
//! velocity_samples = 33
//! lf_dissipation = [2.0, 2.0]
//! ```
//! In two dimensions the presets are averaged over the axes.

use std::f64::consts::PI;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{Field, TorusGrid};
use crate::model::{Axis, CouplingMatrix, HamiltonianSpec, ProblemSpec, Table};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FieldSource {
    Preset(String),
    Samples(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    dim: usize,
    points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeSection {
    horizon: f64,
    step: f64,
    velocity_bound: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingSection {
    matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableSection {
    p_max: f64,
    values: Vec<f64>,
    #[serde(default)]
    coercivity_margin: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateSection {
    kappa: Option<f64>,
    potential: FieldSource,
    initial: FieldSource,
    table: Option<TableSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeSection {
    velocity_samples: Option<usize>,
    lf_dissipation: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: Option<String>,
    grid: GridSection,
    time: TimeSection,
    coupling: CouplingSection,
    state: Vec<StateSection>,
    #[serde(default)]
    scheme: SchemeSection,
}

/// A parsed problem file: the spec plus optional scheme overrides.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub spec: ProblemSpec,
    pub velocity_samples: Option<usize>,
    pub lf_dissipation: Option<Vec<f64>>,
}

fn preset_args(text: &str) -> Result<(String, Vec<f64>)> {
    let text = text.trim();
    let (name, rest) = match text.find('(') {
        Some(k) => (&text[..k], &text[k + 1..]),
        None => return Ok((text.to_string(), Vec::new())),
    };
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| Error::Config(format!("unbalanced parentheses in `{text}`")))?;
    let args = inner
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{}` in `{text}`", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((name.trim().to_string(), args))
}

/// Samples a named preset (`cosine(a, f, phase)`, `sine(a, f, phase)`, `constant(c)`, `zero`).
pub fn parse_field_preset(grid: &TorusGrid, text: &str) -> Result<Field> {
    let (name, args) = preset_args(text)?;
    let arg = |k: usize, default: f64| args.get(k).copied().unwrap_or(default);
    let wave = |trig: fn(f64) -> f64| -> Field {
        let (a, f, ph) = (arg(0, 1.0), arg(1, 1.0), arg(2, 0.0));
        let d = grid.dim();
        grid.sample(|x| {
            (0..d)
                .map(|k| a * trig(2.0 * PI * (f * x[k] + ph)))
                .sum::<f64>()
                / d as f64
        })
    };
    match name.as_str() {
        "cosine" | "cos" if args.len() <= 3 => Ok(wave(f64::cos)),
        "sine" | "sin" if args.len() <= 3 => Ok(wave(f64::sin)),
        "constant" if args.len() == 1 => Ok(vec![args[0]; grid.len()]),
        "zero" if args.is_empty() => Ok(vec![0.0; grid.len()]),
        _ => Err(Error::UnknownPreset(text.to_string())),
    }
}

fn field(grid: &TorusGrid, src: &FieldSource, what: &str) -> Result<Field> {
    match src {
        FieldSource::Preset(s) => parse_field_preset(grid, s),
        FieldSource::Samples(v) => {
            if v.len() != grid.len() {
                Err(Error::Config(format!(
                    "{what}: {} samples for a grid of {} nodes",
                    v.len(),
                    grid.len()
                )))
            } else {
                Ok(v.clone())
            }
        }
    }
}

pub fn problem_from_toml(text: &str) -> Result<ProblemConfig> {
    let raw: RawProblem = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let grid = TorusGrid::new(raw.grid.dim, raw.grid.points)?;
    let coupling = CouplingMatrix::new(raw.coupling.matrix)?;
    let mut hams = Vec::new();
    let mut initial = Vec::new();
    for (k, st) in raw.state.iter().enumerate() {
        let v = field(&grid, &st.potential, &format!("state[{k}].potential"))?;
        let h = match (&st.table, st.kappa) {
            (Some(t), None) => {
                let per_axis = (t.values.len() as f64)
                    .powf(1.0 / grid.dim() as f64)
                    .round() as usize;
                if per_axis.pow(grid.dim() as u32) != t.values.len() || per_axis < 3 {
                    return Err(Error::Config(format!(
                        "state[{k}].table: {} values is not points^{}",
                        t.values.len(),
                        grid.dim()
                    )));
                }
                HamiltonianSpec::Tabulated {
                    kinetic: Table {
                        dim: grid.dim(),
                        axis: Axis::new(t.p_max, per_axis),
                        values: t.values.clone(),
                    },
                    potential: v,
                    coercivity_margin: t.coercivity_margin,
                }
            }
            (None, Some(kappa)) => HamiltonianSpec::quadratic(kappa, v),
            (None, None) => HamiltonianSpec::quadratic(1.0, v),
            (Some(_), Some(_)) => {
                return Err(Error::Config(format!(
                    "state[{k}]: give either kappa or a table, not both"
                )))
            }
        };
        hams.push(h);
        initial.push(field(&grid, &st.initial, &format!("state[{k}].initial"))?);
    }
    let spec = ProblemSpec::new(
        raw.name.unwrap_or_else(|| "problem".to_string()),
        grid,
        hams,
        coupling,
        initial,
        raw.time.horizon,
        raw.time.step,
        raw.time.velocity_bound,
    );
    Ok(ProblemConfig {
        spec,
        velocity_samples: raw.scheme.velocity_samples,
        lf_dissipation: raw.scheme.lf_dissipation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "demo"
[grid]
dim = 1
points = 8
[time]
horizon = 1.0
step = 0.125
[coupling]
matrix = [[1.0, -1.0], [-1.0, 1.0]]
[[state]]
kappa = 2.0
potential = "cosine(1, 1, 0)"
initial = "constant(0.5)"
[[state]]
potential = [0, 0, 0, 0, 0, 0, 0, 0]
initial = "zero"
"#;

    #[test]
    fn parses_presets_and_arrays() {
        let cfg = problem_from_toml(SAMPLE).unwrap();
        let s = &cfg.spec;
        assert_eq!(s.m(), 2);
        assert_eq!(s.grid.len(), 8);
        assert_eq!(s.hamiltonians[0].potential()[0], 1.0);
        assert!((s.hamiltonians[0].potential()[2]).abs() < 1e-15);
        assert_eq!(s.initial[0], vec![0.5; 8]);
        assert!(s.velocity_bound > 0.0);
    }

    #[test]
    fn unknown_preset_is_reported() {
        let bad = SAMPLE.replace("constant(0.5)", "gaussian(1)");
        assert!(matches!(
            problem_from_toml(&bad),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn phase_is_in_periods() {
        let g = TorusGrid::new(1, 12).unwrap();
        let a = parse_field_preset(&g, "cosine(1, 1, 0.25)").unwrap();
        let b = parse_field_preset(&g, "sine(-1, 1, 0)").unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
