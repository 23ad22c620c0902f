use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hjswitch::battery::{run_battery, SuiteConfig, DEFAULT_SEED, DEFAULT_SUITE};
use hjswitch::curves::{
    along_curve_identities, lipschitz_audit, stability_audit, CurveExtractor, DEFAULT_DELTA0,
};
use hjswitch::ergodic::{convergence_audit_run, ergodic_from_run, Tolerances};
use hjswitch::io::{value_field_table, write_json, write_text, Cell, CsvTable, RunManifest};
use hjswitch::model::{problem_from_toml, validate, CouplingMatrix, ProblemConfig};
use hjswitch::solver::{crosscheck, solve, SchemeParams};
use hjswitch::weights::{mc_expectation, weight_family, weighted_expectation};
use hjswitch::Error;

#[derive(Parser)]
#[command(
    name = "hjswitch",
    version,
    about = "Weakly coupled Hamilton-Jacobi systems on the torus"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Problem file (suite file for `battery`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Random seed (default: the suite's, else 20240917).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Multiplies every scheme-dependent tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Switching weights as CSV plus a Monte Carlo comparison.
    Weights {
        #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
        s_min: f64,
        #[arg(long, default_value_t = 0.01)]
        s_step: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Semi-Lagrangian value function.
    Solve {
        /// Time between written snapshots.
        #[arg(long, default_value_t = 1.0)]
        snapshot_every: f64,
    },
    /// Semi-Lagrangian vs Lax-Friedrichs sup-difference table.
    Crosscheck {
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Ergodic constant and ergodic functions.
    Ergodic,
    /// Distance to the asymptotic profile on a time ladder.
    Converge,
    /// Extracted curve with along-curve audits.
    Curve {
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        #[arg(long, default_value_t = 0.0)]
        y: f64,
        /// Start state, 1-based.
        #[arg(long, default_value_t = 1)]
        state: usize,
        #[arg(long, default_value_t = 1.0)]
        window: f64,
    },
    /// Every check over a suite of problems; exit status 0 iff all pass.
    Battery,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Weights { .. } => "weights",
            Command::Solve { .. } => "solve",
            Command::Crosscheck { .. } => "crosscheck",
            Command::Ergodic => "ergodic",
            Command::Converge => "converge",
            Command::Curve { .. } => "curve",
            Command::Battery => "battery",
        }
    }
}

struct Loaded {
    cfg: ProblemConfig,
    params: SchemeParams,
    tolerances: Tolerances,
}

fn load_problem(path: Option<&Path>, manifest: &mut RunManifest, tol_scale: f64) -> Result<Loaded> {
    let path = path.context("--config is required for this subcommand")?;
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    *manifest = manifest.clone().with_config(path, &bytes);
    let text = String::from_utf8(bytes).context("config is not utf-8")?;
    let cfg = problem_from_toml(&text)?;
    let report = validate(&cfg.spec);
    if !report.accepted() {
        let failures: Vec<String> = report
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail.clone().unwrap_or_default()))
            .collect();
        bail!("problem rejected: {}", failures.join("; "));
    }
    let params = SchemeParams::from_config(&cfg);
    let tolerances = Tolerances::for_spec(&cfg.spec, &params).scaled(tol_scale);
    manifest.parameters = serde_json::to_value(&params)?;
    Ok(Loaded {
        cfg,
        params,
        tolerances,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::UnknownPreset(_) | Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    if !(g.tol_scale > 0.0) {
        bail!("--tol-scale must be positive");
    }
    let mut manifest = RunManifest::new(cli.command.name());
    let out = g.out.clone();
    let start = Instant::now();
    let mut summary = String::new();
    let code = match &cli.command {
        Command::Weights {
            s_min,
            s_step,
            samples,
        } => {
            let worst = cmd_weights(g, &mut manifest, *s_min, *s_step, *samples)?;
            writeln!(
                summary,
                "largest |z| of the Monte Carlo comparison: {worst:.3}"
            )?;
            ExitCode::SUCCESS
        }
        Command::Solve { snapshot_every } => {
            let l = load_problem(g.config.as_deref(), &mut manifest, g.tol_scale)?;
            let t0 = Instant::now();
            let vf = solve(&l.cfg.spec, &l.params)?;
            manifest.time("solve", t0.elapsed().as_secs_f64());
            manifest.warnings.extend(vf.warnings.iter().cloned());
            let stride = ((snapshot_every / l.params.time_step).round() as usize).max(1);
            for (n, t) in vf.times.iter().enumerate() {
                if n % stride == 0 || n + 1 == vf.len() {
                    value_field_table(&vf, n).write(&out.join(format!("u_t{t:011.6}.csv")))?;
                }
            }
            ExitCode::SUCCESS
        }
        Command::Crosscheck { horizon } => {
            let l = load_problem(g.config.as_deref(), &mut manifest, g.tol_scale)?;
            let spec = match horizon {
                Some(h) => l.cfg.spec.with_horizon(*h),
                None => l.cfg.spec.clone(),
            };
            let t0 = Instant::now();
            let cc = crosscheck(&spec, &l.params)?;
            manifest.time("crosscheck", t0.elapsed().as_secs_f64());
            let mut t = CsvTable::new(["t", "sup_difference"]);
            for r in &cc.rows {
                t.push(vec![r.time.into(), r.sup_difference.into()]);
            }
            t.write(&out.join("crosscheck.csv"))?;
            let k = spec.constants().scale;
            let tol = 5.0 * (spec.grid.spacing() + l.params.time_step) * k * g.tol_scale;
            #[derive(Serialize)]
            struct Summary {
                max_difference: f64,
                tolerance: f64,
                lf_substeps: usize,
                passed: bool,
            }
            write_json(
                &out.join("crosscheck.json"),
                &Summary {
                    max_difference: cc.max_difference,
                    tolerance: tol,
                    lf_substeps: cc.lf_substeps,
                    passed: cc.max_difference <= tol,
                },
            )?;
            writeln!(
                summary,
                "max sup-difference {:.6e} (tolerance {tol:.6e})",
                cc.max_difference
            )?;
            ExitCode::SUCCESS
        }
        Command::Ergodic => {
            let l = load_problem(g.config.as_deref(), &mut manifest, g.tol_scale)?;
            let t0 = Instant::now();
            let long = solve(&l.cfg.spec, &l.params)?;
            manifest.time("long_run", t0.elapsed().as_secs_f64());
            let t0 = Instant::now();
            let es = ergodic_from_run(&l.cfg.spec, &l.params, &long, l.tolerances)?;
            manifest.time("relative_value_iteration", t0.elapsed().as_secs_f64());
            if !es.converged {
                manifest.warnings.push(format!(
                    "relative value iteration stopped after {} iterations (increment {:.3e})",
                    es.iterations, es.final_increment
                ));
            }
            #[derive(Serialize)]
            struct Summary {
                c_slope: f64,
                c_relative_value: f64,
                tol_c: f64,
                converged: bool,
                iterations: usize,
                max_residual: f64,
                tol_residual: f64,
            }
            write_json(
                &out.join("ergodic.json"),
                &Summary {
                    c_slope: es.c_slope,
                    c_relative_value: es.c_relative_value,
                    tol_c: l.tolerances.c,
                    converged: es.converged,
                    iterations: es.iterations,
                    max_residual: es.max_residual,
                    tol_residual: l.tolerances.residual,
                },
            )?;
            let grid = l.cfg.spec.grid;
            let mut header = vec!["x_index".to_string(), "x".to_string()];
            if grid.dim() == 2 {
                header.push("y".into());
            }
            header.extend((1..=es.m()).map(|k| format!("v_{k}")));
            let mut t = CsvTable::new(header);
            for node in 0..grid.len() {
                let x = grid.coords(node);
                let mut row: Vec<Cell> = vec![node.into(), x[0].into()];
                if grid.dim() == 2 {
                    row.push(x[1].into());
                }
                row.extend(es.v.iter().map(|v| Cell::from(v[node])));
                t.push(row);
            }
            t.write(&out.join("v.csv"))?;
            writeln!(
                summary,
                "c_slope {:.10} c_relative_value {:.10}",
                es.c_slope, es.c_relative_value
            )?;
            ExitCode::SUCCESS
        }
        Command::Converge => {
            let l = load_problem(g.config.as_deref(), &mut manifest, g.tol_scale)?;
            let t0 = Instant::now();
            let long = solve(&l.cfg.spec, &l.params)?;
            let es = ergodic_from_run(&l.cfg.spec, &l.params, &long, l.tolerances)?;
            let audit = convergence_audit_run(
                &es,
                &long,
                2.0,
                l.tolerances.convergence,
                l.params.time_step,
            );
            manifest.time("converge", t0.elapsed().as_secs_f64());
            let mut t = CsvTable::new(["t", "d"]);
            for r in &audit.ladder {
                t.push(vec![r.time.into(), r.distance.into()]);
            }
            t.write(&out.join("convergence.csv"))?;
            write_json(&out.join("convergence.json"), &audit)?;
            writeln!(
                summary,
                "d({}) = {:.6e} (tolerance {:.6e}), decreasing: {}",
                long.final_time(),
                audit.final_distance,
                audit.tolerance,
                audit.decreasing
            )?;
            if audit.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Curve {
            x,
            y,
            state,
            window,
        } => {
            let l = load_problem(g.config.as_deref(), &mut manifest, g.tol_scale)?;
            let spec = &l.cfg.spec;
            if *state == 0 || *state > spec.m() {
                bail!("--state must be in 1..={}", spec.m());
            }
            let i = state - 1;
            let t0 = Instant::now();
            let long = solve(spec, &l.params)?;
            let es = ergodic_from_run(spec, &l.params, &long, l.tolerances)?;
            manifest.time("ergodic", t0.elapsed().as_secs_f64());
            let t0 = Instant::now();
            let ex = CurveExtractor::new(&es, spec, &l.params)?;
            let curve = ex.extract([*x, *y], i, *window)?;
            manifest.time("extract", t0.elapsed().as_secs_f64());
            if curve.untrusted {
                manifest.warnings.push(format!(
                    "{} steps hit the velocity bound; curve untrusted",
                    curve.boundary_steps
                ));
            }
            write_curve_csv(&curve, spec.dim(), &out.join("curve.csv"))?;
            match along_curve_identities(&curve, &es, spec) {
                Ok(r) => write_json(&out.join("identities.json"), &r)?,
                Err(e) => manifest.warnings.push(e.to_string()),
            }
            let mut stability = Vec::new();
            for tau in [1.0, 2.0] {
                let eps = tau / (window - tau);
                if *window > tau && *window <= long.final_time() && eps <= DEFAULT_DELTA0 {
                    stability.push(stability_audit(
                        &curve,
                        &long,
                        &es,
                        spec,
                        tau,
                        *window,
                        DEFAULT_DELTA0,
                        l.tolerances.convergence,
                    )?);
                }
            }
            write_json(&out.join("stability.json"), &stability)?;
            write_json(&out.join("lipschitz.json"), &lipschitz_audit(&long, spec))?;
            writeln!(
                summary,
                "window defect {:.6e} (smooth steps {:.6e}), end point {:?}",
                curve.total_defect(),
                curve.smooth_defect(),
                curve.end()
            )?;
            ExitCode::SUCCESS
        }
        Command::Battery => {
            let (text, base) = match &g.config {
                Some(p) => {
                    let bytes =
                        std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    manifest = manifest.clone().with_config(p, &bytes);
                    (String::from_utf8(bytes)?, p.parent().map(Path::to_path_buf))
                }
                None => {
                    manifest.config_hash =
                        Some(hjswitch::io::config_hash(DEFAULT_SUITE.as_bytes()));
                    (DEFAULT_SUITE.to_string(), None)
                }
            };
            let mut suite = SuiteConfig::from_toml(&text)?;
            suite.tol_scale *= g.tol_scale;
            if let Some(seed) = g.seed {
                suite.seed = seed;
            }
            manifest.parameters = serde_json::to_value(&suite)?;
            manifest.seeds.insert("monte_carlo".into(), suite.seed);
            let t0 = Instant::now();
            let report = run_battery(&suite, base.as_deref(), Some(&out))?;
            for t in &report.timings {
                let check = t.check.map_or("setup", |k| k.name());
                match &t.problem {
                    Some(p) => manifest.time(&format!("{check}/{p}"), t.seconds),
                    None => manifest.time(check, t.seconds),
                }
            }
            manifest.time("battery", t0.elapsed().as_secs_f64());
            summary.push_str(&report.table());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    };
    manifest.time("total", start.elapsed().as_secs_f64());
    write_json(&out.join("manifest.json"), &manifest)?;
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(code)
}

fn cmd_weights(
    g: &GlobalOpts,
    manifest: &mut RunManifest,
    s_min: f64,
    s_step: f64,
    samples: usize,
) -> Result<f64> {
    if !(s_min < 0.0 && s_step > 0.0) {
        bail!("need --s-min < 0 and --s-step > 0");
    }
    let coupling = match &g.config {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            *manifest = manifest.clone().with_config(p, &bytes);
            problem_from_toml(std::str::from_utf8(&bytes)?)?
                .spec
                .coupling
        }
        None => CouplingMatrix::two_state(1.0, 1.0)?,
    };
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    manifest.seeds.insert("monte_carlo".into(), seed);
    let family = weight_family(&coupling)?;
    let m = coupling.size();
    let n = (-s_min / s_step).round() as usize;
    let t0 = Instant::now();
    for (i, w) in family.iter().enumerate() {
        let mut header = vec!["s".to_string()];
        header.extend((1..=m).map(|k| format!("phi_{k}")));
        let mut t = CsvTable::new(header);
        for k in 0..=n {
            let s = -(k as f64) * s_step;
            let mut row: Vec<Cell> = vec![s.into()];
            row.extend(w.eval(s).into_iter().map(Cell::from));
            t.push(row);
        }
        t.write(&g.out.join(format!("weights_state{}.csv", i + 1)))?;
    }
    manifest.time("tables", t0.elapsed().as_secs_f64());

    // E_i[psi_{nu(-t)}] for psi_k = k (1-based), a field that separates the states
    #[derive(Serialize)]
    struct McRow {
        state: usize,
        t: f64,
        estimate: f64,
        stderr: f64,
        closed_form: f64,
        z_score: f64,
    }
    let grid = hjswitch::grid::TorusGrid::new(1, 4)?;
    let fields: Vec<Vec<f64>> = (0..m).map(|k| vec![(k + 1) as f64; grid.len()]).collect();
    let t0 = Instant::now();
    let mut rows = Vec::new();
    let mut stream = 0u64;
    for (i, w) in family.iter().enumerate() {
        for t in [0.2, 0.5, 1.0, 2.0, 4.0] {
            let mc = mc_expectation(
                &coupling,
                i,
                t,
                &grid,
                &fields,
                [0.0, 0.0],
                samples,
                seed.wrapping_add(stream),
            )?;
            stream += 1;
            let exact = weighted_expectation(w, t, &grid, &fields, [0.0, 0.0]);
            rows.push(McRow {
                state: i + 1,
                t,
                estimate: mc.estimate,
                stderr: mc.stderr,
                closed_form: exact,
                z_score: if mc.stderr > 0.0 {
                    (mc.estimate - exact) / mc.stderr
                } else {
                    0.0
                },
            });
        }
    }
    manifest.time("monte_carlo", t0.elapsed().as_secs_f64());
    write_json(&g.out.join("monte_carlo.json"), &rows)?;
    Ok(rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max))
}

fn write_curve_csv(curve: &hjswitch::curves::Curve, dim: usize, path: &Path) -> Result<()> {
    let m = curve.weights[0].len();
    let mut header = vec!["s".to_string(), "x".to_string()];
    if dim == 2 {
        header.push("y".into());
    }
    header.push("q_x".into());
    if dim == 2 {
        header.push("q_y".into());
    }
    header.extend((1..=m).map(|k| format!("L_{k}")));
    header.extend((1..=m).map(|k| format!("phi_{k}")));
    header.push("defect".into());
    header.push("kink".into());
    let mut t = CsvTable::new(header);
    // the last node has no step of its own; its step columns repeat nothing and are left empty
    for n in 0..=curve.steps() {
        let p = curve.points[n];
        let mut row: Vec<Cell> = vec![curve.times[n].into(), p[0].into()];
        if dim == 2 {
            row.push(p[1].into());
        }
        if n < curve.steps() {
            let q = curve.velocities[n];
            row.push(q[0].into());
            if dim == 2 {
                row.push(q[1].into());
            }
            row.extend(curve.lagrangian[n].iter().map(|v| Cell::from(*v)));
        } else {
            row.extend(std::iter::repeat_n(Cell::Text(String::new()), dim + m));
        }
        row.extend(curve.weights[n].iter().map(|v| Cell::from(*v)));
        if n < curve.steps() {
            row.push(curve.step_defects[n].into());
            row.push(curve.kink_steps[n].into());
        } else {
            row.push(Cell::Text(String::new()));
            row.push(Cell::Text(String::new()));
        }
        t.push(row);
    }
    t.write(path)?;
    Ok(())
}
