//! `fts`: validate scenarios, run the closed loop, and write reproducible
//! CSV/JSON outputs.
//!
//! Exit codes: 0 on success, 1 when a scenario fails validation (including a
//! malformed config file), 2 on a runtime error.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use fts_core::bmaps::ReducedMaps;
use fts_core::controller::schedule_diagnostics;
use fts_core::model::{check_class_b, check_compatibility, compute_times, validate_spec, SystemSpec};
use fts_core::picard::Picard;
use fts_core::scenario::Scenario;
use fts_core::sim::{run_closed_loop, time_step, RunConfig};

#[derive(Parser)]
#[command(name = "fts", version, about = "Finite-time boundary stabilization scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check speed ordering, B(0) = 0, class B and the horizon.
    Validate(Common),
    /// Transit times, T_opt and the slack delta.
    Times(Common),
    /// Class-B minors and a reduced-map residual smoke test.
    Synth(SynthArgs),
    /// Closed-loop run; writes trajectory, controls and summary files.
    Simulate(SimulateArgs),
    /// Picard iteration on the closed loop.
    Picard(PicardArgs),
    /// Final norms over a grid of cell counts and amplitudes.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    /// Seed of the initial data.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of grid cells.
    #[arg(long)]
    cells: Option<usize>,
    /// Initial-data amplitude.
    #[arg(long)]
    amplitude: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Random points per elimination level.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Also write the auxiliary channel traces.
    #[arg(long)]
    aux: bool,
    /// Write every n-th recorded snapshot to the trajectory CSV.
    #[arg(long, default_value_t = 1)]
    every: usize,
}

#[derive(Args)]
struct PicardArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    iterations: Option<usize>,
    /// Also run the closed loop directly and report the gap to the last iterate.
    #[arg(long)]
    compare: bool,
}

#[derive(Args)]
struct SweepArgs {
    config: PathBuf,
    /// Comma-separated cell counts.
    #[arg(long, value_delimiter = ',', required = true)]
    cells: Vec<usize>,
    /// Comma-separated amplitudes.
    #[arg(long, value_delimiter = ',', required = true)]
    amplitudes: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write the matrix as CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome classes mapped to exit codes.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<fts_core::Error> for Failure {
    fn from(e: fts_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => validate(&a),
        Command::Times(a) => times(&a),
        Command::Synth(a) => synth(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Picard(a) => picard(&a),
        Command::Sweep(a) => sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("validation failed: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Loads a scenario; any problem with the file itself counts as invalid input.
fn load(path: &Path) -> Result<(Scenario, SystemSpec), Failure> {
    let sc = Scenario::load(path).map_err(|e| Failure::Invalid(e.into()))?;
    let spec = sc
        .spec()
        .with_context(|| format!("{}", path.display()))
        .map_err(Failure::Invalid)?;
    Ok((sc, spec))
}

fn apply(sc: &mut Scenario, o: &Overrides) {
    if let Some(s) = o.seed {
        sc.initial.seed = s;
    }
    if let Some(c) = o.cells {
        sc.run.cells = c;
    }
    if let Some(a) = o.amplitude {
        sc.initial.amplitude = a;
    }
}

fn emit(value: &impl Serialize, to: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match to {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn validate(a: &Common) -> Outcome {
    let (sc, spec) = load(&a.config)?;
    let report = validate_spec(&spec, sc.run.box_radius);
    let class_b = check_class_b(&spec)?;
    let times = compute_times(&spec)?;
    let horizon_ok = times.delta > 0.0;
    let passed = report.passed && class_b.member && horizon_ok;
    emit(
        &json!({
            "name": sc.name,
            "passed": passed,
            "spec": report,
            "class_b": class_b,
            "horizon": { "t": spec.horizon, "t_opt": times.t_opt, "passed": horizon_ok },
        }),
        a.json.as_deref(),
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Invalid(anyhow!("{} did not pass all checks", a.config.display())))
    }
}

fn times(a: &Common) -> Outcome {
    let (_, spec) = load(&a.config)?;
    let t = compute_times(&spec)?;
    emit(
        &json!({ "k": spec.k, "m": spec.m, "horizon": spec.horizon, "tau": t.tau, "t_opt": t.t_opt, "delta": t.delta }),
        a.json.as_deref(),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct LevelCheck {
    level: usize,
    arguments: usize,
    samples: usize,
    max_residual: f64,
    failures: usize,
    /// Largest `|M(0)|` component; exactly 0 is expected.
    at_origin: f64,
}

fn synth(a: &SynthArgs) -> Outcome {
    let (_, spec) = load(&a.common.config)?;
    let class_b = check_class_b(&spec)?;
    if !class_b.member {
        emit(&json!({ "class_b": class_b }), a.common.json.as_deref())?;
        return Err(Failure::Invalid(anyhow!("boundary Jacobian is not in class B")));
    }
    let maps = ReducedMaps::build(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (k, m) = (spec.k, spec.m);
    let mut levels = Vec::new();
    for level in 1..=maps.level_count() {
        let nargs = maps.arg_count(level);
        let origin = maps.solve_level(level, &vec![0.0; nargs])?;
        let mut check = LevelCheck {
            level,
            arguments: nargs,
            samples: a.samples,
            max_residual: 0.0,
            failures: 0,
            at_origin: origin.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())),
        };
        for _ in 0..a.samples {
            let args: Vec<f64> = (0..nargs).map(|_| rng.random_range(-0.5..=0.5)).collect();
            let Ok(sol) = maps.solve_level(level, &args) else {
                check.failures += 1;
                continue;
            };
            let mut y = args.clone();
            y.extend_from_slice(&sol);
            for row in &spec.boundary[k - level..] {
                check.max_residual = check.max_residual.max(row.eval(&y).map_err(fts_core::Error::from)?.abs());
            }
        }
        levels.push(check);
    }
    debug_assert!(levels.iter().all(|l| l.arguments + l.level == m));
    emit(&json!({ "class_b": class_b, "levels": levels }), a.common.json.as_deref())?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Outcome {
    let (mut sc, spec) = load(&a.config)?;
    apply(&mut sc, &a.overrides);
    let cfg = sc.run_config();
    cfg.validate().map_err(|e| Failure::Invalid(e.into()))?;
    if a.every == 0 {
        return Err(Failure::Invalid(anyhow!("--every must be at least 1")));
    }
    let w0 = sc.initial_data(&spec, cfg.cells)?;
    let compat = check_compatibility(&spec, &w0)?;
    let traj = run_closed_loop(&spec, &w0, cfg)?;
    let schedule = if traj.stride == 1 {
        Some(schedule_diagnostics(&traj, &spec, cfg.zero_tolerance)?)
    } else {
        None
    };

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    output::write_trajectory(&a.out.join("trajectory.csv"), &traj, a.every)?;
    output::write_controls(&a.out.join("controls.csv"), &traj, spec.k)?;
    if a.aux {
        output::write_aux(&a.out.join("aux.csv"), &traj)?;
    }
    let summary = json!({
        "name": sc.name,
        "k": spec.k,
        "m": spec.m,
        "tau": traj.times.tau,
        "t_opt": traj.times.t_opt,
        "delta": traj.times.delta,
        "horizon": spec.horizon,
        "mu": vec![traj.mu; spec.m],
        "initial": {
            "seed": sc.initial.seed,
            "amplitude": sc.initial.amplitude,
            "sup": w0.sup_norm(),
            "c1": w0.c1_norm(),
            "compatibility": compat,
        },
        "final_sup": traj.final_sup(),
        "max_c1": traj.max_c1(),
        "zeroing_schedule": schedule,
        "grid": {
            "cells": cfg.cells,
            "dx": traj.grid.dx(),
            "dt": traj.dt,
            "cfl": cfg.cfl,
            "record_stride": traj.stride,
            "steps": time_step(&spec, &cfg)?.1,
        },
        "run": cfg,
    });
    emit(&summary, Some(&a.out.join("summary.json")))?;
    Ok(())
}

fn picard(a: &PicardArgs) -> Outcome {
    let (mut sc, spec) = load(&a.common.config)?;
    apply(&mut sc, &a.overrides);
    let cfg = RunConfig {
        record_stride: 1,
        ..sc.run_config()
    };
    cfg.validate().map_err(|e| Failure::Invalid(e.into()))?;
    let mut pcfg = sc.picard_config();
    if let Some(l) = a.iterations {
        pcfg.iterations = l;
    }
    let w0 = sc.initial_data(&spec, cfg.cells)?;
    let driver = Picard::new(&spec, &w0, &cfg)?;
    let started = Instant::now();
    let out = driver.run(&pcfg, None)?;
    let elapsed = started.elapsed().as_secs_f64();
    let gap = if a.compare {
        let direct = run_closed_loop(&spec, &w0, cfg)?.field()?;
        let last = out.iterates.last().expect("at least the initial iterate");
        Some(
            last.snapshots()
                .iter()
                .zip(direct.snapshots())
                .map(|(p, d)| p.max_abs_diff(d))
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    eprintln!("picard: {} iterations in {elapsed:.2} s", pcfg.iterations);
    emit(
        &json!({
            "name": sc.name,
            "config": pcfg,
            "cells": cfg.cells,
            "report": out.report,
            "direct_run_gap": gap,
        }),
        a.common.json.as_deref(),
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    cells: usize,
    amplitude: f64,
    seed: u64,
    initial_c1: f64,
    final_sup: f64,
    max_c1: f64,
}

fn sweep(a: &SweepArgs) -> Outcome {
    let (mut sc, spec) = load(&a.config)?;
    if let Some(s) = a.seed {
        sc.initial.seed = s;
    }
    let jobs: Vec<(usize, f64)> = a
        .cells
        .iter()
        .flat_map(|&c| a.amplitudes.iter().map(move |&amp| (c, amp)))
        .collect();
    for &(cells, _) in &jobs {
        sc.run_config()
            .with_cells(cells)
            .validate()
            .map_err(|e| Failure::Invalid(e.into()))?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = a.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(anyhow::Error::from)?;
    let run_one = |&(cells, amplitude): &(usize, f64)| -> anyhow::Result<SweepRow> {
        let mut local = sc.clone();
        local.initial.amplitude = amplitude;
        let cfg = local.run_config().with_cells(cells);
        let w0 = local.initial_data(&spec, cells)?;
        let traj = run_closed_loop(&spec, &w0, cfg)
            .with_context(|| format!("cells = {cells}, amplitude = {amplitude}"))?;
        Ok(SweepRow {
            cells,
            amplitude,
            seed: local.initial.seed,
            initial_c1: w0.c1_norm(),
            final_sup: traj.final_sup(),
            max_c1: traj.max_c1(),
        })
    };
    // collect keeps job order, so the output does not depend on scheduling
    let rows: Vec<SweepRow> = pool.install(|| jobs.par_iter().map(run_one).collect::<anyhow::Result<_>>())?;
    output::write_rows(a.out.as_deref(), &rows)?;
    Ok(())
}
