//! Picard iteration for the closed loop: each iterate is an upwind solve with
//! speeds, exit times and feet taken from the previous iterate, while the
//! boundary condition at `x = 0` and the map arguments use the current one.
//!
//! Iterates live on `[0, T]` and are extended by zero beyond `T`.

use serde::Serialize;

use crate::controller::{init_controller, ControllerConfig, ControllerState};
use crate::error::{Error, Result};
use crate::flows::SpaceTimeField;
use crate::model::{compute_times, SystemSpec};
use crate::sim::{field_norms, time_step, RunConfig, Stepper};
use crate::state::StateSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardConfig {
    pub iterations: usize,
    /// Time weight of the norm `e^{−L1 t − L2 x}`.
    pub l1: f64,
    /// Space weight of the norm.
    pub l2: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            l1: 8.0,
            l2: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    /// Weighted sup of `w^(l+1) − w^(l)` over `[0, T] × [0, 1]`.
    pub differences: Vec<f64>,
    /// Geometric decay rate fitted to the differences (0 if they vanish).
    pub ratio: f64,
    pub converged: bool,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// `w^(0), …, w^(L)`, each restricted to `[0, T]`.
    pub iterates: Vec<SpaceTimeField>,
    pub report: PicardReport,
}

/// Quintic step: 1 below `a`, 0 above `b`, `C²` in between.
fn cutoff(t: f64, a: f64, b: f64) -> f64 {
    if t <= a {
        1.0
    } else if t >= b {
        0.0
    } else {
        let s = (t - a) / (b - a);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// `w^(0)(t, x) = χ(t) w₀(x)` with `χ` cut off over `[T − δ/4, T]`.
pub fn initial_iterate(w0: &StateSnapshot, horizon: f64, delta: f64, dt: f64, steps: usize) -> SpaceTimeField {
    let mut snaps = Vec::with_capacity(steps + 1);
    for p in 0..=steps {
        let t = if p == steps { horizon } else { p as f64 * dt };
        let chi = cutoff(t, horizon - 0.25 * delta, horizon);
        let mut s = w0.clone();
        s.time = t;
        s.data_mut().iter_mut().for_each(|v| *v *= chi);
        snaps.push(s);
    }
    SpaceTimeField::from_snapshots(0.0, dt, snaps).expect("snapshots share the grid")
}

/// Iteration driver bound to one system, initial state and grid.
pub struct Picard {
    spec: SystemSpec,
    w0: StateSnapshot,
    controller: ControllerState,
    stepper: Stepper,
    dt: f64,
    steps: usize,
    tail: usize,
}

impl Picard {
    pub fn new(spec: &SystemSpec, w0: &StateSnapshot, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (dt, steps) = time_step(spec, cfg)?;
        let controller = init_controller(
            spec,
            w0,
            ControllerConfig {
                dt,
                padding: cfg.padding,
                cone_restriction: cfg.cone_restriction,
                box_radius: cfg.box_radius,
            },
        )?;
        let mut slowest = f64::INFINITY;
        for c in spec.k..spec.n() {
            slowest = slowest.min(spec.min_speed_bound(c, cfg.box_radius)?);
        }
        let tail = (1.1 / (slowest * dt)).ceil() as usize + 1;
        Ok(Self {
            spec: spec.clone(),
            w0: w0.clone(),
            controller,
            stepper: Stepper::new(spec, w0.grid)?,
            dt,
            steps,
            tail,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn initial(&self) -> Result<SpaceTimeField> {
        let delta = compute_times(&self.spec)?.delta;
        Ok(initial_iterate(&self.w0, self.spec.horizon, delta, self.dt, self.steps))
    }

    fn extended(&self, f: &SpaceTimeField) -> SpaceTimeField {
        let mut out = f.clone();
        let zero = StateSnapshot::zeros(0.0, f.grid(), f.components());
        for p in 1..=self.tail {
            let mut z = zero.clone();
            z.time = f.t_end() + p as f64 * self.dt;
            out.push(z);
        }
        out
    }

    /// `w^(l+1)` from `w^(l)` (given on `[0, T]`).
    pub fn iterate(&self, prev: &SpaceTimeField) -> Result<SpaceTimeField> {
        if prev.len() != self.steps + 1 {
            return Err(Error::Config(format!(
                "iterate has {} snapshots, expected {}",
                prev.len(),
                self.steps + 1
            )));
        }
        let ext = self.extended(prev);
        let k = self.spec.k;
        let last = self.w0.grid.cells;
        let mut ctrl = self.controller.clone();
        let mut state = self.w0.clone();
        let mut snaps = Vec::with_capacity(self.steps + 1);
        for p in 0..=self.steps {
            let t = if p == self.steps {
                self.spec.horizon
            } else {
                p as f64 * self.dt
            };
            state.time = t;
            let ev = ctrl.control_from_field(t, &state, Some(&ext))?;
            for (c, v) in ev.values.iter().enumerate() {
                state.component_mut(k + c)[last] = *v;
            }
            snaps.push(state.clone());
            if p < self.steps {
                state = self
                    .stepper
                    .step_with_coefficients(&state, &prev.snapshots()[p], &ev.values, self.dt)?;
                ctrl.step_aux(self.dt);
            }
        }
        SpaceTimeField::from_snapshots(0.0, self.dt, snaps)
    }

    /// Weighted sup of the difference of two iterates.
    pub fn weighted_difference(a: &SpaceTimeField, b: &SpaceTimeField, l1: f64, l2: f64) -> f64 {
        let snaps: Vec<StateSnapshot> = a
            .snapshots()
            .iter()
            .zip(b.snapshots())
            .map(|(x, y)| {
                let mut d = x.clone();
                d.data_mut()
                    .iter_mut()
                    .zip(y.data())
                    .for_each(|(u, v)| *u -= v);
                d
            })
            .collect();
        let diff = SpaceTimeField::from_snapshots(a.t0(), a.dt(), snaps).expect("same lattice");
        field_norms(&diff, l1, l2).weighted_c0
    }

    /// Runs `cfg.iterations` iterations from `start` (or from `w^(0)`).
    pub fn run(&self, cfg: &PicardConfig, start: Option<SpaceTimeField>) -> Result<PicardOutcome> {
        let mut iterates = vec![match start {
            Some(f) => f,
            None => self.initial()?,
        }];
        let mut differences = Vec::with_capacity(cfg.iterations);
        for _ in 0..cfg.iterations {
            let next = self.iterate(iterates.last().expect("nonempty"))?;
            differences.push(Self::weighted_difference(
                &next,
                iterates.last().expect("nonempty"),
                cfg.l1,
                cfg.l2,
            ));
            iterates.push(next);
        }
        let ratio = fit_ratio(&differences);
        Ok(PicardOutcome {
            iterates,
            report: PicardReport {
                converged: ratio < 1.0,
                differences,
                ratio,
                dt: self.dt,
                steps: self.steps,
            },
        })
    }
}

/// Least-squares geometric rate of a sequence, ignoring the round-off floor.
///
/// A sequence that reaches exactly zero has rate 0.
pub fn fit_ratio(d: &[f64]) -> f64 {
    let Some(&first) = d.first() else {
        return 0.0;
    };
    if first == 0.0 {
        return 0.0;
    }
    let floor = 1e-13 * first;
    let mut pts = Vec::new();
    for (l, &v) in d.iter().enumerate() {
        if v <= floor {
            if v == 0.0 || pts.len() < 2 {
                pts.push((l as f64, floor.max(f64::MIN_POSITIVE).ln()));
            }
            break;
        }
        pts.push((l as f64, v.ln()));
    }
    if pts.len() < 2 {
        return if d.len() >= 2 { 0.0 } else { f64::NAN };
    }
    let np = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if d.iter().skip(1).any(|&v| v == 0.0) {
        return 0.0;
    }
    (sxy / sxx).exp()
}

pub fn picard_iterate(
    spec: &SystemSpec,
    w0: &StateSnapshot,
    cfg: &RunConfig,
    pcfg: &PicardConfig,
) -> Result<PicardOutcome> {
    Picard::new(spec, w0, cfg)?.run(pcfg, None)
}
