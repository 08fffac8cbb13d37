//! Closed-loop upwind integration of `∂t w = Σ(x, w) ∂x w` with `w₋ = B(w₊)`
//! at `x = 0` and the feedback at `x = 1`.

use serde::Serialize;

use crate::auxdyn::AuxValues;
use crate::controller::{init_controller, ControlEval, ControllerConfig, ControllerState};
use crate::error::{Error, Result};
use crate::flows::SpaceTimeField;
use crate::model::{compute_times, SystemSpec, TimesReport};
use crate::predictor::Padding;
use crate::state::{Grid, StateSnapshot};

/// First-order upwind stepper with frozen beginning-of-step speeds.
///
/// Speeds that do not depend on the state are evaluated once per node.
#[derive(Debug, Clone)]
pub struct Stepper {
    spec: SystemSpec,
    grid: Grid,
    frozen: Vec<Option<Vec<f64>>>,
}

impl Stepper {
    pub fn new(spec: &SystemSpec, grid: Grid) -> Result<Self> {
        let n = spec.n();
        let mut binding = vec![0.0; n + 1];
        let frozen = spec
            .speed_exprs()
            .iter()
            .map(|e| {
                if e.min_arity() > 1 {
                    return Ok(None);
                }
                (0..grid.nodes())
                    .map(|node| {
                        binding[0] = grid.x(node);
                        Ok(e.eval(&binding)?)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            grid,
            frozen,
        })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// One step over the whole domain; `control` is the leftward inflow at `x = 1`.
    pub fn step(&self, s: &StateSnapshot, control: &[f64], dt: f64) -> Result<StateSnapshot> {
        self.step_active(s, control, dt, self.grid.cells)
    }

    /// One step updating nodes `0..=active` only.
    ///
    /// For `active < cells` the leftward components read node `active + 1` as
    /// inflow and nodes beyond `active` are copied unchanged.
    pub fn step_active(
        &self,
        s: &StateSnapshot,
        control: &[f64],
        dt: f64,
        active: usize,
    ) -> Result<StateSnapshot> {
        self.advance(s, s, control, dt, active)
    }

    /// One step with speeds frozen on `coeff` instead of `s` (Picard iterates).
    pub fn step_with_coefficients(
        &self,
        s: &StateSnapshot,
        coeff: &StateSnapshot,
        control: &[f64],
        dt: f64,
    ) -> Result<StateSnapshot> {
        assert_eq!(coeff.grid, self.grid);
        self.advance(s, coeff, control, dt, self.grid.cells)
    }

    fn advance(
        &self,
        s: &StateSnapshot,
        coeff: &StateSnapshot,
        control: &[f64],
        dt: f64,
        active: usize,
    ) -> Result<StateSnapshot> {
        let (k, n) = (self.spec.k, self.spec.n());
        let cells = self.grid.cells;
        assert_eq!(control.len(), n - k);
        assert_eq!(s.grid, self.grid);
        let ratio = dt / self.grid.dx();
        let nodes = self.grid.nodes();
        let old = s.data();
        let frozen_state = coeff.data();
        let mut out = s.clone();
        let new = out.data_mut();
        let mut binding = vec![0.0; n + 1];
        let mut scratch = Vec::new();
        let mut max_nu = 0.0f64;
        for i in 0..n {
            let lambda: &[f64] = match &self.frozen[i] {
                Some(v) => &v[..=active],
                None => {
                    scratch.clear();
                    for node in 0..=active {
                        binding[0] = self.grid.x(node);
                        for c in 0..n {
                            binding[c + 1] = frozen_state[c * nodes + node];
                        }
                        scratch.push(self.spec.speed(i, &binding)?);
                    }
                    &scratch
                }
            };
            if let Some(node) = lambda.iter().position(|l| !(*l > 0.0)) {
                return Err(Error::NonPositiveSpeed {
                    family: i + 1,
                    x: self.grid.x(node),
                    value: lambda[node],
                });
            }
            max_nu = lambda.iter().fold(max_nu, |a, l| a.max(l * ratio));
            let w = &old[i * nodes..(i + 1) * nodes];
            let out_i = &mut new[i * nodes..(i + 1) * nodes];
            if i < k {
                for node in 1..=active {
                    out_i[node] = w[node] - lambda[node] * ratio * (w[node] - w[node - 1]);
                }
            } else {
                for node in 0..=active.min(cells - 1) {
                    out_i[node] = w[node] + lambda[node] * ratio * (w[node + 1] - w[node]);
                }
                if active == cells {
                    out_i[cells] = control[i - k];
                }
            }
        }
        if max_nu > 1.0 + 1e-12 {
            return Err(Error::Cfl {
                dt,
                limit: dt / max_nu,
            });
        }
        let y_plus: Vec<f64> = (k..n).map(|i| new[i * nodes]).collect();
        for (r, v) in self.spec.boundary_map(&y_plus)?.into_iter().enumerate() {
            new[r * nodes] = v;
        }
        if new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: s.time + dt });
        }
        out.time = s.time + dt;
        Ok(out)
    }
}

/// One upwind step of `snapshot` with the given `x = 1` inflow.
pub fn step(snapshot: &StateSnapshot, control: &[f64], spec: &SystemSpec, dt: f64) -> Result<StateSnapshot> {
    Stepper::new(spec, snapshot.grid)?.step(snapshot, control, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunConfig {
    pub cells: usize,
    pub cfl: f64,
    pub record_stride: usize,
    /// Absolute level below which a component counts as zeroed.
    pub zero_tolerance: f64,
    /// Radius of the small-data box; leaving it is a hard error.
    pub box_radius: f64,
    pub padding: Padding,
    /// Restrict predictions to the determinacy cone (plus margin).
    pub cone_restriction: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cells: 400,
            cfl: 0.9,
            record_stride: 1,
            zero_tolerance: 1e-4,
            box_radius: 1.0,
            padding: Padding::Copy,
            cone_restriction: true,
        }
    }
}

impl RunConfig {
    pub fn with_cells(mut self, cells: usize) -> Self {
        self.cells = cells;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells < 16 {
            return Err(Error::Config(format!("cells = {} < 16", self.cells)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl = {} outside (0, 1]", self.cfl)));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record stride must be at least 1".into()));
        }
        if !(self.box_radius > 0.0) {
            return Err(Error::Config("box radius must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed step: `cfl · dx / max speed` over the box, shortened to land on `T`.
pub fn time_step(spec: &SystemSpec, cfg: &RunConfig) -> Result<(f64, usize)> {
    let bound = spec.max_speed_bound(cfg.box_radius)?;
    let dt_max = cfg.cfl * Grid::new(cfg.cells).dx() / bound;
    let steps = (spec.horizon / dt_max).ceil().max(1.0) as usize;
    Ok((spec.horizon / steps as f64, steps))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxRecord {
    pub time: f64,
    pub channels: Vec<AuxValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub grid: Grid,
    pub dt: f64,
    pub stride: usize,
    pub times: TimesReport,
    pub mu: f64,
    pub snapshots: Vec<StateSnapshot>,
    pub controls: Vec<ControlEval>,
    pub aux: Vec<AuxRecord>,
    pub sup_norms: Vec<f64>,
    pub c1_norms: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateSnapshot {
        self.snapshots.last().expect("trajectory records the initial state")
    }

    pub fn final_sup(&self) -> f64 {
        self.final_state().sup_norm()
    }

    pub fn max_c1(&self) -> f64 {
        self.c1_norms.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// The recorded snapshots as a space-time field (stride 1 only).
    pub fn field(&self) -> Result<SpaceTimeField> {
        if self.stride != 1 {
            return Err(Error::StrideTooCoarse { stride: self.stride });
        }
        SpaceTimeField::from_snapshots(0.0, self.dt, self.snapshots.clone())
    }

    /// Control history `(t, values)`.
    pub fn control_series(&self) -> Vec<(f64, Vec<f64>)> {
        self.controls.iter().map(|c| (c.time, c.values.clone())).collect()
    }
}

/// A resumable closed-loop run.
///
/// Cloning captures the full state (PDE snapshot, auxiliary channels, step
/// counter); running a clone reproduces the original bit for bit.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    spec: SystemSpec,
    cfg: RunConfig,
    stepper: Stepper,
    controller: ControllerState,
    state: StateSnapshot,
    step_index: usize,
    steps: usize,
    dt: f64,
    trajectory: Trajectory,
}

impl ClosedLoop {
    pub fn start(spec: &SystemSpec, w0: &StateSnapshot, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        if w0.grid.cells != cfg.cells {
            return Err(Error::Config(format!(
                "initial data has {} cells, run configured for {}",
                w0.grid.cells, cfg.cells
            )));
        }
        let times = compute_times(spec)?;
        let (dt, steps) = time_step(spec, &cfg)?;
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
        let mut state = w0.clone();
        state.time = 0.0;
        let trajectory = Trajectory {
            grid: w0.grid,
            dt,
            stride: cfg.record_stride,
            times,
            mu: controller.mu(),
            snapshots: Vec::new(),
            controls: Vec::new(),
            aux: Vec::new(),
            sup_norms: Vec::new(),
            c1_norms: Vec::new(),
        };
        Ok(Self {
            spec: spec.clone(),
            cfg,
            stepper: Stepper::new(spec, w0.grid)?,
            controller,
            state,
            step_index: 0,
            steps,
            dt,
            trajectory,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn total_steps(&self) -> usize {
        self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.step_index > self.steps
    }

    pub fn state(&self) -> &StateSnapshot {
        &self.state
    }

    pub fn controller(&self) -> &ControllerState {
        &self.controller
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    fn time_of(&self, index: usize) -> f64 {
        if index == self.steps {
            self.spec.horizon
        } else {
            index as f64 * self.dt
        }
    }

    /// Evaluates the control at the current time, records, and steps once.
    ///
    /// The step after the last one only applies and records the final control.
    pub fn advance(&mut self) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        let (k, n) = (self.spec.k, self.spec.n());
        let t = self.time_of(self.step_index);
        self.state.time = t;
        let ctrl = self.controller.compute_control(t, &self.state)?;
        let last = self.state.grid.cells;
        for (c, v) in ctrl.values.iter().enumerate() {
            self.state.component_mut(k + c)[last] = *v;
        }
        let sup = self.state.sup_norm();
        if !sup.is_finite() {
            return Err(Error::NonFinite { time: t });
        }
        if sup > self.cfg.box_radius {
            return Err(Error::SmallnessExceeded { time: t, sup });
        }
        let is_final = self.step_index == self.steps;
        if self.step_index % self.cfg.record_stride == 0 || is_final {
            let tr = &mut self.trajectory;
            tr.snapshots.push(self.state.clone());
            tr.sup_norms.push(sup);
            tr.c1_norms.push(self.state.c1_norm());
            tr.aux.push(AuxRecord {
                time: t,
                channels: self.controller.aux_values(),
            });
            tr.controls.push(ctrl.clone());
        }
        if !is_final {
            let control: Vec<f64> = ctrl.values.clone();
            debug_assert_eq!(control.len(), n - k);
            let mut next = self.stepper.step(&self.state, &control, self.dt)?;
            next.time = self.time_of(self.step_index + 1);
            self.state = next;
            self.controller.step_aux(self.dt);
        }
        self.step_index += 1;
        Ok(())
    }

    /// Runs until the horizon and returns the trajectory.
    pub fn run(mut self) -> Result<Trajectory> {
        while !self.is_finished() {
            self.advance()?;
        }
        Ok(self.trajectory)
    }

    /// Runs `count` further steps (or until finished).
    pub fn advance_by(&mut self, count: usize) -> Result<()> {
        for _ in 0..count {
            if self.is_finished() {
                break;
            }
            self.advance()?;
        }
        Ok(())
    }
}

pub fn run_closed_loop(spec: &SystemSpec, w0: &StateSnapshot, cfg: RunConfig) -> Result<Trajectory> {
    ClosedLoop::start(spec, w0, cfg)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    /// `max |u|`.
    pub c0: f64,
    /// `max(|u|, |∂t u|, |∂x u|)` over all samples.
    pub c1: f64,
    /// `max e^{−L1 t − L2 x} |u|`.
    pub weighted_c0: f64,
    /// Weighted maximum of `|u|`, `|∂t u|`, `|∂x u|`.
    pub weighted_c1: f64,
}

/// Weighted sup-norms of a recorded trajectory; derivatives by centred
/// differences inside and one-sided ones at the edges.
pub fn measure_norms(trajectory: &Trajectory, l1: f64, l2: f64) -> Result<NormReport> {
    if trajectory.stride != 1 {
        return Err(Error::StrideTooCoarse {
            stride: trajectory.stride,
        });
    }
    Ok(field_norms(&trajectory.field()?, l1, l2))
}

/// Norms of a space-time field (see [`measure_norms`]).
pub fn field_norms(field: &SpaceTimeField, l1: f64, l2: f64) -> NormReport {
    let snaps = field.snapshots();
    let grid = field.grid();
    let (dt, dx) = (field.dt(), grid.dx());
    let nodes = grid.nodes();
    let steps = snaps.len();
    let mut r = NormReport {
        c0: 0.0,
        c1: 0.0,
        weighted_c0: 0.0,
        weighted_c1: 0.0,
    };
    for (p, s) in snaps.iter().enumerate() {
        let t = field.t0() + p as f64 * dt;
        for c in 0..s.components {
            let u = s.component(c);
            for node in 0..nodes {
                let ux = if node == 0 {
                    (u[1] - u[0]) / dx
                } else if node == nodes - 1 {
                    (u[node] - u[node - 1]) / dx
                } else {
                    (u[node + 1] - u[node - 1]) / (2.0 * dx)
                };
                let ut = if steps < 2 {
                    0.0
                } else if p == 0 {
                    (snaps[1].component(c)[node] - u[node]) / dt
                } else if p == steps - 1 {
                    (u[node] - snaps[p - 1].component(c)[node]) / dt
                } else {
                    (snaps[p + 1].component(c)[node] - snaps[p - 1].component(c)[node]) / (2.0 * dt)
                };
                let v = u[node].abs();
                let d = v.max(ux.abs()).max(ut.abs());
                let wgt = (-l1 * t - l2 * grid.x(node)).exp();
                r.c0 = r.c0.max(v);
                r.c1 = r.c1.max(d);
                r.weighted_c0 = r.weighted_c0.max(wgt * v);
                r.weighted_c1 = r.weighted_c1.max(wgt * d);
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transport_spec() -> SystemSpec {
        SystemSpec::parse(1, 1, &["1", "1"], &["0"], 2.4).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let spec = transport_spec();
        let s = StateSnapshot::zeros(0.0, Grid::new(32), 2);
        let out = step(&s, &[0.0], &spec, 0.01).unwrap();
        assert_eq!(out.sup_norm(), 0.0);
    }

    #[test]
    fn pulse_translates() {
        let spec = transport_spec();
        let g = Grid::new(400);
        let bump = |x: f64| if (x - 0.3).abs() < 0.1 { (1.0 - ((x - 0.3) / 0.1).powi(2)).powi(2) } else { 0.0 };
        let mut s = StateSnapshot::from_fn(0.0, g, 2, |i, x| if i == 0 { bump(x) } else { 0.0 });
        let dt = 0.5 * g.dx();
        let st = Stepper::new(&spec, g).unwrap();
        for _ in 0..((0.5 / dt).round() as usize) {
            s = st.step(&s, &[0.0], dt).unwrap();
        }
        let centroid: f64 = (0..g.nodes()).map(|i| g.x(i) * s.component(0)[i]).sum::<f64>()
            / s.component(0).iter().sum::<f64>();
        assert!((centroid - 0.8).abs() < 2.0 * g.dx(), "{centroid}");
        let l1: f64 = (0..g.nodes())
            .map(|i| (s.component(0)[i] - bump(g.x(i) - 0.5)).abs() * g.dx())
            .sum();
        assert!(l1 < 0.02, "{l1}");
    }

    #[test]
    fn cfl_violation_detected() {
        let spec = transport_spec();
        let s = StateSnapshot::zeros(0.0, Grid::new(32), 2);
        assert!(matches!(step(&s, &[0.0], &spec, 0.1), Err(Error::Cfl { .. })));
    }

    #[test]
    fn maximum_principle() {
        let spec = SystemSpec::parse(1, 1, &["1 + 0.2*y1", "1.5"], &["0.5*y2"], 2.4).unwrap();
        let g = Grid::new(100);
        let mut s = StateSnapshot::from_fn(0.0, g, 2, |i, x| 0.3 * ((i + 2) as f64 * x).sin());
        let max0 = s.sup_norm();
        let st = Stepper::new(&spec, g).unwrap();
        for _ in 0..200 {
            s = st.step(&s, &[0.1], 0.5 * g.dx() / 1.5).unwrap();
            assert!(s.sup_norm() <= max0.max(0.1) + 1e-12);
        }
    }

    #[test]
    fn norms_of_constant_field() {
        let g = Grid::new(16);
        let s = StateSnapshot::from_fn(0.0, g, 1, |_, _| 2.0);
        let f = SpaceTimeField::constant(s, 0.0, 0.1, 5);
        let r = field_norms(&f, 0.0, 0.0);
        assert_eq!((r.c0, r.c1, r.weighted_c0), (2.0, 2.0, 2.0));
        let w = field_norms(&f, 1.0, 1.0);
        assert!(w.weighted_c0 <= r.weighted_c0 && w.weighted_c0 == 2.0);
        let z = field_norms(&f.map_values(|_, _, _, _| 0.0), 3.0, 1.0);
        assert_eq!(z.weighted_c1, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::default().with_cells(8).validate().is_err());
        let mut c = RunConfig::default();
        c.cfl = 1.5;
        assert!(c.validate().is_err());
    }
}
