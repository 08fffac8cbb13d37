//! Characteristic flows over a sampled space-time field.
//!
//! Family `j` (0-based) moves with `dx/dt = +λ_j` when `j < k` and `−λ_j`
//! otherwise, with the speed evaluated on the bilinearly interpolated field.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SystemSpec;
use crate::state::{locate, Grid, StateSnapshot};

/// Time resolution of exit-event bisection.
pub const EVENT_TOLERANCE: f64 = 1e-12;

/// Snapshots at `t0, t0 + dt, …` on a shared grid, interpolated bilinearly.
///
/// Outside the stored time range the nearest snapshot is used (constant extension).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeField {
    t0: f64,
    dt: f64,
    snapshots: Vec<StateSnapshot>,
}

impl SpaceTimeField {
    pub fn new(t0: f64, dt: f64, first: StateSnapshot) -> Self {
        assert!(dt > 0.0, "field time step must be positive");
        Self {
            t0,
            dt,
            snapshots: vec![first],
        }
    }

    pub fn from_snapshots(t0: f64, dt: f64, snapshots: Vec<StateSnapshot>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::Config("empty space-time field".into()))?;
        if !(dt > 0.0) {
            return Err(Error::Config(format!("field time step {dt} is not positive")));
        }
        if snapshots
            .iter()
            .any(|s| s.grid != first.grid || s.components != first.components)
        {
            return Err(Error::Config("field snapshots do not share a grid".into()));
        }
        Ok(Self { t0, dt, snapshots })
    }

    /// Constant-in-time field with `steps + 1` copies of `snapshot`.
    pub fn constant(snapshot: StateSnapshot, t0: f64, dt: f64, steps: usize) -> Self {
        let mut f = Self::new(t0, dt, snapshot.clone());
        for _ in 0..steps {
            f.push(snapshot.clone());
        }
        f
    }

    pub fn push(&mut self, snapshot: StateSnapshot) {
        debug_assert_eq!(snapshot.grid, self.grid());
        self.snapshots.push(snapshot);
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.snapshots.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn grid(&self) -> Grid {
        self.snapshots[0].grid
    }

    pub fn components(&self) -> usize {
        self.snapshots[0].components
    }

    pub fn snapshots(&self) -> &[StateSnapshot] {
        &self.snapshots
    }

    /// Whether `t` lies outside the stored time range.
    pub fn is_extended(&self, t: f64) -> bool {
        t < self.t0 - 1e-12 * self.dt || t > self.t_end() + 1e-12 * self.dt
    }

    fn locate_time(&self, t: f64) -> (usize, f64) {
        let last = self.snapshots.len() - 1;
        if last == 0 {
            return (0, 0.0);
        }
        let s = ((t - self.t0) / self.dt).clamp(0.0, last as f64);
        let lo = (s.floor() as usize).min(last - 1);
        (lo, s - lo as f64)
    }

    /// All components at `(t, x)`, written to `out`.
    pub fn sample(&self, t: f64, x: f64, out: &mut [f64]) {
        let (ti, tf) = self.locate_time(t);
        let (xi, xf) = locate(self.grid(), x);
        let a = &self.snapshots[ti];
        let b = &self.snapshots[(ti + 1).min(self.snapshots.len() - 1)];
        for (c, slot) in out.iter_mut().enumerate().take(self.components()) {
            let (ca, cb) = (a.component(c), b.component(c));
            let va = ca[xi] + xf * (ca[xi + 1] - ca[xi]);
            let vb = cb[xi] + xf * (cb[xi + 1] - cb[xi]);
            *slot = va + tf * (vb - va);
        }
    }

    pub fn value(&self, component: usize, t: f64, x: f64) -> f64 {
        let mut out = vec![0.0; self.components()];
        self.sample(t, x, &mut out);
        out[component]
    }

    /// Largest nodal difference to a field on the same lattice.
    pub fn sup_diff(&self, other: &SpaceTimeField) -> f64 {
        assert_eq!(self.snapshots.len(), other.snapshots.len());
        self.snapshots
            .iter()
            .zip(&other.snapshots)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    /// Applies `f(component, t, x, value)` to every stored value.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64, f64, f64) -> f64) -> Self {
        let mut out = self.clone();
        for (p, s) in out.snapshots.iter_mut().enumerate() {
            let t = self.t0 + p as f64 * self.dt;
            let grid = s.grid;
            for c in 0..s.components {
                for (node, v) in s.component_mut(c).iter_mut().enumerate() {
                    *v = f(c, t, grid.x(node), *v);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowEvent {
    ReachedZero,
    ReachedOne,
    /// Reached the requested time inside the domain.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowTrace {
    pub family: usize,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub event: FlowEvent,
    /// True if any speed evaluation fell outside the stored time range.
    pub extended: bool,
}

impl FlowTrace {
    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("trace has a start point")
    }

    pub fn end_position(&self) -> f64 {
        *self.positions.last().expect("trace has a start point")
    }
}

/// Evaluates `dx/dt` of one family on a field, reusing its buffers.
struct Velocity<'a> {
    field: &'a SpaceTimeField,
    spec: &'a SystemSpec,
    family: usize,
    sign: f64,
    binding: Vec<f64>,
    extended: bool,
}

impl<'a> Velocity<'a> {
    fn new(field: &'a SpaceTimeField, spec: &'a SystemSpec, family: usize) -> Self {
        assert!(family < spec.n(), "family {family} out of range");
        Self {
            field,
            spec,
            family,
            sign: if spec.is_rightward(family) { 1.0 } else { -1.0 },
            binding: vec![0.0; spec.n() + 1],
            extended: false,
        }
    }

    fn eval(&mut self, t: f64, x: f64) -> Result<f64> {
        let x = x.clamp(0.0, 1.0);
        self.extended |= self.field.is_extended(t);
        self.binding[0] = x;
        self.field.sample(t, x, &mut self.binding[1..]);
        let lambda = self.spec.speed(self.family, &self.binding)?;
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveSpeed {
                family: self.family + 1,
                x,
                value: lambda,
            });
        }
        Ok(self.sign * lambda)
    }

    fn rk4(&mut self, t: f64, x: f64, h: f64) -> Result<f64> {
        let k1 = self.eval(t, x)?;
        let k2 = self.eval(t + 0.5 * h, x + 0.5 * h * k1)?;
        let k3 = self.eval(t + 0.5 * h, x + 0.5 * h * k2)?;
        let k4 = self.eval(t + h, x + h * k3)?;
        Ok(x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    }
}

fn outside(x: f64) -> Option<FlowEvent> {
    if x < 0.0 {
        Some(FlowEvent::ReachedZero)
    } else if x > 1.0 {
        Some(FlowEvent::ReachedOne)
    } else {
        None
    }
}

/// Traces `x_j(·, s, ξ)` from time `s` toward `t_target` (either direction).
///
/// RK4 with step `dt/2` of the field; an exit through `x = 0` or `x = 1` is
/// located by bisection on the last step and ends the trace.
pub fn integrate_flow(
    field: &SpaceTimeField,
    spec: &SystemSpec,
    family: usize,
    s: f64,
    xi: f64,
    t_target: f64,
) -> Result<FlowTrace> {
    assert!((0.0..=1.0).contains(&xi), "start position {xi} outside [0, 1]");
    let mut vel = Velocity::new(field, spec, family);
    let dir = if t_target >= s { 1.0 } else { -1.0 };
    let h_nom = 0.5 * field.dt();
    let (mut t, mut x) = (s, xi);
    let mut times = vec![t];
    let mut positions = vec![x];
    let mut event = FlowEvent::Target;
    while dir * (t_target - t) > 0.0 {
        let remaining = (t_target - t).abs();
        let h = dir * if remaining < 1.5 * h_nom { remaining } else { h_nom };
        let next = vel.rk4(t, x, h)?;
        if let Some(ev) = outside(next) {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            while (hi - lo) * h.abs() > EVENT_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                if outside(vel.rk4(t, x, mid * h)?).is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            t += hi * h;
            x = if ev == FlowEvent::ReachedZero { 0.0 } else { 1.0 };
            times.push(t);
            positions.push(x);
            event = ev;
            break;
        }
        t = if remaining < 1.5 * h_nom { t_target } else { t + h };
        x = next;
        times.push(t);
        positions.push(x);
    }
    Ok(FlowTrace {
        family,
        times,
        positions,
        event,
        extended: vel.extended,
    })
}

/// Time `t_j` for the leftward family `j` launched at `(t, 1)` to reach `x = 0`.
///
/// The trace may not go past the end of the stored field.
pub fn exit_time(field: &SpaceTimeField, spec: &SystemSpec, family: usize, t: f64) -> Result<f64> {
    assert!(!spec.is_rightward(family), "exit times are defined for leftward families");
    let limit = field.t_end();
    let trace = integrate_flow(field, spec, family, t, 1.0, limit.max(t))?;
    match trace.event {
        FlowEvent::ReachedZero => Ok(trace.end_time() - t),
        _ => Err(Error::HorizonExhausted {
            family: family + 1,
            start: t,
            limit,
        }),
    }
}

/// Exit time of family `c` and the feet `x_f(t, t + t_c, 0)` of families `k..c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FootPoints {
    pub family: usize,
    pub exit_time: f64,
    pub feet: Vec<f64>,
}

/// Traces the slower leftward families backward from `(t + t_c, 0)` to time `t`.
pub fn foot_points(field: &SpaceTimeField, spec: &SystemSpec, t: f64, family: usize) -> Result<FootPoints> {
    assert!(family > spec.k, "feet need a leftward family above the slowest one");
    let tc = exit_time(field, spec, family, t)?;
    let feet = (spec.k..family)
        .map(|f| Ok(integrate_flow(field, spec, f, t + tc, 0.0, t)?.end_position()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FootPoints {
        family,
        exit_time: tc,
        feet,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_field(n: usize, span: f64) -> SpaceTimeField {
        let dt = 1e-2;
        SpaceTimeField::constant(
            StateSnapshot::zeros(0.0, Grid::new(32), n),
            0.0,
            dt,
            (span / dt).ceil() as usize,
        )
    }

    fn spec(k: usize, m: usize, speeds: &[&str], bmap: &[&str]) -> SystemSpec {
        SystemSpec::parse(k, m, speeds, bmap, 3.0).unwrap()
    }

    #[test]
    fn constant_speed_transport() {
        let s = spec(1, 1, &["1", "2"], &["0.5*y2"]);
        let f = zero_field(2, 3.0);
        let tr = integrate_flow(&f, &s, 0, 0.0, 0.0, 3.0).unwrap();
        assert_eq!(tr.event, FlowEvent::ReachedOne);
        assert!((tr.end_time() - 1.0).abs() < 1e-11);
        assert!(!tr.extended);
        assert!((exit_time(&f, &s, 1, 0.0).unwrap() - 0.5).abs() < 1e-11);
        let part = integrate_flow(&f, &s, 0, 0.0, 0.0, 0.3).unwrap();
        assert_eq!(part.event, FlowEvent::Target);
        assert!((part.end_position() - 0.3).abs() < 1e-14);
    }

    #[test]
    fn log_exit_time() {
        let s = spec(1, 1, &["2", "1 + x"], &["0.5*y2"]);
        let f = zero_field(2, 2.0);
        let te = exit_time(&f, &s, 1, 0.0).unwrap();
        assert!((te - std::f64::consts::LN_2).abs() < 1e-10, "{te}");
    }

    #[test]
    fn feet_for_constant_speeds() {
        let s = spec(1, 2, &["1", "1", "2"], &["y2 + 2*y3"]);
        let f = zero_field(3, 2.0);
        let fp = foot_points(&f, &s, 0.2, 2).unwrap();
        assert!((fp.exit_time - 0.5).abs() < 1e-11);
        assert!((fp.feet[0] - 0.5).abs() < 1e-11);
    }

    #[test]
    fn short_field_reports_horizon() {
        let s = spec(1, 1, &["1", "1"], &["0.5*y2"]);
        let f = zero_field(2, 0.5);
        assert!(matches!(
            exit_time(&f, &s, 1, 0.0),
            Err(Error::HorizonExhausted { .. })
        ));
    }

    #[test]
    fn constant_extension_is_flagged() {
        let s = spec(1, 1, &["1", "1"], &["0.5*y2"]);
        let f = zero_field(2, 0.5);
        let tr = integrate_flow(&f, &s, 0, 0.0, 0.0, 0.8).unwrap();
        assert!(tr.extended);
    }

    #[test]
    fn nonpositive_speed_is_an_error() {
        let s = spec(1, 1, &["1", "0.5 - x"], &["0.5*y2"]);
        let f = zero_field(2, 1.0);
        assert!(matches!(
            exit_time(&f, &s, 1, 0.0),
            Err(Error::NonPositiveSpeed { family: 2, .. })
        ));
    }

    #[test]
    fn bilinear_sampling() {
        let g = Grid::new(4);
        let a = StateSnapshot::from_fn(0.0, g, 1, |_, x| x);
        let b = StateSnapshot::from_fn(1.0, g, 1, |_, x| 2.0 * x);
        let f = SpaceTimeField::from_snapshots(0.0, 1.0, vec![a, b]).unwrap();
        assert!((f.value(0, 0.5, 0.3) - 0.45).abs() < 1e-15);
        assert!((f.value(0, 5.0, 0.3) - 0.6).abs() < 1e-15);
        assert!(f.is_extended(5.0) && !f.is_extended(0.7));
    }
}
