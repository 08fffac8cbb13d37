//! The time-independent boundary feedback at `x = 1`.
//!
//! Leftward channel `c` (0-based component `k..n`) sits at elimination level
//! `i = n − c`. If `i ≤ min(k, m − 1)` its control is
//!
//! ```text
//! ζ_c(t) + (1 − η_c(t)) · M(w_k(t, x_k), …, w_{c−1}(t, x_{c−1}))
//! ```
//!
//! where `M` solves the last `i` rows of `B = 0` and the feet `x_f` are traced
//! back from `(t + t_c, 0)` on a predicted field. Otherwise the control is `ζ_c(t)`.

use serde::Serialize;

use crate::auxdyn::{choose_mu, AuxChannel, AuxValues};
use crate::bmaps::ReducedMaps;
use crate::error::{Error, Result};
use crate::flows::{exit_time, foot_points, integrate_flow, FlowEvent, SpaceTimeField};
use crate::model::{compute_times, SystemSpec, TimesReport};
use crate::predictor::{Padding, Predictor, PredictorConfig};
use crate::sim::Trajectory;
use crate::state::{slope_right, StateSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CaseTag {
    /// `m > k`: every rightward component has its own map channel.
    MoreLeftward,
    /// `m ≤ k`: the slowest leftward channel is pure `ζ`.
    NotMoreLeftward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChannelLaw {
    /// 0-based component index in `k..n`.
    pub component: usize,
    /// Elimination level of the map term, if any.
    pub level: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerConfig {
    /// Time step of the predicted field.
    pub dt: f64,
    pub padding: Padding,
    pub cone_restriction: bool,
    pub box_radius: f64,
}

/// One evaluation of the feedback.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlEval {
    pub time: f64,
    /// Controls for components `k..n`.
    pub values: Vec<f64>,
    /// Exit time per channel (map channels, when a prediction was made).
    pub exit_times: Vec<Option<f64>>,
    /// Feet per channel, for families `k..c`.
    pub feet: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    spec: SystemSpec,
    maps: ReducedMaps,
    channels: Vec<AuxChannel>,
    laws: Vec<ChannelLaw>,
    case: CaseTag,
    times: TimesReport,
    mu: f64,
    predictor: Option<Predictor>,
}

/// Channel laws for a `(k, m)` system.
pub fn channel_laws(k: usize, m: usize) -> Vec<ChannelLaw> {
    let n = k + m;
    let levels = k.min(m - 1);
    (k..n)
        .map(|c| {
            let i = n - c;
            ChannelLaw {
                component: c,
                level: (i <= levels).then_some(i),
            }
        })
        .collect()
}

pub fn init_controller(spec: &SystemSpec, w0: &StateSnapshot, cfg: ControllerConfig) -> Result<ControllerState> {
    let times = compute_times(spec)?;
    if !(times.delta > 0.0) {
        return Err(Error::HorizonTooShort {
            horizon: spec.horizon,
            t_opt: times.t_opt,
        });
    }
    let maps = ReducedMaps::build(spec)?;
    let (k, m) = (spec.k, spec.m);
    let laws = channel_laws(k, m);
    let mu = choose_mu(spec.alpha, spec.beta, times.delta)?;
    let grid = w0.grid;
    let last = grid.cells;
    let mut binding = vec![1.0];
    binding.extend(w0.node(last));
    let deadline = 0.5 * times.delta;
    let channels = laws
        .iter()
        .map(|law| {
            let c = law.component;
            let a = w0.component(c)[last];
            let b = spec.speed(c, &binding)? * slope_right(w0.component(c), grid.dx());
            let ch = AuxChannel::new(a, b, spec.alpha, spec.beta, times.delta, mu)?;
            match ch.zeta_extinction(cfg.dt, deadline) {
                Some(_) => Ok(ch),
                None => Err(Error::AuxTooSlow {
                    channel: c + 1,
                    extinction: ch
                        .zeta_extinction(cfg.dt, 100.0 * deadline)
                        .unwrap_or(f64::INFINITY),
                    deadline,
                }),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let map_families: Vec<usize> = laws
        .iter()
        .filter(|l| l.level.is_some())
        .map(|l| l.component)
        .collect();
    let predictor = if map_families.is_empty() {
        None
    } else {
        let mut slowest = f64::INFINITY;
        for &c in &map_families {
            slowest = slowest.min(spec.min_speed_bound(c, cfg.box_radius)?);
        }
        if !(slowest > 0.0) {
            return Err(Error::NonPositiveSpeed {
                family: map_families[0] + 1,
                x: f64::NAN,
                value: slowest,
            });
        }
        Some(Predictor::new(
            spec,
            grid,
            PredictorConfig {
                dt: cfg.dt,
                horizon: 1.1 / slowest,
                padding: cfg.padding,
                cone_speed: cfg.cone_restriction.then_some(slowest),
            },
        )?)
    };
    Ok(ControllerState {
        spec: spec.clone(),
        maps,
        channels,
        laws,
        case: if m > k {
            CaseTag::MoreLeftward
        } else {
            CaseTag::NotMoreLeftward
        },
        times,
        mu,
        predictor,
    })
}

impl ControllerState {
    pub fn laws(&self) -> &[ChannelLaw] {
        &self.laws
    }

    pub fn case(&self) -> CaseTag {
        self.case
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn times(&self) -> &TimesReport {
        &self.times
    }

    pub fn channels(&self) -> &[AuxChannel] {
        &self.channels
    }

    pub fn maps(&self) -> &ReducedMaps {
        &self.maps
    }

    pub fn aux_values(&self) -> Vec<AuxValues> {
        self.channels.iter().map(AuxChannel::values).collect()
    }

    pub fn step_aux(&mut self, dt: f64) {
        for ch in &mut self.channels {
            ch.step(dt);
        }
    }

    /// Replaces the predictor's padding rule (for cone-invariance checks).
    pub fn set_padding(&mut self, padding: Padding) {
        if let Some(p) = &mut self.predictor {
            p.config.padding = padding;
        }
    }

    /// Feedback at time `t` from the current snapshot.
    ///
    /// `t` only labels the result; the law depends on time through the
    /// auxiliary channels alone.
    pub fn compute_control(&self, t: f64, snapshot: &StateSnapshot) -> Result<ControlEval> {
        let field = match (&self.predictor, self.needs_field()) {
            (Some(p), true) => {
                let mut start = snapshot.clone();
                start.time = t;
                Some(p.predict(&start)?)
            }
            _ => None,
        };
        self.control_from_field(t, snapshot, field.as_ref())
    }

    /// Whether any map term currently has a nonzero weight `1 − η`.
    pub fn needs_field(&self) -> bool {
        self.laws
            .iter()
            .zip(&self.channels)
            .any(|(l, ch)| l.level.is_some() && ch.values().eta != 1.0)
    }

    /// Feedback with exit times and feet taken from a given future field.
    ///
    /// Map terms are skipped (their weight is exactly zero) when `field` is `None`.
    pub fn control_from_field(
        &self,
        t: f64,
        snapshot: &StateSnapshot,
        field: Option<&SpaceTimeField>,
    ) -> Result<ControlEval> {
        let aux = self.aux_values();
        let k = self.spec.k;
        let field = if self.needs_field() { field } else { None };
        let mut values = Vec::with_capacity(self.laws.len());
        let mut exit_times = Vec::with_capacity(self.laws.len());
        let mut feet = Vec::with_capacity(self.laws.len());
        for (law, a) in self.laws.iter().zip(&aux) {
            match (law.level, field) {
                (Some(level), Some(field)) => {
                    let fp = foot_points(field, &self.spec, t, law.component)?;
                    let args: Vec<f64> = fp
                        .feet
                        .iter()
                        .enumerate()
                        .map(|(q, &x)| snapshot.interp(k + q, x))
                        .collect();
                    let mval = self.maps.solve_level(level, &args)?[0];
                    values.push(a.zeta + (1.0 - a.eta) * mval);
                    exit_times.push(Some(fp.exit_time));
                    feet.push(fp.feet);
                }
                _ => {
                    values.push(a.zeta);
                    exit_times.push(None);
                    feet.push(Vec::new());
                }
            }
        }
        Ok(ControlEval {
            time: t,
            values,
            exit_times,
            feet,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentZeroing {
    /// 1-based component index.
    pub component: usize,
    /// From this recorded time on, `|w_i(t, 0)|` stays below tolerance.
    pub boundary_zero_time: Option<f64>,
    /// From this recorded time on, `sup_x |w_i(t, x)|` stays below tolerance.
    pub domain_zero_time: Option<f64>,
    /// Time predicted by the characteristic argument for the boundary value.
    pub predicted_boundary: Option<f64>,
    /// Time predicted for the whole component.
    pub predicted_domain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitCheck {
    /// 1-based family index.
    pub family: usize,
    pub measured: f64,
    pub tau: f64,
    pub within_quarter_delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroingReport {
    pub tolerance: f64,
    pub delta: f64,
    pub components: Vec<ComponentZeroing>,
    pub transit: Vec<TransitCheck>,
}

impl ZeroingReport {
    pub fn transit_ok(&self) -> bool {
        self.transit.iter().all(|t| t.within_quarter_delta)
    }
}

fn settle_time(times: &[f64], values: impl Iterator<Item = f64>, tol: f64) -> Option<f64> {
    let mut settled = None;
    for (t, v) in times.iter().zip(values) {
        if v > tol {
            settled = None;
        } else if settled.is_none() {
            settled = Some(*t);
        }
    }
    settled
}

/// Measured zeroing times against the characteristic schedule.
///
/// Transit times `t̂` come from the recorded field: leftward families are
/// launched at `(δ/2, 1)`, rightward family `j` at `(δ/2 + t̂_p, 0)` where `p`
/// is the channel that clears row `j` of `B` (or the slowest one if none does).
pub fn schedule_diagnostics(trajectory: &Trajectory, spec: &SystemSpec, tolerance: f64) -> Result<ZeroingReport> {
    let field = trajectory.field()?;
    let (k, m, n) = (spec.k, spec.m, spec.n());
    let delta = trajectory.times.delta;
    let tau = &trajectory.times.tau;
    let half = 0.5 * delta;
    let mut hat = vec![f64::NAN; n];
    let mut transit = Vec::new();
    for c in k..n {
        let tc = match exit_time(&field, spec, c, half) {
            Ok(v) => v,
            Err(Error::HorizonExhausted { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        hat[c] = tc;
    }
    let laws = channel_laws(k, m);
    let slowest = (k..n).map(|c| hat[c]).fold(0.0, f64::max);
    // rightward row j is cleared by the channel at level k − j
    let partner = |j: usize| laws.iter().find(|l| l.level.is_some_and(|i| k - i == j)).map(|l| l.component);
    let mut boundary_pred = vec![None; n];
    for j in 0..k {
        let start = half + partner(j).map_or(slowest, |p| hat[p]);
        boundary_pred[j] = Some(start);
        let tr = integrate_flow(&field, spec, j, start.min(field.t_end()), 0.0, field.t_end())?;
        hat[j] = if tr.event == FlowEvent::ReachedOne {
            tr.end_time() - start
        } else {
            f64::INFINITY
        };
    }
    for f in 0..n {
        transit.push(TransitCheck {
            family: f + 1,
            measured: hat[f],
            tau: tau[f],
            within_quarter_delta: (hat[f] - tau[f]).abs() <= 0.25 * delta,
        });
    }
    let times: Vec<f64> = trajectory.snapshots.iter().map(|s| s.time).collect();
    let components = (0..n)
        .map(|i| {
            let at_zero = trajectory.snapshots.iter().map(|s| s.component(i)[0].abs());
            let sup = trajectory
                .snapshots
                .iter()
                .map(|s| s.component(i).iter().fold(0.0f64, |a, v| a.max(v.abs())));
            let predicted_domain = if i < k {
                boundary_pred[i].unwrap_or(f64::NAN) + hat[i]
            } else if laws[i - k].level.is_some() {
                half + slowest
            } else {
                half + hat[i]
            };
            ComponentZeroing {
                component: i + 1,
                boundary_zero_time: settle_time(&times, at_zero, tolerance),
                domain_zero_time: settle_time(&times, sup, tolerance),
                predicted_boundary: boundary_pred[i],
                predicted_domain,
            }
        })
        .collect();
    Ok(ZeroingReport {
        tolerance,
        delta,
        components,
        transit,
    })
}
