//! Forward prediction of the field inside the determinacy cone of the
//! current state.
//!
//! The solve uses the closed-loop upwind scheme with the `x = 0` boundary
//! condition and an artificial right edge for the leftward components. The
//! edge starts at `x = 1` and follows a lower bound of the cone speed, with a
//! margin that covers the numerical spreading of the scheme. Values to the
//! right of the edge carry no accuracy contract.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flows::SpaceTimeField;
use crate::model::SystemSpec;
use crate::sim::Stepper;
use crate::state::{Grid, StateSnapshot};

/// How leftward components are filled at the artificial right edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-order extrapolation of the adjacent interior value.
    #[default]
    Copy,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub padding: Padding,
    /// Lower bound of the speed of the slowest family whose cone is needed;
    /// `None` keeps the whole domain active.
    pub cone_speed: Option<f64>,
}

/// Reusable predictor bound to one system and grid.
#[derive(Debug, Clone)]
pub struct Predictor {
    stepper: Stepper,
    pub config: PredictorConfig,
}

impl Predictor {
    pub fn new(spec: &SystemSpec, grid: Grid, config: PredictorConfig) -> Result<Self> {
        Ok(Self {
            stepper: Stepper::new(spec, grid)?,
            config,
        })
    }

    pub fn predict(&self, snapshot: &StateSnapshot) -> Result<SpaceTimeField> {
        let cfg = self.config;
        let spec = self.stepper.spec();
        let (k, n) = (spec.k, spec.n());
        let grid = snapshot.grid;
        let cells = grid.cells;
        let steps = (cfg.horizon / cfg.dt).ceil().max(1.0) as usize;
        let mut field = SpaceTimeField::new(snapshot.time, cfg.dt, snapshot.clone());
        let mut cur = snapshot.clone();
        let mut control = vec![0.0; n - k];
        for p in 0..steps {
            let active = match cfg.cone_speed {
                Some(speed) => {
                    let s = p as f64 * cfg.dt;
                    let edge = ((1.0 - s * speed) / grid.dx()).ceil().max(0.0);
                    let margin = 4.0 + (3.0 * (p as f64).sqrt()).ceil();
                    ((edge + margin) as usize).min(cells)
                }
                None => cells,
            };
            for (c, slot) in control.iter_mut().enumerate() {
                let comp = cur.component_mut(k + c);
                let pad = match cfg.padding {
                    Padding::Copy => comp[if active < cells { active } else { cells - 1 }],
                    Padding::Zero => 0.0,
                };
                if active < cells {
                    comp[active + 1] = pad;
                }
                *slot = pad;
            }
            let time = cur.time + cfg.dt;
            cur = self.stepper.step_active(&cur, &control, cfg.dt, active)?;
            cur.time = time;
            field.push(cur.clone());
        }
        Ok(field)
    }
}

/// One-shot prediction over the whole domain.
pub fn predict_cone(
    snapshot: &StateSnapshot,
    spec: &SystemSpec,
    horizon: f64,
    dt: f64,
    padding: Padding,
) -> Result<SpaceTimeField> {
    Predictor::new(
        spec,
        snapshot.grid,
        PredictorConfig {
            dt,
            horizon,
            padding,
            cone_speed: None,
        },
    )?
    .predict(snapshot)
}
