//! Scenario files: the system, horizon, initial data, and run settings in one
//! TOML document.
//!
//! ```toml
//! name = "scalar-pair"
//! k = 1
//! m = 1
//! speeds = ["1", "1"]
//! boundary = ["0.5*y2 + y2^2"]
//! horizon = 2.4            # or: horizon_margin = 0.4  (T = T_opt + margin)
//!
//! [aux]                    # optional
//! alpha = 1.0
//! beta = 4.0
//!
//! [initial]
//! amplitude = 1e-2
//! seed = 1
//!
//! [run]                    # optional, defaults shown
//! cells = 400
//! cfl = 0.9
//! record_stride = 1
//! zero_tolerance = 1e-4
//! box_radius = 1.0
//! padding = "copy"
//! cone_restriction = true
//!
//! [picard]                 # optional
//! iterations = 8
//! l1 = 8.0
//! l2 = 4.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_times, make_compatible_initial_data, SystemSpec, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::picard::PicardConfig;
use crate::predictor::Padding;
use crate::sim::RunConfig;
use crate::state::{Grid, StateSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl Default for AuxSection {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            amplitude: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub cells: usize,
    pub cfl: f64,
    pub record_stride: usize,
    pub zero_tolerance: f64,
    pub box_radius: f64,
    pub padding: Padding,
    pub cone_restriction: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunConfig::default();
        Self {
            cells: d.cells,
            cfl: d.cfl,
            record_stride: d.record_stride,
            zero_tolerance: d.zero_tolerance,
            box_radius: d.box_radius,
            padding: d.padding,
            cone_restriction: d.cone_restriction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub iterations: usize,
    pub l1: f64,
    pub l2: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        Self {
            iterations: 8,
            l1: 8.0,
            l2: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub k: usize,
    pub m: usize,
    pub speeds: Vec<String>,
    pub boundary: Vec<String>,
    pub horizon: Option<f64>,
    pub horizon_margin: Option<f64>,
    #[serde(default)]
    pub aux: AuxSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub picard: PicardSection,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parsed system with the horizon resolved.
    pub fn spec(&self) -> Result<SystemSpec> {
        let speeds: Vec<&str> = self.speeds.iter().map(String::as_str).collect();
        let boundary: Vec<&str> = self.boundary.iter().map(String::as_str).collect();
        let spec = SystemSpec::parse(self.k, self.m, &speeds, &boundary, 0.0)?
            .with_aux_constants(self.aux.alpha, self.aux.beta);
        let horizon = match (self.horizon, self.horizon_margin) {
            (Some(t), None) => t,
            (None, Some(margin)) => compute_times(&spec)?.t_opt + margin,
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either horizon or horizon_margin, not both".into()))
            }
            (None, None) => return Err(Error::Config("missing horizon or horizon_margin".into())),
        };
        Ok(spec.with_horizon(horizon))
    }

    pub fn run_config(&self) -> RunConfig {
        let r = &self.run;
        RunConfig {
            cells: r.cells,
            cfl: r.cfl,
            record_stride: r.record_stride,
            zero_tolerance: r.zero_tolerance,
            box_radius: r.box_radius,
            padding: r.padding,
            cone_restriction: r.cone_restriction,
        }
    }

    pub fn picard_config(&self) -> PicardConfig {
        PicardConfig {
            iterations: self.picard.iterations,
            l1: self.picard.l1,
            l2: self.picard.l2,
        }
    }

    /// Compatible initial data on `cells` cells.
    pub fn initial_data(&self, spec: &SystemSpec, cells: usize) -> Result<StateSnapshot> {
        make_compatible_initial_data(spec, self.initial.amplitude, self.initial.seed, Grid::new(cells))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_file() {
        let s = Scenario::from_toml(
            r#"
            k = 1
            m = 1
            speeds = ["1", "1"]
            boundary = ["0.5*y2"]
            horizon_margin = 0.4
            "#,
        )
        .unwrap();
        let spec = s.spec().unwrap();
        assert!((spec.horizon - 2.4).abs() < 1e-12);
        assert_eq!(s.run_config(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_double_horizon() {
        assert!(Scenario::from_toml("k = 1\nm = 1\nspeeds = []\nboundary = []\nfoo = 2").is_err());
        let s = Scenario::from_toml(
            "k = 1\nm = 1\nspeeds = [\"1\", \"1\"]\nboundary = [\"y2\"]\nhorizon = 3.0\nhorizon_margin = 1.0",
        )
        .unwrap();
        assert!(s.spec().is_err());
    }

    #[test]
    fn padding_names() {
        let s = Scenario::from_toml(
            "k = 1\nm = 1\nspeeds = [\"1\", \"1\"]\nboundary = [\"y2\"]\nhorizon = 3.0\n[run]\npadding = \"zero\"",
        )
        .unwrap();
        assert_eq!(s.run.padding, Padding::Zero);
    }
}
