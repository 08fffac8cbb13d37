//! Implicit boundary maps `M_1..M_k`.
//!
//! Level `i` takes the last `i` rows of `B(y₊) = 0` and solves them for the
//! last `i` unknowns `y_{k+m−i+1}..y_{k+m}` given the leading `m − i`
//! entries. The map `M_j` (with `i = k − j + 1`) returns the first solved
//! unknown, `y_{m+j}`. Levels exist for `i = 1..min(k, m − 1)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{check_class_b, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub trust_radius: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
            trust_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    /// Number of equations and unknowns.
    size: usize,
    /// `−J_unk⁻¹ J_args` at the origin: the linearised map, used as the Newton start.
    linear: DMatrix<f64>,
}

/// Solver handles for the reduced boundary maps of one system.
#[derive(Debug, Clone)]
pub struct ReducedMaps {
    spec: SystemSpec,
    levels: Vec<Level>,
    pub settings: NewtonSettings,
}

impl ReducedMaps {
    pub fn build(spec: &SystemSpec) -> Result<Self> {
        Self::with_settings(spec, NewtonSettings::default())
    }

    pub fn with_settings(spec: &SystemSpec, settings: NewtonSettings) -> Result<Self> {
        let class_b = check_class_b(spec)?;
        if !class_b.member {
            let order = class_b
                .minor_dets
                .iter()
                .position(|d| d.abs() <= spec.tolerances.minor)
                .map_or(1, |p| p + 1);
            return Err(Error::NotClassB { order });
        }
        let (k, m) = (spec.k, spec.m);
        let jac = spec.boundary_jacobian(&vec![0.0; m])?;
        let count = k.min(m - 1);
        let levels = (1..=count)
            .map(|i| {
                let unk = jac.view((k - i, m - i), (i, i)).clone_owned();
                let args = jac.view((k - i, 0), (i, m - i)).clone_owned();
                let lu = unk.lu();
                let linear = lu
                    .solve(&(-args))
                    .ok_or(Error::NotClassB { order: i })?;
                Ok(Level { size: i, linear })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            levels,
            settings,
        })
    }

    /// Number of levels, `min(k, m − 1)`.
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Indices `j` of the maps `M_j` that exist, ascending.
    pub fn map_indices(&self) -> Vec<usize> {
        let k = self.spec.k;
        (1..=self.levels.len()).rev().map(|i| k - i + 1).collect()
    }

    /// Argument count of level `i`.
    pub fn arg_count(&self, level: usize) -> usize {
        self.spec.m - level
    }

    /// Solves level `i` jointly; returns `y_{k+m−i+1}..y_{k+m}`.
    pub fn solve_level(&self, level: usize, args: &[f64]) -> Result<Vec<f64>> {
        let lv = self
            .levels
            .get(level.wrapping_sub(1))
            .unwrap_or_else(|| panic!("level {level} does not exist"));
        let (k, m) = (self.spec.k, self.spec.m);
        let i = lv.size;
        assert_eq!(args.len(), m - i, "level {i} takes {} arguments", m - i);
        let norm = args.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm > self.settings.trust_radius * (1.0 + 1e-12) {
            return Err(Error::OutsideTrustRadius {
                norm,
                radius: self.settings.trust_radius,
            });
        }

        let mut y = vec![0.0; m];
        y[..m - i].copy_from_slice(args);
        let start = &lv.linear * DVector::from_column_slice(args);
        y[m - i..].copy_from_slice(start.as_slice());

        let rows = &self.spec.boundary[k - i..];
        let mut residual = f64::INFINITY;
        for iter in 0..=self.settings.max_iterations {
            let mut r = DVector::zeros(i);
            let mut jac = DMatrix::zeros(i, i);
            for (row, b) in rows.iter().enumerate() {
                let d = b.eval_dual(&y)?;
                r[row] = d.value;
                for col in 0..i {
                    jac[(row, col)] = d.partials[m - i + col];
                }
            }
            residual = r.amax();
            if residual <= self.settings.tolerance {
                return Ok(y[m - i..].to_vec());
            }
            if iter == self.settings.max_iterations {
                break;
            }
            let step = jac.lu().solve(&r).ok_or(Error::NewtonFailed {
                level: i,
                iterations: iter,
                residual,
            })?;
            for col in 0..i {
                y[m - i + col] -= step[col];
            }
        }
        Err(Error::NewtonFailed {
            level: i,
            iterations: self.settings.max_iterations,
            residual,
        })
    }

    /// `M_j(args)`, `j = 1..k`, with `m − k + j − 1` arguments.
    pub fn eval_m(&self, j: usize, args: &[f64]) -> Result<f64> {
        let k = self.spec.k;
        assert!(j >= 1 && j <= k, "map index {j} out of 1..={k}");
        let level = k - j + 1;
        Ok(self.solve_level(level, args)?[0])
    }

    /// Gradient of the linearised map at the origin for level `i` (rows: unknowns).
    pub fn linearization(&self, level: usize) -> &DMatrix<f64> {
        &self.levels[level - 1].linear
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, m: usize, speeds: &[&str], bmap: &[&str]) -> SystemSpec {
        SystemSpec::parse(k, m, speeds, bmap, 3.0).unwrap()
    }

    #[test]
    fn map_counts() {
        let s = spec(1, 2, &["1", "1", "2"], &["y2 + 2*y3"]);
        let maps = ReducedMaps::build(&s).unwrap();
        assert_eq!(maps.level_count(), 1);
        assert_eq!(maps.map_indices(), vec![1]);

        let s = spec(
            2,
            3,
            &["2", "1", "1", "2", "3"],
            &["y3 + y4 + y5", "y3 + 2*y4 + 3*y5"],
        );
        let maps = ReducedMaps::build(&s).unwrap();
        assert_eq!(maps.map_indices(), vec![1, 2]);
        // M_2 over (y3, y4); M_1 over (y3)
        assert_eq!(maps.arg_count(1), 2);
        assert_eq!(maps.arg_count(2), 1);

        let s = spec(1, 1, &["1", "1"], &["0.5*y2"]);
        assert_eq!(ReducedMaps::build(&s).unwrap().level_count(), 0);
    }

    #[test]
    fn quadratic_root() {
        let s = spec(1, 2, &["1", "1", "2"], &["y2 + 2*y3 + y3^2"]);
        let maps = ReducedMaps::build(&s).unwrap();
        let v = maps.eval_m(1, &[0.19]).unwrap();
        assert!((v - (-0.1)).abs() < 1e-12, "{v}");
        assert_eq!(maps.eval_m(1, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_map() {
        let s = spec(1, 2, &["1", "1", "2"], &["y2 + 2*y3"]);
        let maps = ReducedMaps::build(&s).unwrap();
        assert!((maps.eval_m(1, &[0.3]).unwrap() + 0.15).abs() < 1e-15);
    }

    #[test]
    fn trust_radius_and_class_b_errors() {
        let s = spec(1, 2, &["1", "1", "2"], &["y2 + 2*y3"]);
        let maps = ReducedMaps::build(&s).unwrap();
        assert!(matches!(
            maps.eval_m(1, &[0.6]),
            Err(Error::OutsideTrustRadius { .. })
        ));
        let s = spec(1, 2, &["1", "1", "2"], &["y2 + y3^2"]);
        assert!(matches!(
            ReducedMaps::build(&s),
            Err(Error::NotClassB { order: 1 })
        ));
    }

    #[test]
    fn newton_failure_reported() {
        // no real root once y2 > 1
        let s = spec(1, 2, &["1", "1", "2"], &["y2 + 2*y3 + y3^2"]);
        let mut maps = ReducedMaps::build(&s).unwrap();
        maps.settings.trust_radius = 2.0;
        assert!(matches!(
            maps.eval_m(1, &[1.5]),
            Err(Error::NewtonFailed { level: 1, .. })
        ));
    }
}
