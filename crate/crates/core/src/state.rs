//! Uniform grids and sampled states `w(t, ·)`.

use serde::{Deserialize, Serialize};

/// Uniform node grid `x_i = i / cells` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub cells: usize,
}

impl Grid {
    pub fn new(cells: usize) -> Self {
        assert!(cells >= 1, "grid needs at least one cell");
        Self { cells }
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.cells as f64
    }
}

/// `w(t, ·)` sampled on a uniform grid, stored component-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub time: f64,
    pub grid: Grid,
    pub components: usize,
    data: Vec<f64>,
}

impl StateSnapshot {
    pub fn zeros(time: f64, grid: Grid, components: usize) -> Self {
        Self {
            time,
            grid,
            components,
            data: vec![0.0; components * grid.nodes()],
        }
    }

    /// Samples `f(i, x)` for every component `i` (0-based) and node.
    pub fn from_fn(
        time: f64,
        grid: Grid,
        components: usize,
        mut f: impl FnMut(usize, f64) -> f64,
    ) -> Self {
        let mut s = Self::zeros(time, grid, components);
        for i in 0..components {
            for (node, v) in s.component_mut(i).iter_mut().enumerate() {
                *v = f(i, grid.x(node));
            }
        }
        s
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let n = self.grid.nodes();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.nodes();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// All components at one node.
    pub fn node(&self, node: usize) -> Vec<f64> {
        (0..self.components)
            .map(|i| self.component(i)[node])
            .collect()
    }

    /// Linear interpolation of component `i` at `x`, clamped to `[0, 1]`.
    pub fn interp(&self, i: usize, x: f64) -> f64 {
        let (lo, frac) = locate(self.grid, x);
        let c = self.component(i);
        if frac == 0.0 {
            c[lo]
        } else {
            c[lo] + frac * (c[lo + 1] - c[lo])
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest discrete slope: centred differences inside, one-sided at the ends.
    pub fn sup_slope(&self) -> f64 {
        let dx = self.grid.dx();
        let n = self.grid.nodes();
        let mut best = 0.0f64;
        for i in 0..self.components {
            let c = self.component(i);
            for node in 0..n {
                let d = if node == 0 {
                    (c[1] - c[0]) / dx
                } else if node == n - 1 {
                    (c[n - 1] - c[n - 2]) / dx
                } else {
                    (c[node + 1] - c[node - 1]) / (2.0 * dx)
                };
                best = best.max(d.abs());
            }
        }
        best
    }

    /// Discrete `C¹([0,1])` norm: `sup|w| + sup|∂ₓw|`.
    pub fn c1_norm(&self) -> f64 {
        self.sup_norm() + self.sup_slope()
    }

    pub fn max_abs_diff(&self, other: &StateSnapshot) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Cell index and fractional offset of `x` (clamped to `[0, 1]`).
pub(crate) fn locate(grid: Grid, x: f64) -> (usize, f64) {
    let s = x.clamp(0.0, 1.0) * grid.cells as f64;
    let lo = (s.floor() as usize).min(grid.cells - 1);
    (lo, s - lo as f64)
}

/// Second-order one-sided derivative at `x = 0`.
pub fn slope_left(values: &[f64], dx: f64) -> f64 {
    (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx)
}

/// Second-order one-sided derivative at `x = 1`.
pub fn slope_right(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx)
}
