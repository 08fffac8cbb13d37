//! System description `∂ₜw = Σ(x, w) ∂ₓw` with `w₋(t,0) = B(w₊(t,0))`, and the
//! checks and derived quantities that only depend on it.
//!
//! Components are indexed 1-based in names and documentation (`w_1..w_n`) and
//! 0-based in code. The first `k` components travel rightward (`Σ` entry
//! `−λ_i`), the last `m` leftward (`+λ_i`).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exprs::{parse, Expr, Program, VarSpace};
use crate::quad::adaptive_simpson;
use crate::state::{slope_left, Grid, StateSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// `|B(0)|` allowed by validation.
    pub boundary_at_zero: f64,
    /// Minor threshold for the class-B test, relative to the largest entry.
    pub minor: f64,
    /// Absolute error target of the transit-time quadrature.
    pub quadrature: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            boundary_at_zero: 1e-12,
            minor: 1e-10,
            quadrature: 1e-12,
        }
    }
}

/// The hyperbolic system, its boundary map at `x = 0`, and run-independent constants.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub k: usize,
    pub m: usize,
    /// `λ_1..λ_n` over `(x, y1..yn)`, all positive.
    speeds: Vec<Expr>,
    /// `B_1..B_k` over `(y_{k+1}..y_{k+m})`.
    pub boundary: Vec<Expr>,
    pub horizon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tolerances: Tolerances,
    compiled: Vec<Program>,
}

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 4.0;

impl SystemSpec {
    /// Parses speed and boundary expressions; `T` and `α, β` are taken as given.
    pub fn parse(
        k: usize,
        m: usize,
        speeds: &[&str],
        boundary: &[&str],
        horizon: f64,
    ) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::InvalidSpec(format!(
                "need k >= 1 and m >= 1, got k = {k}, m = {m}"
            )));
        }
        let n = k + m;
        if speeds.len() != n {
            return Err(Error::InvalidSpec(format!(
                "{} speeds given for n = {n} components",
                speeds.len()
            )));
        }
        if boundary.len() != k {
            return Err(Error::InvalidSpec(format!(
                "{} boundary components given for k = {k}",
                boundary.len()
            )));
        }
        let sspace = VarSpace::speeds(n);
        let bspace = VarSpace::boundary(k, m);
        let speeds = speeds
            .iter()
            .enumerate()
            .map(|(i, s)| {
                parse(s, &sspace).map_err(|source| Error::Parse {
                    what: format!("lambda[{}]", i + 1),
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let boundary = boundary
            .iter()
            .enumerate()
            .map(|(r, s)| {
                parse(s, &bspace).map_err(|source| Error::Parse {
                    what: format!("bmap[{}]", r + 1),
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k,
            m,
            compiled: speeds.iter().map(Program::new).collect(),
            speeds,
            boundary,
            horizon,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            tolerances: Tolerances::default(),
        })
    }

    pub fn with_aux_constants(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn n(&self) -> usize {
        self.k + self.m
    }

    /// True for the components travelling toward `x = 1` (0-based index).
    pub fn is_rightward(&self, i: usize) -> bool {
        i < self.k
    }

    /// `λ_1..λ_n` over `(x, y1..yn)`.
    pub fn speed_exprs(&self) -> &[Expr] {
        &self.speeds
    }

    /// `λ_i(x, y)` with `binding = [x, y1..yn]`.
    pub fn speed(&self, i: usize, binding: &[f64]) -> Result<f64> {
        Ok(self.compiled[i].eval(binding)?)
    }

    /// `B(y₊)`.
    pub fn boundary_map(&self, y_plus: &[f64]) -> Result<Vec<f64>> {
        self.boundary
            .iter()
            .map(|b| b.eval(y_plus).map_err(Error::from))
            .collect()
    }

    /// `∇B(y₊)` as a `k × m` matrix.
    pub fn boundary_jacobian(&self, y_plus: &[f64]) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.k, self.m);
        for (r, b) in self.boundary.iter().enumerate() {
            let d = b.eval_dual(y_plus)?;
            for c in 0..self.m {
                jac[(r, c)] = d.partials[c];
            }
        }
        Ok(jac)
    }

    /// Largest speed over the validation lattice of radius `r`.
    pub fn max_speed_bound(&self, r: f64) -> Result<f64> {
        let mut best = 0.0f64;
        for_each_lattice_point(self.n(), r, |binding| {
            for i in 0..self.n() {
                best = best.max(self.speed(i, binding)?);
            }
            Ok(())
        })?;
        Ok(best)
    }

    /// Smallest speed of family `i` (0-based) over the validation lattice of radius `r`.
    pub fn min_speed_bound(&self, i: usize, r: f64) -> Result<f64> {
        let mut best = f64::INFINITY;
        for_each_lattice_point(self.n(), r, |binding| {
            best = best.min(self.speed(i, binding)?);
            Ok(())
        })?;
        Ok(best)
    }
}

const LATTICE_X: usize = 33;
const LATTICE_Y: usize = 5;

/// Visits the `33 × 5ⁿ` lattice on `[0,1] × [−r, r]ⁿ` as bindings `[x, y1..yn]`.
fn for_each_lattice_point(
    n: usize,
    r: f64,
    mut visit: impl FnMut(&[f64]) -> Result<()>,
) -> Result<()> {
    let mut binding = vec![0.0; n + 1];
    let ys: Vec<f64> = (0..LATTICE_Y)
        .map(|q| -r + 2.0 * r * q as f64 / (LATTICE_Y - 1) as f64)
        .collect();
    let total = LATTICE_Y.pow(n as u32);
    for ix in 0..LATTICE_X {
        binding[0] = ix as f64 / (LATTICE_X - 1) as f64;
        for code in 0..total {
            let mut c = code;
            for slot in binding.iter_mut().skip(1) {
                *slot = ys[c % LATTICE_Y];
                c /= LATTICE_Y;
            }
            visit(&binding)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// First violating sample, when the check failed at a point.
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub box_radius: f64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks the speed ordering on the validation lattice, `B(0) = 0`, and the
/// auxiliary-dynamics constants.
pub fn validate_spec(spec: &SystemSpec, box_radius: f64) -> ValidationReport {
    let mut checks = vec![ordering_check(spec, box_radius)];

    let zero = vec![0.0; spec.m];
    checks.push(match spec.boundary_map(&zero) {
        Ok(b0) => {
            let worst = b0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Check {
                name: "boundary_at_zero".into(),
                passed: worst <= spec.tolerances.boundary_at_zero,
                detail: format!("|B(0)| = {worst:e}"),
                point: (worst > spec.tolerances.boundary_at_zero).then(|| zero.clone()),
            }
        }
        Err(e) => Check {
            name: "boundary_at_zero".into(),
            passed: false,
            detail: e.to_string(),
            point: Some(zero.clone()),
        },
    });

    let (a, b) = (spec.alpha, spec.beta);
    let disc = a * a + b * b - 4.0 * a * b;
    checks.push(Check {
        name: "aux_constants".into(),
        passed: a != b && disc > 0.0 && a > 0.0 && b > 0.0,
        detail: format!("alpha = {a}, beta = {b}, alpha^2 + beta^2 - 4 alpha beta = {disc}"),
        point: None,
    });

    checks.push(Check {
        name: "horizon_positive".into(),
        passed: spec.horizon > 0.0 && spec.horizon.is_finite(),
        detail: format!("T = {}", spec.horizon),
        point: None,
    });

    ValidationReport {
        passed: checks.iter().all(|c| c.passed),
        box_radius,
        checks,
    }
}

fn ordering_check(spec: &SystemSpec, r: f64) -> Check {
    let (k, n) = (spec.k, spec.n());
    let mut lambdas = vec![0.0; n];
    let mut failure: Option<(String, Vec<f64>)> = None;
    let outcome = for_each_lattice_point(n, r, |binding| {
        for (i, l) in lambdas.iter_mut().enumerate() {
            *l = spec.speed(i, binding)?;
        }
        let msg = if let Some(i) = lambdas.iter().position(|&l| l <= 0.0) {
            Some(format!("lambda[{}] = {} <= 0", i + 1, lambdas[i]))
        } else if let Some(i) = (1..k).find(|&i| lambdas[i - 1] <= lambdas[i]) {
            Some(format!(
                "rightward block not decreasing: lambda[{}] = {} <= lambda[{}] = {}",
                i,
                lambdas[i - 1],
                i + 1,
                lambdas[i]
            ))
        } else {
            (k + 1..n)
                .find(|&i| lambdas[i - 1] >= lambdas[i])
                .map(|i| {
                    format!(
                        "leftward block not increasing: lambda[{}] = {} >= lambda[{}] = {}",
                        i,
                        lambdas[i - 1],
                        i + 1,
                        lambdas[i]
                    )
                })
        };
        if let Some(msg) = msg {
            failure = Some((msg, binding.to_vec()));
            // stop at the first violation
            return Err(Error::InvalidSpec(String::new()));
        }
        Ok(())
    });
    match (outcome, failure) {
        (Ok(()), _) => Check {
            name: "speed_ordering".into(),
            passed: true,
            detail: format!("ordering holds on the 33 x 5^{n} lattice, r = {r}"),
            point: None,
        },
        (Err(_), Some((detail, point))) => Check {
            name: "speed_ordering".into(),
            passed: false,
            detail,
            point: Some(point),
        },
        (Err(e), None) => Check {
            name: "speed_ordering".into(),
            passed: false,
            detail: e.to_string(),
            point: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimesReport {
    pub tau: Vec<f64>,
    pub t_opt: f64,
    pub delta: f64,
}

/// `τ_i = ∫₀¹ dx / λ_i(x, 0)`.
pub fn compute_tau(spec: &SystemSpec) -> Result<Vec<f64>> {
    let n = spec.n();
    (0..n)
        .map(|i| {
            let mut binding = vec![0.0; n + 1];
            adaptive_simpson(
                |x| {
                    binding[0] = x;
                    let l = spec.speed(i, &binding)?;
                    if l <= 0.0 {
                        return Err(Error::NonPositiveSpeed {
                            family: i + 1,
                            x,
                            value: l,
                        });
                    }
                    Ok(1.0 / l)
                },
                0.0,
                1.0,
                spec.tolerances.quadrature,
            )
        })
        .collect()
}

/// Minimal control time from the transit times.
pub fn compute_topt(tau: &[f64], k: usize, m: usize) -> f64 {
    assert_eq!(tau.len(), k + m, "tau must have k + m entries");
    // tau[j - 1] is τ_j
    let t = |j: usize| tau[j - 1];
    if m >= k {
        (1..=k)
            .map(|i| t(i) + t(m + i))
            .fold(t(k + 1), f64::max)
    } else {
        (1..=m)
            .map(|i| t(k + i - m) + t(k + i))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn compute_times(spec: &SystemSpec) -> Result<TimesReport> {
    let tau = compute_tau(spec)?;
    let t_opt = compute_topt(&tau, spec.k, spec.m);
    Ok(TimesReport {
        tau,
        t_opt,
        delta: spec.horizon - t_opt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassBReport {
    pub member: bool,
    /// Determinants of the trailing `i × i` blocks, `i = 1..min(m−1, k)`.
    pub minor_dets: Vec<f64>,
}

/// Trailing-minor determinants of a `k × m` matrix and the class-B verdict.
pub fn class_b_minors(b: &DMatrix<f64>, tol: f64) -> ClassBReport {
    let (k, m) = b.shape();
    let levels = k.min(m.saturating_sub(1));
    let scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let minor_dets: Vec<f64> = (1..=levels)
        .map(|i| b.view((k - i, m - i), (i, i)).clone_owned().determinant())
        .collect();
    let member = minor_dets
        .iter()
        .enumerate()
        .all(|(idx, d)| scale > 0.0 && d.abs() > tol * scale.powi(idx as i32 + 1));
    ClassBReport { member, minor_dets }
}

pub fn check_class_b(spec: &SystemSpec) -> Result<ClassBReport> {
    let jac = spec.boundary_jacobian(&vec![0.0; spec.m])?;
    Ok(class_b_minors(&jac, spec.tolerances.minor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompatibilityResiduals {
    /// `|w₀,₋(0) − B(w₀,₊(0))|_∞`.
    pub zeroth: f64,
    /// `|Σ₋∂ₓw₀,₋(0) − ∇B(w₀,₊(0)) Σ₊∂ₓw₀,₊(0)|_∞`.
    pub first: f64,
}

/// Corner compatibility residuals at `x = 0`, slopes by second-order one-sided stencils.
pub fn check_compatibility(spec: &SystemSpec, w0: &StateSnapshot) -> Result<CompatibilityResiduals> {
    let nodes = w0.grid.nodes();
    if nodes < 4 {
        return Err(Error::GridTooCoarse { nodes, required: 4 });
    }
    let (k, n) = (spec.k, spec.n());
    let dx = w0.grid.dx();
    let at0 = w0.node(0);
    let y_plus = &at0[k..];
    let b = spec.boundary_map(y_plus)?;
    let zeroth = (0..k).fold(0.0f64, |a, r| a.max((at0[r] - b[r]).abs()));

    let mut binding = vec![0.0; n + 1];
    binding[1..].copy_from_slice(&at0);
    let lambdas = (0..n)
        .map(|i| spec.speed(i, &binding))
        .collect::<Result<Vec<_>>>()?;
    let slopes: Vec<f64> = (0..n).map(|i| slope_left(w0.component(i), dx)).collect();
    let jac = spec.boundary_jacobian(y_plus)?;
    let mut first = 0.0f64;
    for r in 0..k {
        let lhs = -lambdas[r] * slopes[r];
        let rhs: f64 = (0..spec.m)
            .map(|c| jac[(r, c)] * lambdas[k + c] * slopes[k + c])
            .sum();
        first = first.max((lhs - rhs).abs());
    }
    Ok(CompatibilityResiduals { zeroth, first })
}

/// `C²` cutoff: 1 on `[0, 1/8]`, 0 on `[1/2, 1]`, quintic smoothstep between.
fn cutoff(x: f64) -> (f64, f64) {
    const A: f64 = 0.125;
    const B: f64 = 0.5;
    if x <= A {
        (1.0, 0.0)
    } else if x >= B {
        (0.0, 0.0)
    } else {
        let t = (x - A) / (B - A);
        let s = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
        let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t) / (B - A);
        (1.0 - s, -ds)
    }
}

const TRIG_MODES: usize = 3;

/// `Σ_q a_q cos(qπx) + b_q sin(qπx)`, `q = 0..2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrigPoly {
    cos: [f64; TRIG_MODES],
    sin: [f64; TRIG_MODES],
}

impl TrigPoly {
    fn random(rng: &mut impl Rng) -> Self {
        let mut p = Self {
            cos: [0.0; TRIG_MODES],
            sin: [0.0; TRIG_MODES],
        };
        for q in 0..TRIG_MODES {
            p.cos[q] = rng.random_range(-1.0..1.0);
            p.sin[q] = if q == 0 { 0.0 } else { rng.random_range(-1.0..1.0) };
        }
        p
    }

    fn eval(&self, x: f64, scale: f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut d = 0.0;
        for q in 0..TRIG_MODES {
            let w = q as f64 * std::f64::consts::PI;
            let (s, c) = (w * x).sin_cos();
            v += self.cos[q] * c + self.sin[q] * s;
            d += w * (-self.cos[q] * s + self.sin[q] * c);
        }
        (scale * v, scale * d)
    }
}

/// One component `χ(x)(c + d x) + (1 − χ(x)) p(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct BlendedComponent {
    poly: TrigPoly,
    intercept: f64,
    slope: f64,
}

impl BlendedComponent {
    fn eval(&self, x: f64, scale: f64) -> (f64, f64) {
        let (chi, dchi) = cutoff(x);
        let (p, dp) = self.poly.eval(x, scale);
        let line = self.intercept + self.slope * x;
        (
            chi * line + (1.0 - chi) * p,
            dchi * (line - p) + chi * self.slope + (1.0 - chi) * dp,
        )
    }
}

/// Smooth initial data satisfying both corner compatibility conditions at `x = 0`.
///
/// Near `x = 0` every component is exactly affine, so any grid whose first
/// three nodes lie in `[0, 1/8]` (at least 16 cells) reproduces the
/// compatibility conditions to rounding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialProfile {
    components: Vec<BlendedComponent>,
    scale: f64,
}

const PROFILE_SAMPLES: usize = 4096;

impl InitialProfile {
    pub fn zero(n: usize) -> Self {
        Self {
            components: (0..n)
                .map(|_| BlendedComponent {
                    poly: TrigPoly {
                        cos: [0.0; TRIG_MODES],
                        sin: [0.0; TRIG_MODES],
                    },
                    intercept: 0.0,
                    slope: 0.0,
                })
                .collect(),
            scale: 0.0,
        }
    }

    /// Random compatible data with `sup|w| + sup|w′| ≤ amplitude`.
    pub fn generate(spec: &SystemSpec, amplitude: f64, seed: u64) -> Result<Self> {
        let n = spec.n();
        if amplitude <= 0.0 {
            return Ok(Self::zero(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let polys: Vec<TrigPoly> = (0..n).map(|_| TrigPoly::random(&mut rng)).collect();
        let target = 0.9 * amplitude;
        let mut scale = amplitude / 8.0;
        let mut profile = Self::build(spec, &polys, scale)?;
        for _ in 0..60 {
            let norm = profile.c1_norm();
            if norm == 0.0 {
                break;
            }
            if (norm - target).abs() <= 0.02 * target {
                break;
            }
            scale *= target / norm;
            profile = Self::build(spec, &polys, scale)?;
        }
        if profile.c1_norm() > amplitude {
            return Err(Error::InvalidSpec(format!(
                "could not scale initial data below C1 amplitude {amplitude}"
            )));
        }
        Ok(profile)
    }

    fn build(spec: &SystemSpec, polys: &[TrigPoly], scale: f64) -> Result<Self> {
        let (k, m, n) = (spec.k, spec.m, spec.n());
        let mut components: Vec<BlendedComponent> = polys
            .iter()
            .map(|p| BlendedComponent {
                poly: p.clone(),
                intercept: 0.0,
                slope: 0.0,
            })
            .collect();
        // leftward components: affine Taylor part of their own polynomial
        let mut y_plus = vec![0.0; m];
        let mut d_plus = vec![0.0; m];
        for c in 0..m {
            let (v, d) = polys[k + c].eval(0.0, scale);
            y_plus[c] = v;
            d_plus[c] = d;
            components[k + c].intercept = v;
            components[k + c].slope = d;
        }
        // rightward components: value and slope forced by the corner conditions
        let b = spec.boundary_map(&y_plus)?;
        let jac = spec.boundary_jacobian(&y_plus)?;
        let mut binding = vec![0.0; n + 1];
        binding[1..=k].copy_from_slice(&b);
        binding[k + 1..].copy_from_slice(&y_plus);
        let lambdas = (0..n)
            .map(|i| spec.speed(i, &binding))
            .collect::<Result<Vec<_>>>()?;
        for r in 0..k {
            let rhs: f64 = (0..m)
                .map(|c| jac[(r, c)] * lambdas[k + c] * d_plus[c])
                .sum();
            components[r].intercept = b[r];
            components[r].slope = -rhs / lambdas[r];
        }
        Ok(Self { components, scale })
    }

    /// Value and slope of component `i` at `x`.
    pub fn eval(&self, i: usize, x: f64) -> (f64, f64) {
        self.components[i].eval(x, self.scale)
    }

    /// `sup|w| + sup|w′|` sampled on a fine grid with exact slopes.
    pub fn c1_norm(&self) -> f64 {
        let mut sup = 0.0f64;
        let mut slope = 0.0f64;
        for i in 0..self.components.len() {
            for s in 0..=PROFILE_SAMPLES {
                let (v, d) = self.eval(i, s as f64 / PROFILE_SAMPLES as f64);
                sup = sup.max(v.abs());
                slope = slope.max(d.abs());
            }
        }
        sup + slope
    }

    pub fn sample(&self, grid: Grid) -> StateSnapshot {
        StateSnapshot::from_fn(0.0, grid, self.components.len(), |i, x| self.eval(i, x).0)
    }
}

/// Samples [`InitialProfile::generate`] on `grid` (at least 16 cells).
pub fn make_compatible_initial_data(
    spec: &SystemSpec,
    amplitude: f64,
    seed: u64,
    grid: Grid,
) -> Result<StateSnapshot> {
    if grid.cells < 16 {
        return Err(Error::GridTooCoarse {
            nodes: grid.nodes(),
            required: 17,
        });
    }
    Ok(InitialProfile::generate(spec, amplitude, seed)?.sample(grid))
}
