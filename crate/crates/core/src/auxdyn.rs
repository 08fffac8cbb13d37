//! Auxiliary finite-time-extinction signals `ζ_j`, `η_j` for each control channel.
//!
//! Each signal is the sum `φ + ψ` of a pair obeying
//!
//! ```text
//! φ′ = −c α φ / (φ² + ψ²)^{1/3},    ψ′ = −c β ψ / (φ² + ψ²)^{1/3}
//! ```
//!
//! with `c = 1` for `ζ` and `c = μ^{5/3}` for `η`. The radius
//! `s = (φ² + ψ²)^{1/3}` decreases at a rate in `[2cα/3, 2cβ/3]`, so every
//! pair reaches the origin in finite time and stays there.
//!
//! A pair is stored as `(ζ, ψ)` with `φ = ζ − ψ`. Runge–Kutta steps are
//! invariant under this linear change of variables, and it keeps the initial
//! value `ζ(0) = a` exact.

use serde::Serialize;

use crate::error::{Error, Result};

/// Radius below which a pair is snapped to the origin.
pub const EXTINCTION_RADIUS: f64 = 1e-14;

/// `P_{a,b}(Y) = (α−β)² Y³ − (2b²Y² + 2ab(α+β)Y + a²(α²+β²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CubicProblem {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl CubicProblem {
    pub fn new(a: f64, b: f64, alpha: f64, beta: f64) -> Result<Self> {
        if alpha == beta {
            return Err(Error::Cubic(format!("alpha = beta = {alpha}")));
        }
        let disc = alpha * alpha + beta * beta - 4.0 * alpha * beta;
        if disc <= 0.0 || disc.is_nan() {
            return Err(Error::Cubic(format!(
                "alpha^2 + beta^2 - 4 alpha beta = {disc} is not positive"
            )));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Cubic(format!("non-finite data (a, b) = ({a}, {b})")));
        }
        Ok(Self { a, b, alpha, beta })
    }

    fn lead(&self) -> f64 {
        (self.alpha - self.beta).powi(2)
    }

    /// Terms `[(α−β)²Y³, 2b²Y², 2ab(α+β)Y, a²(α²+β²)]`.
    fn terms(&self, y: f64) -> [f64; 4] {
        let (a, b, al, be) = (self.a, self.b, self.alpha, self.beta);
        [
            self.lead() * y * y * y,
            2.0 * b * b * y * y,
            2.0 * a * b * (al + be) * y,
            a * a * (al * al + be * be),
        ]
    }

    pub fn eval(&self, y: f64) -> f64 {
        let t = self.terms(y);
        t[0] - (t[1] + t[2] + t[3])
    }

    fn derivative(&self, y: f64) -> f64 {
        let (a, b, al, be) = (self.a, self.b, self.alpha, self.beta);
        3.0 * self.lead() * y * y - (4.0 * b * b * y + 2.0 * a * b * (al + be))
    }

    /// Magnitude scale of the terms at `y`, for relative residual checks.
    pub fn scale(&self, y: f64) -> f64 {
        self.terms(y).iter().fold(0.0f64, |m, t| m.max(t.abs()))
    }

    /// Upper end of a bracket containing the nonnegative root.
    pub fn upper_bound(&self) -> f64 {
        let (a, b, al, be) = (self.a, self.b, self.alpha, self.beta);
        1.0 + (2.0 * b * b + 2.0 * (a * b).abs() * (al + be) + a * a * (al * al + be * be))
            / self.lead()
    }
}

/// The root `Ȳ(a, b) ≥ 0` of `P_{a,b}`: zero at the origin, otherwise the unique positive root.
pub fn solve_cubic(p: &CubicProblem) -> Result<f64> {
    let p = CubicProblem::new(p.a, p.b, p.alpha, p.beta)?;
    if p.a == 0.0 {
        // P = Y² ((α−β)² Y − 2b²)
        return Ok(2.0 * p.b * p.b / p.lead());
    }
    let (mut lo, mut hi) = (0.0, p.upper_bound());
    let mut y = hi;
    for _ in 0..400 {
        let val = p.eval(y);
        if val.abs() <= 1e-13 * p.scale(y) {
            return Ok(y);
        }
        if val > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(0.5 * (lo + hi));
        }
        let d = p.derivative(y);
        let newton = y - val / d;
        y = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(0.5 * (lo + hi))
}

/// Initial pair `(φ₀, ψ₀)` with `φ₀ + ψ₀ = a` and `−αφ₀ − βψ₀ = bȲ`.
pub fn init_zeta(a: f64, b: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    let y = solve_cubic(&CubicProblem::new(a, b, alpha, beta)?)?;
    let phi = (beta * a + b * y) / (beta - alpha);
    Ok((phi, a - phi))
}

/// Initial pair for `η`: `μ · init_zeta(1/μ, 0)`, so `η(0) = 1`, `η′(0) = 0`.
pub fn init_eta(mu: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::Cubic(format!("scale mu = {mu} must be positive")));
    }
    let (phi, psi) = init_zeta(1.0 / mu, 0.0, alpha, beta)?;
    Ok((mu * phi, mu * psi))
}

/// One `φ/ψ` pair, stored as `(sum, ψ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxPair {
    sum: f64,
    psi: f64,
    extinct: bool,
}

impl AuxPair {
    pub fn new(phi: f64, psi: f64) -> Self {
        Self::from_sum(phi + psi, psi)
    }

    /// Pair with `φ = sum − ψ`; keeps `sum` exact.
    pub fn from_sum(sum: f64, psi: f64) -> Self {
        let mut p = Self {
            sum,
            psi,
            extinct: false,
        };
        if p.radius() <= EXTINCTION_RADIUS {
            p.snap();
        }
        p
    }

    pub fn phi(&self) -> f64 {
        self.sum - self.psi
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn value(&self) -> f64 {
        self.sum
    }

    pub fn is_extinct(&self) -> bool {
        self.extinct
    }

    pub fn radius(&self) -> f64 {
        self.phi().hypot(self.psi)
    }

    fn snap(&mut self) {
        self.sum = 0.0;
        self.psi = 0.0;
        self.extinct = true;
    }

    /// `(sum′, ψ′)` at `(sum, ψ)`; zero at the origin.
    fn rhs(sum: f64, psi: f64, rate: f64, alpha: f64, beta: f64) -> (f64, f64) {
        let phi = sum - psi;
        let s = (phi * phi + psi * psi).cbrt();
        if s == 0.0 {
            return (0.0, 0.0);
        }
        let dphi = -rate * alpha * phi / s;
        let dpsi = -rate * beta * psi / s;
        (dphi + dpsi, dpsi)
    }

    /// Time derivative of `φ + ψ`.
    pub fn derivative(&self, rate: f64, alpha: f64, beta: f64) -> f64 {
        if self.extinct {
            return 0.0;
        }
        Self::rhs(self.sum, self.psi, rate, alpha, beta).0
    }

    /// Advances by `dt` with RK4 sub-steps no longer than `s / (4 c max(α, β))`.
    ///
    /// Returns the offset within `dt` at which the pair went extinct, if it did.
    pub fn advance(&mut self, dt: f64, rate: f64, alpha: f64, beta: f64) -> Option<f64> {
        if self.extinct {
            return None;
        }
        let speed = 4.0 * rate * alpha.abs().max(beta.abs());
        let mut elapsed = 0.0;
        while elapsed < dt {
            let s = self.radius().powf(2.0 / 3.0);
            let h = (dt - elapsed).min(s / speed);
            let (y0, z0) = (self.sum, self.psi);
            let f = |y: f64, z: f64| Self::rhs(y, z, rate, alpha, beta);
            let k1 = f(y0, z0);
            let k2 = f(y0 + 0.5 * h * k1.0, z0 + 0.5 * h * k1.1);
            let k3 = f(y0 + 0.5 * h * k2.0, z0 + 0.5 * h * k2.1);
            let k4 = f(y0 + h * k3.0, z0 + h * k3.1);
            self.sum = y0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            self.psi = z0 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            elapsed += h;
            if self.radius() <= EXTINCTION_RADIUS {
                self.snap();
                return Some(elapsed.min(dt));
            }
        }
        None
    }
}

/// Time for a pair to go extinct when integrated with macro steps `dt`, capped at `limit`.
pub fn extinction_time(
    mut pair: AuxPair,
    rate: f64,
    alpha: f64,
    beta: f64,
    dt: f64,
    limit: f64,
) -> Option<f64> {
    let mut t = 0.0;
    if pair.is_extinct() {
        return Some(0.0);
    }
    while t < limit {
        let h = dt.min(limit - t);
        if let Some(off) = pair.advance(h, rate, alpha, beta) {
            return Some(t + off);
        }
        t += h;
    }
    None
}

const MU_SEARCH_STEPS: f64 = 400.0;

/// Smallest `μ = 2^p` whose `η` goes extinct before `δ/2`, confirmed by a
/// second integration at half the step.
pub fn choose_mu(alpha: f64, beta: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::MuSearchFailed { deadline: delta / 2.0 });
    }
    let deadline = 0.5 * delta;
    let dt = deadline / MU_SEARCH_STEPS;
    for p in 0..=60 {
        let mu = (p as f64).exp2();
        let (phi, psi) = init_eta(mu, alpha, beta)?;
        let pair = AuxPair::from_sum(1.0, psi);
        debug_assert!((pair.phi() - phi).abs() <= 1e-15 * phi.abs().max(1.0));
        let rate = eta_rate(mu);
        let first = extinction_time(pair, rate, alpha, beta, dt, deadline);
        if first.is_some_and(|t| t < deadline) {
            let second = extinction_time(pair, rate, alpha, beta, 0.5 * dt, deadline);
            if second.is_some_and(|t| t < deadline) {
                return Ok(mu);
            }
        }
    }
    Err(Error::MuSearchFailed { deadline })
}

/// Rate factor `μ^{5/3}` of the `η` pair.
pub fn eta_rate(mu: f64) -> f64 {
    mu.powf(5.0 / 3.0)
}

/// `(ζ, ζ′, η, η′)` of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxValues {
    pub zeta: f64,
    pub dzeta: f64,
    pub eta: f64,
    pub deta: f64,
}

/// Auxiliary state of one control channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxChannel {
    pub zeta: AuxPair,
    pub eta: AuxPair,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub delta: f64,
}

impl AuxChannel {
    /// Channel with `ζ(0) = a`, `ζ′(0) = b`, `η(0) = 1`, `η′(0) = 0`.
    pub fn new(a: f64, b: f64, alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<Self> {
        let (phi, psi) = init_zeta(a, b, alpha, beta)?;
        debug_assert!((phi + psi - a).abs() <= 1e-15 * (phi.abs() + psi.abs()).max(1e-300));
        let (_, eta_psi) = init_eta(mu, alpha, beta)?;
        Ok(Self {
            zeta: AuxPair::from_sum(a, psi),
            eta: AuxPair::from_sum(1.0, eta_psi),
            alpha,
            beta,
            mu,
            delta,
        })
    }

    pub fn step(&mut self, dt: f64) {
        self.zeta.advance(dt, 1.0, self.alpha, self.beta);
        self.eta
            .advance(dt, eta_rate(self.mu), self.alpha, self.beta);
    }

    pub fn values(&self) -> AuxValues {
        zeta_eta_values(self)
    }

    /// Extinction time of `ζ` from the current state (macro step `dt`, capped at `limit`).
    pub fn zeta_extinction(&self, dt: f64, limit: f64) -> Option<f64> {
        extinction_time(self.zeta, 1.0, self.alpha, self.beta, dt, limit)
    }
}

pub fn step_aux(channel: &mut AuxChannel, dt: f64) {
    channel.step(dt);
}

pub fn zeta_eta_values(ch: &AuxChannel) -> AuxValues {
    AuxValues {
        zeta: ch.zeta.value(),
        dzeta: ch.zeta.derivative(1.0, ch.alpha, ch.beta),
        eta: ch.eta.value(),
        deta: ch.eta.derivative(eta_rate(ch.mu), ch.alpha, ch.beta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const AL: f64 = 1.0;
    const BE: f64 = 4.0;

    fn cubic(a: f64, b: f64) -> f64 {
        solve_cubic(&CubicProblem::new(a, b, AL, BE).unwrap()).unwrap()
    }

    #[test]
    fn cubic_examples() {
        assert_eq!(cubic(0.0, 0.0), 0.0);
        let y = cubic(1.0, 0.0);
        assert!((y - (17.0f64 / 9.0).cbrt()).abs() < 1e-14);
        assert!((y - 1.236143).abs() < 1e-6);
        assert!((cubic(0.0, 1.0) - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cubic_invariants_enforced() {
        assert!(CubicProblem::new(1.0, 0.0, 2.0, 2.0).is_err());
        assert!(CubicProblem::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(init_eta(0.0, AL, BE).is_err());
    }

    #[test]
    fn cubic_residual_small() {
        for &(a, b) in &[(0.3, -0.2), (-1e-3, 5e-3), (2.0, 7.0), (1e-8, -1e-8)] {
            let p = CubicProblem::new(a, b, AL, BE).unwrap();
            let y = solve_cubic(&p).unwrap();
            assert!(y > 0.0);
            assert!(p.eval(y).abs() <= 1e-12 * p.scale(y), "{a} {b}");
        }
    }

    #[test]
    fn init_zeta_example() {
        let (phi, psi) = init_zeta(1.0, 0.0, AL, BE).unwrap();
        assert!((phi - 4.0 / 3.0).abs() < 1e-15);
        assert!((psi + 1.0 / 3.0).abs() < 1e-15);
        let y = cubic(1.0, 0.0);
        assert!(((phi * phi + psi * psi).cbrt() - y).abs() < 1e-10);
        assert_eq!(init_zeta(0.0, 0.0, AL, BE).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn init_eta_example() {
        let (p, q) = init_eta(1.0, AL, BE).unwrap();
        assert!((p - 4.0 / 3.0).abs() < 1e-15 && (q + 1.0 / 3.0).abs() < 1e-15);
        for mu in [1.0, 8.0, 1024.0] {
            let (p, q) = init_eta(mu, AL, BE).unwrap();
            assert!((p + q - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zeta_starts_at_data() {
        let ch = AuxChannel::new(0.01, -0.02, AL, BE, 0.4, 4.0).unwrap();
        let v = ch.values();
        assert_eq!(v.zeta, 0.01);
        assert!((v.dzeta + 0.02).abs() < 1e-15);
        assert_eq!(v.eta, 1.0);
        assert!(v.deta.abs() < 1e-12);
    }

    #[test]
    fn eta_derivative_vanishes_after_micro_step() {
        let mu = 4.0;
        let mut ch = AuxChannel::new(0.0, 0.0, AL, BE, 0.4, mu).unwrap();
        let h = 1e-9;
        ch.step(h);
        let fd = (ch.values().eta - 1.0) / h;
        assert!(fd.abs() <= 1e-6, "{fd}");
    }

    #[test]
    fn radius_bracket_along_integration() {
        let (phi, psi) = init_zeta(1.0, 0.0, AL, BE).unwrap();
        let mut pair = AuxPair::new(phi, psi);
        let s0 = pair.radius().powf(2.0 / 3.0);
        let dt = 1e-3;
        let mut t = 0.0;
        while !pair.is_extinct() {
            pair.advance(dt, 1.0, AL, BE);
            t += dt;
            let s = pair.radius().powf(2.0 / 3.0);
            assert!(s >= s0 - 2.0 / 3.0 * BE * t - 1e-9, "t = {t}");
            assert!(s <= s0 - 2.0 / 3.0 * AL * t + 1e-9, "t = {t}");
        }
        let ext = extinction_time(AuxPair::new(phi, psi), 1.0, AL, BE, dt, 10.0).unwrap();
        let y = cubic(1.0, 0.0);
        assert!(ext >= 1.5 * y / BE && ext <= 1.5 * y / AL, "{ext}");
        assert!(ext > 0.4635 && ext < 1.8543);
    }

    #[test]
    fn extinct_pair_stays_zero() {
        let mut ch = AuxChannel::new(1e-3, 0.0, AL, BE, 1.0, 8.0).unwrap();
        for _ in 0..2000 {
            ch.step(1e-3);
        }
        assert!(ch.zeta.is_extinct() && ch.eta.is_extinct());
        let before = ch.clone();
        ch.step(0.1);
        assert_eq!(ch, before);
        let v = ch.values();
        assert_eq!((v.zeta, v.dzeta, v.eta, v.deta), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn choose_mu_examples() {
        assert_eq!(choose_mu(AL, BE, 10.0).unwrap(), 1.0);
        let mut prev = 0.0;
        let mut delta = 10.0;
        for _ in 0..8 {
            let mu = choose_mu(AL, BE, delta).unwrap();
            assert!(mu >= prev);
            assert_eq!(mu.log2().fract(), 0.0);
            prev = mu;
            delta /= 2.0;
        }
        assert!(choose_mu(AL, BE, 0.0).is_err());
    }
}
