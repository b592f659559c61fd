//! Two-body propagation in universal variables.
//!
//! Solves the universal Kepler equation for the anomaly `χ` with a
//! bracketed Newton iteration and maps the state through the Lagrange
//! `f, g` coefficients. Elliptic transfers are first reduced modulo the
//! period, which keeps `χ` small for long horizons.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Earth's gravitational parameter, m³/s².
pub const EARTH_MU: f64 = 3.986_004_418e14;

const MAX_ITERATIONS: usize = 50;
/// Convergence threshold on the time-of-flight residual, in units of the
/// orbit's characteristic time.
const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalState {
    /// meters
    pub position: Vector3<f64>,
    /// meters per second
    pub velocity: Vector3<f64>,
    /// seconds
    pub epoch: f64,
}

impl OrbitalState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, epoch: f64) -> Self {
        Self {
            position,
            velocity,
            epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .position
            .iter()
            .chain(self.velocity.iter())
            .all(|v| v.is_finite())
            && self.epoch.is_finite();
        if !finite {
            return Err(Error::InvalidInput(
                "orbital state has non-finite entries".into(),
            ));
        }
        if self.position.norm() <= 0.0 {
            return Err(Error::InvalidInput(
                "orbital state at the attracting center".into(),
            ));
        }
        Ok(())
    }

    /// `v²/2 - μ/r`
    pub fn specific_energy(&self, mu: f64) -> f64 {
        0.5 * self.velocity.norm_squared() - mu / self.position.norm()
    }

    /// `r × v`
    pub fn angular_momentum(&self) -> Vector3<f64> {
        self.position.cross(&self.velocity)
    }

    /// Orbital period for bound orbits, `None` otherwise.
    pub fn period(&self, mu: f64) -> Option<f64> {
        let alpha = 2.0 / self.position.norm() - self.velocity.norm_squared() / mu;
        (alpha > 0.0).then(|| 2.0 * PI / (mu.sqrt() * alpha.powf(1.5)))
    }
}

/// Stumpff functions `C(ψ)` and `S(ψ)`.
fn stumpff(psi: f64) -> (f64, f64) {
    if psi.abs() < 1e-3 {
        // series through ψ³: C = Σ (-ψ)^k/(2k+2)!, S = Σ (-ψ)^k/(2k+3)!
        let c = 1.0 / 2.0 - psi / 24.0 + psi * psi / 720.0 - psi * psi * psi / 40_320.0;
        let s = 1.0 / 6.0 - psi / 120.0 + psi * psi / 5040.0 - psi * psi * psi / 362_880.0;
        (c, s)
    } else if psi > 0.0 {
        let r = psi.sqrt();
        ((1.0 - r.cos()) / psi, (r - r.sin()) / (psi * r))
    } else {
        let r = (-psi).sqrt();
        ((1.0 - r.cosh()) / psi, (r.sinh() - r) / (-psi * r))
    }
}

struct Universal {
    r0: f64,
    sigma0: f64,
    alpha: f64,
    sqrt_mu: f64,
    dt: f64,
}

impl Universal {
    /// Time-of-flight residual `F(χ)` (scaled by √μ) and its derivative `r(χ)`.
    fn residual(&self, chi: f64) -> (f64, f64, f64, f64) {
        let chi2 = chi * chi;
        let psi = self.alpha * chi2;
        let (c, s) = stumpff(psi);
        let f =
            self.sigma0 * chi2 * c + (1.0 - self.alpha * self.r0) * chi2 * chi * s + self.r0 * chi
                - self.sqrt_mu * self.dt;
        let r = chi2 * c + self.sigma0 * chi * (1.0 - psi * s) + self.r0 * (1.0 - psi * c);
        (f, r, c, s)
    }
}

/// Propagates `state` by `dt` seconds under two-body gravity with parameter `mu`.
pub fn kepler_propagate(state: &OrbitalState, dt: f64, mu: f64) -> Result<OrbitalState> {
    state.validate()?;
    if !dt.is_finite() || !(mu > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bad propagation request dt={dt}, mu={mu}"
        )));
    }
    if dt == 0.0 {
        return Ok(*state);
    }
    let r0v = state.position;
    let v0v = state.velocity;
    let r0 = r0v.norm();
    let sqrt_mu = mu.sqrt();
    let alpha = 2.0 / r0 - v0v.norm_squared() / mu;

    // Bound orbits: fly only the fraction of a period that matters.
    let mut flight = dt;
    if alpha > 0.0 {
        let period = 2.0 * PI / (sqrt_mu * alpha.powf(1.5));
        flight = dt - period * (dt / period).round();
    }
    if flight == 0.0 {
        return Ok(OrbitalState::new(r0v, v0v, state.epoch + dt));
    }

    let eq = Universal {
        r0,
        sigma0: r0v.dot(&v0v) / sqrt_mu,
        alpha,
        sqrt_mu,
        dt: flight,
    };
    // characteristic time of the orbit, for a dimensionless residual
    let time_scale = flight.abs().max((r0.powi(3) / mu).sqrt());
    let scale = sqrt_mu * time_scale;

    let guess = initial_guess(&eq, &r0v, &v0v, mu);
    let chi = solve(&eq, guess, scale)?;

    let (_, r, c, s) = eq.residual(chi);
    let chi2 = chi * chi;
    let psi = alpha * chi2;
    let f = 1.0 - chi2 / r0 * c;
    let g = flight - chi2 * chi / sqrt_mu * s;
    let fdot = sqrt_mu / (r * r0) * chi * (psi * s - 1.0);
    let gdot = 1.0 - chi2 / r * c;

    Ok(OrbitalState::new(
        f * r0v + g * v0v,
        fdot * r0v + gdot * v0v,
        state.epoch + dt,
    ))
}

fn initial_guess(eq: &Universal, r0v: &Vector3<f64>, v0v: &Vector3<f64>, mu: f64) -> f64 {
    let fallback = eq.sqrt_mu * eq.dt / eq.r0;
    let guess = if eq.alpha > 1e-12 {
        eq.sqrt_mu * eq.dt * eq.alpha
    } else if eq.alpha < -1e-12 {
        let a = 1.0 / eq.alpha;
        let sign = eq.dt.signum();
        sign * (-a).sqrt()
            * ((-2.0 * mu * eq.alpha * eq.dt)
                / (r0v.dot(v0v) + sign * (-mu * a).sqrt() * (1.0 - eq.r0 * eq.alpha)))
                .ln()
    } else {
        fallback
    };
    if guess.is_finite() {
        guess
    } else {
        fallback
    }
}

/// Newton on the monotone residual, falling back to bisection whenever a
/// step leaves the current bracket.
fn solve(eq: &Universal, guess: f64, scale: f64) -> Result<f64> {
    let eval = |chi: f64| {
        let (f, r, _, _) = eq.residual(chi);
        // a non-finite residual only happens far out on the growing branch
        let f = if f.is_finite() {
            f
        } else {
            chi.signum() * f64::INFINITY
        };
        (f, r)
    };

    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut chi = guess;
    let mut last = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let (f, r) = eval(chi);
        last = (f / scale).abs();
        if last <= RESIDUAL_TOLERANCE * 1e-4 {
            return Ok(chi);
        }
        if f > 0.0 {
            hi = hi.min(chi);
        } else {
            lo = lo.max(chi);
        }
        let mut next = chi - f / r;
        if !next.is_finite() || next <= lo || next >= hi {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 2.0 * (lo.abs().max(1.0)),
                (false, true) => hi - 2.0 * (hi.abs().max(1.0)),
                (false, false) => unreachable!("one bound is always set"),
            };
        }
        if next == chi {
            break;
        }
        chi = next;
    }
    let (f, _) = eval(chi);
    last = last.min((f / scale).abs());
    if last <= RESIDUAL_TOLERANCE {
        Ok(chi)
    } else {
        Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual: last,
        })
    }
}
