//! Close-approach probability between an uncertain rogue object and two assets.
//!
//! The uncertain quantity is the rogue's 6-D Cartesian state error at `t₀`
//! (position in meters, then velocity in meters per second). The event is a
//! pass within `miss_threshold` of either asset at `t₀ + horizon`, stored in
//! exceedance form as `-min_i ‖r - aᵢ‖ ≥ -miss_threshold`.

use nalgebra::{DVector, Vector3};

use super::kepler::{kepler_propagate, OrbitalState, EARTH_MU};
use super::RareEventProblem;
use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ConjunctionScenario {
    /// Rogue state at `t₀`.
    pub rogue_mean: OrbitalState,
    /// m
    pub rogue_pos_sigma: f64,
    /// m/s
    pub rogue_vel_sigma: f64,
    pub assets: [OrbitalState; 2],
    /// `t₁ - t₀`, s
    pub horizon: f64,
    /// m
    pub miss_threshold: f64,
    /// m³/s²
    pub mu_grav: f64,
}

impl Default for ConjunctionScenario {
    fn default() -> Self {
        Self::encounter(&EncounterGeometry::default()).expect("default geometry is valid")
    }
}

/// Parameters for [`ConjunctionScenario::encounter`].
#[derive(Debug, Clone)]
pub struct EncounterGeometry {
    /// Radius of the shared circular orbit, m.
    pub radius: f64,
    /// Along-track arc between the two assets, m.
    pub asset_separation: f64,
    /// Inclination of the rogue's orbit relative to the assets', rad.
    pub crossing_angle: f64,
    /// Rogue position minus asset-1 position at `t₁`, m.
    pub miss_offset: Vector3<f64>,
    pub horizon: f64,
    pub rogue_pos_sigma: f64,
    pub rogue_vel_sigma: f64,
    pub miss_threshold: f64,
    pub mu_grav: f64,
}

impl Default for EncounterGeometry {
    fn default() -> Self {
        Self {
            radius: 7.0e6,
            asset_separation: 10_000.0,
            crossing_angle: 30f64.to_radians(),
            miss_offset: Vector3::zeros(),
            horizon: 9893.34,
            rogue_pos_sigma: 5.0,
            rogue_vel_sigma: 0.1,
            miss_threshold: 50.0,
            mu_grav: EARTH_MU,
        }
        // nominal miss of 40 m, radial at the encounter
        .with_radial_miss(40.0)
    }
}

impl EncounterGeometry {
    /// Sets `miss_offset` to a purely radial displacement at the encounter.
    pub fn with_radial_miss(mut self, meters: f64) -> Self {
        let n = (self.mu_grav / self.radius.powi(3)).sqrt();
        let theta = n * self.horizon;
        self.miss_offset = Vector3::new(theta.cos(), theta.sin(), 0.0) * meters;
        self
    }
}

impl ConjunctionScenario {
    /// Two assets on an equatorial circular orbit, asset 2 trailing asset 1
    /// by `asset_separation` of arc, and a rogue on a circular orbit of the
    /// same radius crossing the assets' plane at asset 1's `t₁` position
    /// (displaced by `miss_offset`). All states are given at `t₀ = 0`.
    pub fn encounter(geometry: &EncounterGeometry) -> Result<Self> {
        let EncounterGeometry {
            radius,
            asset_separation,
            crossing_angle,
            miss_offset,
            horizon,
            rogue_pos_sigma,
            rogue_vel_sigma,
            miss_threshold,
            mu_grav,
        } = *geometry;
        let speed = (mu_grav / radius).sqrt();
        let on_circle = |angle: f64| {
            OrbitalState::new(
                Vector3::new(angle.cos(), angle.sin(), 0.0) * radius,
                Vector3::new(-angle.sin(), angle.cos(), 0.0) * speed,
                0.0,
            )
        };
        let lead = on_circle(0.0);
        let trail = on_circle(-asset_separation / radius);

        let theta = (mu_grav / radius.powi(3)).sqrt() * horizon;
        let radial = Vector3::new(theta.cos(), theta.sin(), 0.0);
        let along = Vector3::new(-theta.sin(), theta.cos(), 0.0);
        let at_encounter = OrbitalState::new(
            radial * radius + miss_offset,
            (along * crossing_angle.cos() + Vector3::z() * crossing_angle.sin()) * speed,
            horizon,
        );
        let rogue_mean = kepler_propagate(&at_encounter, -horizon, mu_grav)?;

        let scenario = Self {
            rogue_mean,
            rogue_pos_sigma,
            rogue_vel_sigma,
            assets: [lead, trail],
            horizon,
            miss_threshold,
            mu_grav,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        self.rogue_mean.validate()?;
        for a in &self.assets {
            a.validate()?;
        }
        let positive = [
            self.rogue_pos_sigma,
            self.rogue_vel_sigma,
            self.miss_threshold,
            self.mu_grav,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !self.horizon.is_finite() {
            return Err(Error::InvalidInput(
                "scenario scalars must be finite and positive".into(),
            ));
        }
        let h1 = self.assets[0].angular_momentum();
        let h2 = self.assets[1].angular_momentum();
        let misalignment = h1.cross(&h2).norm() / (h1.norm() * h2.norm());
        if misalignment > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "assets are not coplanar (sin angle between planes {misalignment:e})"
            )));
        }
        Ok(())
    }

    /// Along-track arc between the assets at `t₀`, measured on the mean radius.
    pub fn asset_separation(&self) -> f64 {
        let (a, b) = (self.assets[0].position, self.assets[1].position);
        let angle = a.cross(&b).norm().atan2(a.dot(&b));
        angle * 0.5 * (a.norm() + b.norm())
    }

    /// Asset states at `t₀ + horizon`.
    pub fn assets_at_encounter(&self) -> Result<[OrbitalState; 2]> {
        let advance = |s: &OrbitalState| {
            kepler_propagate(
                s,
                self.horizon + self.rogue_mean.epoch - s.epoch,
                self.mu_grav,
            )
        };
        Ok([advance(&self.assets[0])?, advance(&self.assets[1])?])
    }

    /// Rogue state at `t₀` for a 6-D perturbation `x`.
    pub fn perturbed_rogue(&self, x: &DVector<f64>) -> Result<OrbitalState> {
        if x.len() != 6 {
            return Err(Error::DimensionMismatch {
                expected: 6,
                actual: x.len(),
            });
        }
        Ok(OrbitalState::new(
            self.rogue_mean.position + Vector3::new(x[0], x[1], x[2]),
            self.rogue_mean.velocity + Vector3::new(x[3], x[4], x[5]),
            self.rogue_mean.epoch,
        ))
    }

    /// Distance to the nearer asset at the encounter time.
    pub fn miss_distance(&self, x: &DVector<f64>, assets_at_t1: &[OrbitalState; 2]) -> Result<f64> {
        let rogue = kepler_propagate(&self.perturbed_rogue(x)?, self.horizon, self.mu_grav)?;
        Ok(assets_at_t1
            .iter()
            .map(|a| (rogue.position - a.position).norm())
            .fold(f64::INFINITY, f64::min))
    }
}

/// Builds the 6-D problem with `π = N(0, diag(σ_p² I₃, σ_v² I₃))`.
pub fn make_conjunction(scenario: &ConjunctionScenario) -> Result<RareEventProblem> {
    scenario.validate()?;
    let assets = scenario.assets_at_encounter()?;
    let p = scenario.rogue_pos_sigma.powi(2);
    let v = scenario.rogue_vel_sigma.powi(2);
    let base = GaussianParams::diagonal(DVector::zeros(6), &[p, p, p, v, v, v])?;
    let sc = scenario.clone();
    let problem = RareEventProblem::new("conjunction", base, -scenario.miss_threshold, move |x| {
        Ok(-sc.miss_distance(x, &assets)?)
    })?
    .with_description(format!(
        "rogue within {} m of either asset {} s after epoch",
        scenario.miss_threshold, scenario.horizon
    ));
    Ok(problem)
}
