//! Benchmark rare-event problems.
//!
//! Every problem is stored in exceedance form: the event of interest is
//! `{S(x) ≥ γ}` under a Gaussian base density `π`. Limit-state problems whose
//! natural failure set is `{g(x) ≤ 0}` store `S = -g` with `γ = 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::Result;
use crate::gaussian::GaussianParams;

mod conjunction;
mod kepler;
mod structural;

pub use conjunction::{make_conjunction, ConjunctionScenario, EncounterGeometry};
pub use kepler::{kepler_propagate, OrbitalState, EARTH_MU};
pub use structural::{
    make_s1, make_s2, make_s3, make_s4, ParabolicVariant, S1_REFERENCE, S2_REFERENCE, S3_REFERENCE,
};

type PerformanceFn = dyn Fn(&DVector<f64>) -> Result<f64> + Send + Sync;

/// A rare-event estimation target `ℓ = P_π(S(x) ≥ γ)`.
#[derive(Clone)]
pub struct RareEventProblem {
    name: String,
    description: String,
    base: GaussianParams,
    gamma: f64,
    reference: Option<f64>,
    performance: Arc<PerformanceFn>,
}

impl fmt::Debug for RareEventProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RareEventProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("gamma", &self.gamma)
            .field("reference", &self.reference)
            .finish()
    }
}

impl RareEventProblem {
    /// Fails if the base covariance is not positive definite.
    pub fn new<F>(
        name: impl Into<String>,
        base: GaussianParams,
        gamma: f64,
        performance: F,
    ) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> Result<f64> + Send + Sync + 'static,
    {
        base.factor()?;
        Ok(Self {
            name: name.into(),
            description: String::new(),
            base,
            gamma,
            reference: None,
            performance: Arc::new(performance),
        })
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_reference(mut self, reference: f64) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Known or published probability of the event, when there is one.
    pub fn reference(&self) -> Option<f64> {
        self.reference
    }

    /// The base density `π` as a Gaussian.
    pub fn base(&self) -> &GaussianParams {
        &self.base
    }

    /// Normalized `ln π(x)`.
    pub fn log_base_density(&self, x: &DVector<f64>) -> f64 {
        self.base
            .log_density(x)
            .expect("base density validated at construction")
    }

    pub fn performance(&self, x: &DVector<f64>) -> Result<f64> {
        (self.performance)(x)
    }

    pub fn evaluate(&self, samples: &[DVector<f64>]) -> Result<Vec<f64>> {
        samples.iter().map(|x| self.performance(x)).collect()
    }

    pub fn is_event(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.performance(x)? >= self.gamma)
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}
