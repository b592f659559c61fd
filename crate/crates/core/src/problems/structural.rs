//! Two-dimensional limit-state benchmarks and the linear problem of
//! arbitrary dimension.

use std::f64::consts::SQRT_2;

use nalgebra::DVector;

use super::{normal_cdf, RareEventProblem};
use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;

/// Published failure probability of the parabolic S1 problem.
pub const S1_REFERENCE: f64 = 3.01e-3;
/// Published failure probability of the parabolic S2 problem.
pub const S2_REFERENCE: f64 = 8.67e-7;
/// Published failure probability of the four-branch S3 problem.
pub const S3_REFERENCE: f64 = 2.22e-3;

/// Which form of the S1/S2 limit state to build.
///
/// The published reference probabilities belong to the parabolic forms; the
/// linear forms have closed-form probabilities of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParabolicVariant {
    #[default]
    Squared,
    Linear,
}

impl ParabolicVariant {
    pub fn suffix(self) -> &'static str {
        match self {
            ParabolicVariant::Squared => "",
            ParabolicVariant::Linear => "_linear",
        }
    }
}

fn two_dim(x: &DVector<f64>) -> Result<(f64, f64)> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: x.len(),
        });
    }
    Ok((x[0], x[1]))
}

/// `g₁ = 5 - x₂ - 0.5 (x₁ - 0.1)²` (or the linear `0.5 (x₁ - 0.1)` term).
pub fn make_s1(variant: ParabolicVariant) -> RareEventProblem {
    let (limit_state, reference, text): (fn(f64, f64) -> f64, f64, &str) = match variant {
        ParabolicVariant::Squared => (
            |x1, x2| 5.0 - x2 - 0.5 * (x1 - 0.1).powi(2),
            S1_REFERENCE,
            "g = 5 - x2 - 0.5 (x1 - 0.1)^2",
        ),
        ParabolicVariant::Linear => (
            |x1, x2| 5.0 - x2 - 0.5 * (x1 - 0.1),
            normal_cdf(-5.05 / 1.25_f64.sqrt()),
            "g = 5 - x2 - 0.5 (x1 - 0.1)",
        ),
    };
    structural("s1", variant, limit_state, reference, text)
}

/// `g₂ = 5 - x₂ - 0.1 x₁²` (or the linear `0.1 x₁` term).
pub fn make_s2(variant: ParabolicVariant) -> RareEventProblem {
    let (limit_state, reference, text): (fn(f64, f64) -> f64, f64, &str) = match variant {
        ParabolicVariant::Squared => (
            |x1, x2| 5.0 - x2 - 0.1 * x1 * x1,
            S2_REFERENCE,
            "g = 5 - x2 - 0.1 x1^2",
        ),
        ParabolicVariant::Linear => (
            |x1, x2| 5.0 - x2 - 0.1 * x1,
            normal_cdf(-5.0 / 1.01_f64.sqrt()),
            "g = 5 - x2 - 0.1 x1",
        ),
    };
    structural("s2", variant, limit_state, reference, text)
}

/// Four-branch series system.
pub fn make_s3() -> RareEventProblem {
    structural(
        "s3",
        ParabolicVariant::Squared,
        four_branch,
        S3_REFERENCE,
        "four-branch series system",
    )
}

fn four_branch(x1: f64, x2: f64) -> f64 {
    let d = x1 - x2;
    let s = (x1 + x2) / SQRT_2;
    let parabola = 3.0 + d * d / 10.0;
    (parabola - s)
        .min(parabola + s)
        .min(d + 7.0 / SQRT_2)
        .min(-d + 7.0 / SQRT_2)
}

fn structural(
    id: &str,
    variant: ParabolicVariant,
    limit_state: fn(f64, f64) -> f64,
    reference: f64,
    text: &str,
) -> RareEventProblem {
    let name = format!("{id}{}", variant.suffix());
    RareEventProblem::new(name, GaussianParams::standard(2), 0.0, move |x| {
        let (x1, x2) = two_dim(x)?;
        Ok(-limit_state(x1, x2))
    })
    .expect("standard normal base")
    .with_reference(reference)
    .with_description(format!("{text}; failure g <= 0, stored as -g >= 0"))
}

/// `Σ xᵢ / √D ≥ β` under a standard normal in `dim` dimensions; the
/// probability is `Φ(-β)` for every `dim`.
pub fn make_s4(beta: f64, dim: usize) -> Result<RareEventProblem> {
    if dim == 0 {
        return Err(Error::InvalidInput("s4 needs dim >= 1".into()));
    }
    let scale = 1.0 / (dim as f64).sqrt();
    let problem = RareEventProblem::new("s4", GaussianParams::standard(dim), beta, move |x| {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: x.len(),
            });
        }
        Ok(x.sum() * scale)
    })?
    .with_reference(normal_cdf(-beta))
    .with_description(format!("sum(x)/sqrt({dim}) >= {beta}"));
    Ok(problem)
}
