//! Importance weights and elite selection.
//!
//! Weights never include the event indicator. Callers fold in
//! [`elite_mask`] (or the final threshold) where they need it, so one set of
//! weights serves adaptation, resampling and estimation alike.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, GaussianParams};

/// One trial's output: samples grouped by generating proposal.
#[derive(Debug, Clone)]
pub struct WeightedBatch {
    pub trial_index: usize,
    /// Temporary level used for adaptation in this trial, never above γ.
    pub level: f64,
    pub samples: Vec<Vec<DVector<f64>>>,
    pub performances: Vec<Vec<f64>>,
    /// Deterministic-mixture weights, indicator not applied.
    pub dm_weights: Vec<Vec<f64>>,
}

impl WeightedBatch {
    pub fn num_proposals(&self) -> usize {
        self.samples.len()
    }

    pub fn total_samples(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_samples() == 0
    }

    /// `(performance, weight)` pairs over all proposals in storage order.
    pub fn weighted_performances(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.performances
            .iter()
            .flatten()
            .copied()
            .zip(self.dm_weights.iter().flatten().copied())
    }

    pub fn all_performances(&self) -> Vec<f64> {
        self.performances.iter().flatten().copied().collect()
    }

    pub fn all_weights(&self) -> Vec<f64> {
        self.dm_weights.iter().flatten().copied().collect()
    }
}

fn checked_weight(log_ratio: f64, index: usize) -> Result<f64> {
    let w = log_ratio.exp();
    if w.is_finite() {
        Ok(w)
    } else {
        Err(Error::NonFiniteWeight { index, value: w })
    }
}

/// DM weight of a single point: `π(x) / ((1/N) Σₘ q_m(x))`, in log space.
pub fn dm_weight<F>(
    x: &DVector<f64>,
    proposals: &[GaussianParams],
    target_log_density: &F,
) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64 + ?Sized,
{
    let log_q = proposals
        .iter()
        .map(|q| q.log_density(x))
        .collect::<Result<Vec<_>>>()?;
    let log_mix = log_sum_exp(&log_q) - (proposals.len() as f64).ln();
    checked_weight(target_log_density(x) - log_mix, 0)
}

/// Deterministic-mixture weights for a batch laid out `[proposal][sample]`.
///
/// The denominator averages over all proposals, the generating one included.
pub fn dm_weights<F>(
    samples: &[Vec<DVector<f64>>],
    proposals: &[GaussianParams],
    target_log_density: &F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&DVector<f64>) -> f64 + ?Sized,
{
    if proposals.is_empty() {
        return Err(Error::InvalidInput(
            "mixture needs at least one proposal".into(),
        ));
    }
    for q in proposals {
        q.factor()?;
    }
    let ln_n = (proposals.len() as f64).ln();
    let mut log_q = vec![0.0; proposals.len()];
    let mut index = 0;
    samples
        .iter()
        .map(|group| {
            group
                .iter()
                .map(|x| {
                    for (slot, q) in log_q.iter_mut().zip(proposals) {
                        *slot = q.log_density(x)?;
                    }
                    let log_mix = log_sum_exp(&log_q) - ln_n;
                    let w = checked_weight(target_log_density(x) - log_mix, index);
                    index += 1;
                    w
                })
                .collect()
        })
        .collect()
}

/// Plain importance weights `π(x)/q(x)` against a single proposal.
pub fn standard_is_weights<F>(
    samples: &[DVector<f64>],
    proposal: &GaussianParams,
    target_log_density: &F,
) -> Result<Vec<f64>>
where
    F: Fn(&DVector<f64>) -> f64 + ?Sized,
{
    samples
        .iter()
        .enumerate()
        .map(|(i, x)| checked_weight(target_log_density(x) - proposal.log_density(x)?, i))
        .collect()
}

/// `mask[i] = performances[i] >= level`; ties are elite.
pub fn elite_mask(performances: &[f64], level: f64) -> Vec<bool> {
    performances.iter().map(|&s| s >= level).collect()
}
