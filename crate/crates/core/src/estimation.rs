//! Probability estimators and error metrics.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::problems::RareEventProblem;
use crate::weighting::WeightedBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Samples of the last trial only.
    FinalTrial,
    /// Average over every trial of the run.
    AllTrials,
    PlainMC,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::FinalTrial => "final_trial",
            EstimatorKind::AllTrials => "all_trials",
            EstimatorKind::PlainMC => "plain_mc",
        }
    }
}

/// Outcome of one estimation run.
///
/// `estimate` is reported raw; weight noise can push it above one.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub estimate: f64,
    pub estimator_kind: EstimatorKind,
    /// Normal-approximation standard error of `estimate`.
    pub std_error: f64,
    /// Effective sample size of the final batch's weights.
    pub n_effective: f64,
    pub level_trace: Vec<f64>,
    pub seed: u64,
    pub runtime_ms: f64,
}

impl EstimateResult {
    pub fn clamped(&self) -> f64 {
        self.estimate.clamp(0.0, 1.0)
    }
}

/// `(1/NK) Σ I{S ≥ γ} w` over one batch.
pub fn final_trial_estimate(batch: &WeightedBatch, gamma: f64) -> f64 {
    let total = batch.total_samples();
    if total == 0 {
        return 0.0;
    }
    let sum: f64 = batch
        .weighted_performances()
        .filter(|&(s, _)| s >= gamma)
        .map(|(_, w)| w)
        .sum();
    sum / total as f64
}

/// Standard error of [`final_trial_estimate`] from the spread of `I·w`.
pub fn final_trial_std_error(batch: &WeightedBatch, gamma: f64) -> f64 {
    let m = batch.total_samples();
    if m < 2 {
        return 0.0;
    }
    let mean = final_trial_estimate(batch, gamma);
    let ss: f64 = batch
        .weighted_performances()
        .map(|(s, w)| {
            let y = if s >= gamma { w } else { 0.0 };
            (y - mean) * (y - mean)
        })
        .sum();
    (ss / ((m - 1) as f64 * m as f64)).sqrt()
}

/// Mean of the per-trial estimates; with equal batch sizes this is the
/// triple sum `(1/TNK) Σₜ Σₙ Σₖ I w`.
pub fn all_trials_estimate(batches: &[WeightedBatch], gamma: f64) -> f64 {
    if batches.is_empty() {
        return 0.0;
    }
    batches
        .iter()
        .map(|b| final_trial_estimate(b, gamma))
        .sum::<f64>()
        / batches.len() as f64
}

/// `sqrt(mean((ℓ̂ᵣ - ℓ)²)) / ℓ`
pub fn rrmse(estimates: &[f64], reference: f64) -> f64 {
    if estimates.is_empty() {
        return f64::NAN;
    }
    let mse = estimates
        .iter()
        .map(|e| (e - reference).powi(2))
        .sum::<f64>()
        / estimates.len() as f64;
    mse.sqrt() / reference
}

/// `(Σw)² / Σw²`
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::AllWeightsZero);
    }
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(sum * sum / sq)
}

/// Plain Monte Carlo from the base density, drawn and evaluated in chunks so
/// large sample counts stay out of memory.
pub fn plain_monte_carlo<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    samples: usize,
    seed: u64,
    rng: &mut R,
) -> Result<EstimateResult> {
    const CHUNK: usize = 10_000;
    if samples == 0 {
        return Err(Error::EmptyBatch);
    }
    let started = Instant::now();
    let mut hits = 0usize;
    let mut left = samples;
    while left > 0 {
        let n = left.min(CHUNK);
        for x in problem.base().draw(rng, n)? {
            hits += usize::from(problem.is_event(&x)?);
        }
        left -= n;
    }
    let p = hits as f64 / samples as f64;
    Ok(EstimateResult {
        estimate: p,
        estimator_kind: EstimatorKind::PlainMC,
        std_error: (p * (1.0 - p) / samples as f64).sqrt(),
        n_effective: samples as f64,
        level_trace: Vec::new(),
        seed,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn batch(perfs: Vec<Vec<f64>>, weights: Vec<Vec<f64>>) -> WeightedBatch {
        let samples = perfs
            .iter()
            .map(|g| g.iter().map(|_| DVector::zeros(1)).collect())
            .collect();
        WeightedBatch {
            trial_index: 1,
            level: 0.0,
            samples,
            performances: perfs,
            dm_weights: weights,
        }
    }

    #[test]
    fn plain_mc_half_space() {
        use crate::problems::make_s4;
        use rand::SeedableRng;
        let p = make_s4(0.0, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = plain_monte_carlo(&p, 25_001, 1, &mut rng).unwrap();
        assert!((r.estimate - 0.5).abs() < 4.0 * r.std_error);
        assert_eq!(r.n_effective, 25_001.0);
        assert!(plain_monte_carlo(&p, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn all_elite_unit_weights() {
        let b = batch(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![vec![1.0; 2]; 2]);
        assert_eq!(final_trial_estimate(&b, 0.0), 1.0);
        assert_eq!(final_trial_estimate(&b, 10.0), 0.0);
    }

    #[test]
    fn hand_built_batch() {
        let b = batch(
            vec![vec![1.0, 1.0], vec![-1.0, 1.0]],
            vec![vec![0.5, 1.5], vec![0.0, 2.0]],
        );
        assert_relative_eq!(final_trial_estimate(&b, 0.0), 1.0);
    }

    #[test]
    fn all_trials_cases() {
        let a = batch(vec![vec![1.0, -1.0]], vec![vec![1.0, 1.0]]);
        let b = batch(vec![vec![1.0, 1.0]], vec![vec![0.2, 0.4]]);
        let fa = final_trial_estimate(&a, 0.0);
        let fb = final_trial_estimate(&b, 0.0);
        assert_eq!(all_trials_estimate(std::slice::from_ref(&a), 0.0), fa);
        assert_eq!(
            all_trials_estimate(&[a.clone(), a.clone(), a.clone()], 0.0),
            fa
        );
        assert_relative_eq!(all_trials_estimate(&[a, b], 0.0), (fa + fb) / 2.0);
    }

    #[test]
    fn rrmse_cases() {
        assert_eq!(rrmse(&[0.3, 0.3], 0.3), 0.0);
        assert_relative_eq!(rrmse(&[0.6], 0.3), 1.0);
        assert_relative_eq!(rrmse(&[0.0, 0.6], 0.3), 1.0);
    }

    #[test]
    fn ess_cases() {
        assert_relative_eq!(
            effective_sample_size(&[0.3; 7]).unwrap(),
            7.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(effective_sample_size(&[0.0, 4.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(effective_sample_size(&[1.0, 1.0, 2.0]).unwrap(), 16.0 / 6.0);
        assert!(matches!(
            effective_sample_size(&[0.0, 0.0]),
            Err(Error::AllWeightsZero)
        ));
    }

    #[test]
    fn std_error_matches_direct_formula() {
        let b = batch(
            vec![vec![1.0, -1.0, 2.0, 3.0]],
            vec![vec![0.5, 9.0, 1.5, 2.5]],
        );
        let ys = [0.5, 0.0, 1.5, 2.5];
        let mean = ys.iter().sum::<f64>() / 4.0;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 3.0;
        assert_relative_eq!(
            final_trial_std_error(&b, 0.0),
            (var / 4.0).sqrt(),
            epsilon = 1e-15
        );
    }

    proptest! {
        #[test]
        fn estimate_linear_in_weights(
            ws in prop::collection::vec(0.0f64..5.0, 1..30),
            c in 0.01f64..100.0,
        ) {
            let perfs: Vec<f64> = (0..ws.len()).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
            let a = batch(vec![perfs.clone()], vec![ws.clone()]);
            let b = batch(vec![perfs], vec![ws.iter().map(|w| w * c).collect()]);
            let ea = final_trial_estimate(&a, 0.0);
            let eb = final_trial_estimate(&b, 0.0);
            prop_assert!((eb - c * ea).abs() <= 1e-12 * eb.abs().max(1e-300));
        }

        #[test]
        fn all_trials_equals_triple_sum(
            data in prop::collection::vec(prop::collection::vec((-1.0f64..1.0, 0.0f64..3.0), 6), 1..6),
        ) {
            // T batches of N = 2 proposals x K = 3 samples
            let batches: Vec<_> = data
                .iter()
                .map(|rows| {
                    let perfs = vec![rows[..3].iter().map(|r| r.0).collect(), rows[3..].iter().map(|r| r.0).collect()];
                    let ws = vec![rows[..3].iter().map(|r| r.1).collect(), rows[3..].iter().map(|r| r.1).collect()];
                    batch(perfs, ws)
                })
                .collect();
            let t = batches.len() as f64;
            let direct: f64 = data
                .iter()
                .flatten()
                .filter(|r| r.0 >= 0.0)
                .map(|r| r.1)
                .sum::<f64>()
                / (t * 6.0);
            let got = all_trials_estimate(&batches, 0.0);
            prop_assert!((got - direct).abs() <= 1e-14 * direct.abs().max(1.0));
        }

        #[test]
        fn rrmse_scale_equivariant(
            es in prop::collection::vec(0.0f64..1.0, 1..20),
            r in 0.01f64..1.0,
            c in 1e-6f64..1e6,
        ) {
            let scaled: Vec<f64> = es.iter().map(|e| e * c).collect();
            let a = rrmse(&es, r);
            let b = rrmse(&scaled, r * c);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
