//! Resampling population Monte Carlo: local (LR-PMC) and global (GR-PMC)
//! multinomial resampling of proposal means.
//!
//! Both weight samples by DM weight times the indicator at the final level
//! `γ`, with no intermediate levels. Covariances never change.

use rand::Rng;

use crate::cepmc::{check_init, sample_population, PmcRun, RunConfig, RunRecorder};
use crate::cross_entropy::Adaptation;
use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::problems::RareEventProblem;
use crate::weighting::WeightedBatch;

/// `count` i.i.d. draws from the categorical distribution `weights / Σ weights`.
pub fn multinomial_resample<R: Rng + ?Sized>(
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
    {
        return Err(Error::NonFiniteWeight { index, value });
    }
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total = cumulative.last().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return Err(Error::AllWeightsZero);
    }
    Ok((0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            // first bin whose running total exceeds u; zero-weight bins are
            // never chosen because their total equals the previous one
            let i = cumulative.partition_point(|&c| c <= u);
            i.min(weights.len() - 1)
        })
        .map(|i| last_positive_at_or_before(weights, i))
        .collect())
}

// guards against `u` rounding up onto a trailing run of zero weights
fn last_positive_at_or_before(weights: &[f64], i: usize) -> usize {
    (0..=i).rev().find(|&j| weights[j] > 0.0).unwrap_or(i)
}

/// Replaces an all-zero group by uniform weights. Returns whether it did.
pub fn uniform_if_all_zero(weights: &mut [f64]) -> bool {
    if weights.iter().all(|&w| w == 0.0) && !weights.is_empty() {
        let u = 1.0 / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = u);
        true
    } else {
        false
    }
}

/// DM weight times `I{S ≥ γ}` for every sample, laid out like the batch.
fn indicator_weights(batch: &WeightedBatch, gamma: f64) -> Vec<Vec<f64>> {
    batch
        .performances
        .iter()
        .zip(&batch.dm_weights)
        .map(|(perfs, ws)| {
            perfs
                .iter()
                .zip(ws)
                .map(|(&s, &w)| if s >= gamma { w } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Which samples each proposal's next mean comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    /// Each proposal from its own `K` samples, `1/K` when all are zero.
    Local,
    /// All `N` means from the pooled `NK` samples, `1/NK` when all are zero.
    Global,
}

/// Resampling weights after the zero-weight convention, laid out
/// `[proposal][sample]`, and whether the convention fired for each proposal.
///
/// Local: a proposal whose `K` weights are all zero gets `1/K` each.
/// Global: only when all `NK` weights are zero, every sample gets `1/NK`.
pub fn resampling_weights(
    batch: &WeightedBatch,
    gamma: f64,
    scheme: Resampling,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut weights = indicator_weights(batch, gamma);
    match scheme {
        Resampling::Local => {
            let fired = weights.iter_mut().map(|g| uniform_if_all_zero(g)).collect();
            (weights, fired)
        }
        Resampling::Global => {
            let total = batch.total_samples();
            let all_zero = total > 0 && weights.iter().flatten().all(|&w| w == 0.0);
            if all_zero {
                let u = 1.0 / total as f64;
                weights.iter_mut().flatten().for_each(|w| *w = u);
            }
            (weights, vec![all_zero; batch.num_proposals()])
        }
    }
}

/// Chooses the next means. Returns `(proposal, sample)` coordinates in the
/// batch and the adaptation recorded for each proposal.
pub fn resample_means<R: Rng + ?Sized>(
    batch: &WeightedBatch,
    gamma: f64,
    scheme: Resampling,
    rng: &mut R,
) -> Result<Vec<((usize, usize), Adaptation)>> {
    let (weights, fired) = resampling_weights(batch, gamma, scheme);
    match scheme {
        Resampling::Local => weights
            .iter()
            .zip(fired)
            .enumerate()
            .map(|(n, (group, uniform))| {
                let k = multinomial_resample(group, 1, rng)?[0];
                Ok(((n, k), tag(uniform)))
            })
            .collect(),
        Resampling::Global => {
            let sizes: Vec<usize> = weights.iter().map(Vec::len).collect();
            let picks = multinomial_resample(&weights.concat(), sizes.len(), rng)?;
            Ok(picks
                .into_iter()
                .zip(fired)
                .map(|(i, uniform)| (unflatten(&sizes, i), tag(uniform)))
                .collect())
        }
    }
}

fn tag(uniform: bool) -> Adaptation {
    if uniform {
        Adaptation::ResampledUniform
    } else {
        Adaptation::Resampled
    }
}

fn unflatten(sizes: &[usize], mut i: usize) -> (usize, usize) {
    for (n, &len) in sizes.iter().enumerate() {
        if i < len {
            return (n, i);
        }
        i -= len;
    }
    unreachable!("flat index within the batch")
}

fn run_resampling<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    config: &RunConfig,
    init: Vec<GaussianParams>,
    scheme: Resampling,
    rng: &mut R,
) -> Result<PmcRun> {
    check_init(problem, config, &init)?;
    let gamma = problem.gamma();
    let mut recorder = RunRecorder::new(problem, config, &init);
    let mut proposals = init;
    for t in 1..=config.trials {
        let batch = sample_population(problem, &proposals, config.samples_per_proposal, t, rng)?;
        let picks = resample_means(&batch, gamma, scheme, rng)?;
        let mut adaptations = Vec::with_capacity(picks.len());
        for (q, ((n, k), adaptation)) in proposals.iter_mut().zip(picks) {
            *q = q.with_mean(batch.samples[n][k].clone())?;
            adaptations.push(adaptation);
        }
        recorder.record(batch, adaptations, &proposals);
    }
    recorder.finish(problem, config, rng)
}

/// LR-PMC. Reports the final-trial estimate; `cov_schedule_start` is ignored.
pub fn run_lr_pmc<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    config: &RunConfig,
    init: Vec<GaussianParams>,
    rng: &mut R,
) -> Result<PmcRun> {
    run_resampling(problem, config, init, Resampling::Local, rng)
}

/// GR-PMC. Reports the final-trial estimate; `cov_schedule_start` is ignored.
pub fn run_gr_pmc<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    config: &RunConfig,
    init: Vec<GaussianParams>,
    rng: &mut R,
) -> Result<PmcRun> {
    run_resampling(problem, config, init, Resampling::Global, rng)
}
