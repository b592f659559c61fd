//! Multilevel cross-entropy method with a single Gaussian proposal.
//!
//! [`adapt_proposal`] is the per-proposal update shared with the population
//! method: weighted moments over the elite samples, with the covariance kept
//! from the previous iteration when the fresh estimate is singular and the
//! whole proposal kept when no elite mass is available.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimation::{
    effective_sample_size, final_trial_estimate, final_trial_std_error, EstimateResult,
    EstimatorKind,
};
use crate::gaussian::{weighted_moment_update, CovarianceUpdate, GaussianParams};
use crate::problems::RareEventProblem;
use crate::weighting::{elite_mask, standard_is_weights, WeightedBatch};

pub const DEFAULT_RHO: f64 = 0.1;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

/// 1-based index `⌈(1-ρ)K⌉` into the ascending performances.
///
/// The product is nudged down by a few ulps before the ceiling so that exact
/// integers such as `0.9 * 10` are not pushed up by representation error.
pub fn quantile_index(k: usize, rho: f64) -> usize {
    let raw = (1.0 - rho) * k as f64;
    let idx = (raw - raw * 4.0 * f64::EPSILON).ceil() as usize;
    idx.clamp(1, k)
}

/// The `(1-ρ)` sample quantile `S_(⌈(1-ρ)K⌉)`.
pub fn sample_quantile(performances: &[f64], rho: f64) -> Result<f64> {
    if performances.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidInput(format!(
            "rho must lie in (0, 1), got {rho}"
        )));
    }
    let idx = quantile_index(performances.len(), rho);
    let mut sorted = performances.to_vec();
    let (_, nth, _) = sorted.select_nth_unstable_by(idx - 1, f64::total_cmp);
    Ok(*nth)
}

/// How one proposal changed during an adaptation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Adaptation {
    MeanAndCovariance,
    /// Covariance updates not scheduled yet.
    MeanOnly,
    /// Fresh covariance was singular; the previous one was kept.
    CovarianceRetained,
    /// No elite weight; parameters unchanged.
    Frozen,
    /// Mean moved to a resampled point (resampling baselines).
    Resampled,
    /// Resampled after the all-zero weights were replaced by uniform ones.
    ResampledUniform,
}

/// Updates `previous` from its own samples and their elite weights
/// (indicator times importance weight).
pub fn adapt_proposal(
    samples: &[DVector<f64>],
    elite_weights: &[f64],
    previous: &GaussianParams,
    update_cov: bool,
) -> Result<(GaussianParams, Adaptation)> {
    if samples.len() != elite_weights.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            actual: elite_weights.len(),
        });
    }
    if elite_weights.iter().all(|&w| w == 0.0) {
        return Ok((previous.clone(), Adaptation::Frozen));
    }
    if update_cov {
        let fitted = weighted_moment_update(samples, elite_weights, CovarianceUpdate::Estimate)?;
        if fitted.is_positive_definite() {
            return Ok((fitted, Adaptation::MeanAndCovariance));
        }
        let moved = previous.with_mean(fitted.mean().clone())?;
        return Ok((moved, Adaptation::CovarianceRetained));
    }
    let fitted = weighted_moment_update(
        samples,
        elite_weights,
        CovarianceUpdate::Retain(previous.cov()),
    )?;
    Ok((
        previous.with_mean(fitted.mean().clone())?,
        Adaptation::MeanOnly,
    ))
}

/// Solves the single-proposal CE program: weighted moments with weights
/// `I{S ≥ level} · π/q_previous`.
pub fn ce_update(
    samples: &[DVector<f64>],
    performances: &[f64],
    level: f64,
    previous: &GaussianParams,
    target_log_density: &dyn Fn(&DVector<f64>) -> f64,
    update_cov: bool,
) -> Result<GaussianParams> {
    let weights = elite_weights(samples, performances, level, previous, target_log_density)?;
    let cov = if update_cov {
        CovarianceUpdate::Estimate
    } else {
        CovarianceUpdate::Retain(previous.cov())
    };
    weighted_moment_update(samples, &weights, cov)
}

fn elite_weights(
    samples: &[DVector<f64>],
    performances: &[f64],
    level: f64,
    proposal: &GaussianParams,
    target_log_density: &dyn Fn(&DVector<f64>) -> f64,
) -> Result<Vec<f64>> {
    let is = standard_is_weights(samples, proposal, target_log_density)?;
    Ok(elite_mask(performances, level)
        .into_iter()
        .zip(is)
        .map(|(elite, w)| if elite { w } else { 0.0 })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    LevelReached,
    MaxIterations,
    /// The fixed-iteration variant always runs its full budget.
    FixedBudget,
}

#[derive(Debug, Clone)]
pub struct CeTrace {
    /// `γ̂_t` per iteration.
    pub levels: Vec<f64>,
    /// `parameters[0]` is the initial proposal; `parameters[t]` is the proposal
    /// after iteration `t`.
    pub parameters: Vec<GaussianParams>,
    pub adaptations: Vec<Adaptation>,
    pub iterations: usize,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone)]
pub struct CeConfig {
    pub rho: f64,
    pub samples: usize,
    pub max_iterations: usize,
    /// Recorded in the result; the caller owns the random stream.
    pub seed: u64,
}

impl CeConfig {
    pub fn new(rho: f64, samples: usize) -> Self {
        Self {
            rho,
            samples,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.samples < 2 {
            return Err(Error::InvalidInput(
                "cross-entropy needs at least 2 samples".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CeRun {
    pub result: EstimateResult,
    pub trace: CeTrace,
    /// The batch the estimate was computed from.
    pub final_batch: WeightedBatch,
}

struct Iteration {
    batch: WeightedBatch,
    raw_quantile: f64,
}

fn draw_and_weigh<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    proposal: &GaussianParams,
    samples: usize,
    rho: f64,
    trial_index: usize,
    rng: &mut R,
) -> Result<Iteration> {
    let xs = proposal.draw(rng, samples)?;
    let perfs = problem.evaluate(&xs)?;
    let weights = standard_is_weights(&xs, proposal, &|x: &DVector<f64>| {
        problem.log_base_density(x)
    })?;
    let raw_quantile = sample_quantile(&perfs, rho)?;
    let level = raw_quantile.min(problem.gamma());
    Ok(Iteration {
        batch: WeightedBatch {
            trial_index,
            level,
            samples: vec![xs],
            performances: vec![perfs],
            dm_weights: vec![weights],
        },
        raw_quantile,
    })
}

fn adapt_from_batch(
    batch: &WeightedBatch,
    previous: &GaussianParams,
    update_cov: bool,
) -> Result<(GaussianParams, Adaptation)> {
    let elite: Vec<f64> = batch
        .weighted_performances()
        .map(|(s, w)| if s >= batch.level { w } else { 0.0 })
        .collect();
    adapt_proposal(&batch.samples[0], &elite, previous, update_cov)
}

fn summarize(
    batch: &WeightedBatch,
    gamma: f64,
    levels: &[f64],
    seed: u64,
    started: Instant,
) -> Result<EstimateResult> {
    Ok(EstimateResult {
        estimate: final_trial_estimate(batch, gamma),
        estimator_kind: EstimatorKind::FinalTrial,
        std_error: final_trial_std_error(batch, gamma),
        n_effective: effective_sample_size(&batch.all_weights())?,
        level_trace: levels.to_vec(),
        seed,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Multilevel CE: iterate while the capped level `γ̂_t = min(quantile, γ)` is
/// below `γ`, then estimate from the terminal batch with the proposal that
/// drew it.
///
/// Exceeding `max_iterations` returns [`Error::MaxIterationsExceeded`] with
/// the partial trace.
pub fn run_ce<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    config: &CeConfig,
    init: &GaussianParams,
    rng: &mut R,
) -> Result<CeRun> {
    config.validate()?;
    check_dim(problem, init)?;
    let started = Instant::now();
    let gamma = problem.gamma();
    let mut trace = CeTrace {
        levels: Vec::new(),
        parameters: vec![init.clone()],
        adaptations: Vec::new(),
        iterations: 0,
        terminated_by: Termination::MaxIterations,
    };
    let mut current = init.clone();
    loop {
        if trace.iterations == config.max_iterations {
            return Err(Error::MaxIterationsExceeded(Box::new(trace)));
        }
        trace.iterations += 1;
        let it = draw_and_weigh(
            problem,
            &current,
            config.samples,
            config.rho,
            trace.iterations,
            rng,
        )?;
        trace.levels.push(it.batch.level);
        if it.raw_quantile >= gamma {
            trace.terminated_by = Termination::LevelReached;
            let result = summarize(&it.batch, gamma, &trace.levels, config.seed, started)?;
            return Ok(CeRun {
                result,
                trace,
                final_batch: it.batch,
            });
        }
        let (next, adaptation) = adapt_from_batch(&it.batch, &current, true)?;
        if adaptation == Adaptation::Frozen {
            return Err(Error::AllWeightsZero);
        }
        trace.adaptations.push(adaptation);
        trace.parameters.push(next.clone());
        current = next;
    }
}

/// CE with a fixed number of iterations: every iteration updates with the
/// capped level, covariance updates start at iteration `cov_schedule_start`
/// (1-based), and the estimate comes from the last iteration's batch.
///
/// This is the single-proposal special case of the population method.
pub fn run_ce_fixed<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    config: &CeConfig,
    iterations: usize,
    cov_schedule_start: usize,
    init: &GaussianParams,
    rng: &mut R,
) -> Result<CeRun> {
    config.validate()?;
    check_dim(problem, init)?;
    if iterations == 0 {
        return Err(Error::InvalidInput(
            "fixed-iteration CE needs at least one iteration".into(),
        ));
    }
    let started = Instant::now();
    let mut trace = CeTrace {
        levels: Vec::new(),
        parameters: vec![init.clone()],
        adaptations: Vec::new(),
        iterations: 0,
        terminated_by: Termination::FixedBudget,
    };
    let mut current = init.clone();
    let mut last = None;
    for t in 1..=iterations {
        let it = draw_and_weigh(problem, &current, config.samples, config.rho, t, rng)?;
        trace.levels.push(it.batch.level);
        let (next, adaptation) = adapt_from_batch(&it.batch, &current, t >= cov_schedule_start)?;
        trace.adaptations.push(adaptation);
        trace.parameters.push(next.clone());
        trace.iterations = t;
        current = next;
        last = Some(it.batch);
    }
    let batch = last.expect("at least one iteration");
    let result = summarize(&batch, problem.gamma(), &trace.levels, config.seed, started)?;
    Ok(CeRun {
        result,
        trace,
        final_batch: batch,
    })
}

fn check_dim(problem: &RareEventProblem, init: &GaussianParams) -> Result<()> {
    if init.dim() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            actual: init.dim(),
        });
    }
    Ok(())
}
