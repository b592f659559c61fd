//! Cross-entropy population Monte Carlo.
//!
//! Each trial draws `K` samples from each of `N` Gaussian proposals, weights
//! all `NK` samples against the equal-weight mixture of the proposals, and
//! sets one temporary level from the pooled performances. Every proposal is
//! then refit independently to its own elite samples, weighted by their
//! mixture weights. Covariances are held fixed until `cov_schedule_start`.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cross_entropy::{adapt_proposal, sample_quantile, Adaptation, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::estimation::{
    effective_sample_size, final_trial_estimate, final_trial_std_error, EstimateResult,
    EstimatorKind,
};
use crate::gaussian::GaussianParams;
use crate::problems::RareEventProblem;
use crate::weighting::{dm_weights, WeightedBatch};

/// Which batch the reported estimate is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FinalBatch {
    /// The last trial's samples, as drawn.
    #[default]
    AsDrawn,
    /// A fresh batch from the proposals after the last update.
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `N`
    pub proposals: usize,
    /// `K`
    pub samples_per_proposal: usize,
    /// `T`
    pub trials: usize,
    pub rho: f64,
    /// First trial (1-based) that also updates covariances.
    pub cov_schedule_start: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub final_batch: FinalBatch,
    /// Keep every trial's batch in the run output, not just the last.
    pub retain_batches: bool,
}

impl RunConfig {
    /// Covariance updates start at `⌈T/2⌉ + 1`: the first half of the trials
    /// moves means only.
    pub fn new(proposals: usize, samples_per_proposal: usize, trials: usize) -> Self {
        Self {
            proposals,
            samples_per_proposal,
            trials,
            rho: DEFAULT_RHO,
            cov_schedule_start: default_cov_schedule_start(trials),
            seed: 0,
            estimator: EstimatorKind::FinalTrial,
            final_batch: FinalBatch::AsDrawn,
            retain_batches: false,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_cov_schedule_start(mut self, start: usize) -> Self {
        self.cov_schedule_start = start;
        self
    }

    /// The random stream this config's seed names.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.proposals == 0 || self.samples_per_proposal == 0 || self.trials == 0 {
            return Err(Error::InvalidInput(
                "N, K and T must all be at least 1".into(),
            ));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.cov_schedule_start == 0 || self.cov_schedule_start > self.trials + 1 {
            return Err(Error::InvalidInput(format!(
                "cov_schedule_start must lie in [1, T+1], got {}",
                self.cov_schedule_start
            )));
        }
        if self.estimator == EstimatorKind::PlainMC {
            return Err(Error::InvalidInput(
                "plain Monte Carlo is not a population estimator".into(),
            ));
        }
        Ok(())
    }
}

pub fn default_cov_schedule_start(trials: usize) -> usize {
    trials.div_ceil(2) + 1
}

#[derive(Debug, Clone)]
pub struct PopulationState {
    pub proposals: Vec<GaussianParams>,
    /// 1-based index of the next trial.
    pub trial: usize,
    pub level_trace: Vec<f64>,
}

impl PopulationState {
    pub fn new(proposals: Vec<GaussianParams>) -> Self {
        Self {
            proposals,
            trial: 1,
            level_trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    pub batch: WeightedBatch,
    pub adaptations: Vec<Adaptation>,
}

/// Draws `K` per proposal, evaluates and DM-weights the whole population.
/// The returned batch's level is `γ`.
pub(crate) fn sample_population<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    proposals: &[GaussianParams],
    samples_per_proposal: usize,
    trial_index: usize,
    rng: &mut R,
) -> Result<WeightedBatch> {
    let samples = proposals
        .iter()
        .map(|q| q.draw(rng, samples_per_proposal))
        .collect::<Result<Vec<_>>>()?;
    let performances = samples
        .iter()
        .map(|group| problem.evaluate(group))
        .collect::<Result<Vec<_>>>()?;
    let weights = dm_weights(&samples, proposals, &|x: &DVector<f64>| {
        problem.log_base_density(x)
    })?;
    Ok(WeightedBatch {
        trial_index,
        level: problem.gamma(),
        samples,
        performances,
        dm_weights: weights,
    })
}

/// One trial: sample, weight, set the pooled level, refit every proposal.
pub fn cepmc_trial<R: Rng + ?Sized>(
    state: &mut PopulationState,
    problem: &RareEventProblem,
    config: &RunConfig,
    rng: &mut R,
) -> Result<TrialReport> {
    let mut batch = sample_population(
        problem,
        &state.proposals,
        config.samples_per_proposal,
        state.trial,
        rng,
    )?;
    let pooled = batch.all_performances();
    let level = sample_quantile(&pooled, config.rho)?.min(problem.gamma());
    batch.level = level;

    let update_cov = state.trial >= config.cov_schedule_start;
    let mut adaptations = Vec::with_capacity(state.proposals.len());
    for (n, proposal) in state.proposals.iter_mut().enumerate() {
        let elite: Vec<f64> = batch.performances[n]
            .iter()
            .zip(&batch.dm_weights[n])
            .map(|(&s, &w)| if s >= level { w } else { 0.0 })
            .collect();
        let (next, adaptation) = adapt_proposal(&batch.samples[n], &elite, proposal, update_cov)?;
        *proposal = next;
        adaptations.push(adaptation);
    }
    state.level_trace.push(level);
    state.trial += 1;
    Ok(TrialReport { batch, adaptations })
}

/// Output of a population run (CE-PMC or a resampling baseline).
#[derive(Debug, Clone)]
pub struct PmcRun {
    pub result: EstimateResult,
    /// All trials when `retain_batches` is set, otherwise only the batch the
    /// estimate came from.
    pub batches: Vec<WeightedBatch>,
    /// `parameter_trace[t]` holds the proposals before trial `t + 1`; the
    /// last entry is the population after the final update.
    pub parameter_trace: Vec<Vec<GaussianParams>>,
    pub adaptations: Vec<Vec<Adaptation>>,
    /// Final-trial estimator evaluated on each trial.
    pub trial_estimates: Vec<f64>,
    pub trial_std_errors: Vec<f64>,
}

impl PmcRun {
    pub fn final_proposals(&self) -> &[GaussianParams] {
        self.parameter_trace
            .last()
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    pub fn final_batch(&self) -> &WeightedBatch {
        self.batches.last().expect("a run holds at least one batch")
    }
}

pub(crate) fn check_init(
    problem: &RareEventProblem,
    config: &RunConfig,
    init: &[GaussianParams],
) -> Result<()> {
    config.validate()?;
    if init.len() != config.proposals {
        return Err(Error::InvalidInput(format!(
            "expected {} initial proposals, got {}",
            config.proposals,
            init.len()
        )));
    }
    if let Some(bad) = init.iter().find(|q| q.dim() != problem.dim()) {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            actual: bad.dim(),
        });
    }
    Ok(())
}

/// Assembles the run output and the estimate shared by every population
/// method.
pub(crate) struct RunRecorder {
    started: Instant,
    gamma: f64,
    retain: bool,
    batches: Vec<WeightedBatch>,
    parameter_trace: Vec<Vec<GaussianParams>>,
    adaptations: Vec<Vec<Adaptation>>,
    trial_estimates: Vec<f64>,
    trial_std_errors: Vec<f64>,
    levels: Vec<f64>,
}

impl RunRecorder {
    pub(crate) fn new(
        problem: &RareEventProblem,
        config: &RunConfig,
        init: &[GaussianParams],
    ) -> Self {
        Self {
            started: Instant::now(),
            gamma: problem.gamma(),
            retain: config.retain_batches,
            batches: Vec::new(),
            parameter_trace: vec![init.to_vec()],
            adaptations: Vec::new(),
            trial_estimates: Vec::new(),
            trial_std_errors: Vec::new(),
            levels: Vec::new(),
        }
    }

    pub(crate) fn record(
        &mut self,
        batch: WeightedBatch,
        adaptations: Vec<Adaptation>,
        proposals: &[GaussianParams],
    ) {
        self.trial_estimates
            .push(final_trial_estimate(&batch, self.gamma));
        self.trial_std_errors
            .push(final_trial_std_error(&batch, self.gamma));
        self.levels.push(batch.level);
        if !self.retain {
            self.batches.clear();
        }
        self.batches.push(batch);
        self.adaptations.push(adaptations);
        self.parameter_trace.push(proposals.to_vec());
    }

    pub(crate) fn finish<R: Rng + ?Sized>(
        mut self,
        problem: &RareEventProblem,
        config: &RunConfig,
        rng: &mut R,
    ) -> Result<PmcRun> {
        let last = self
            .parameter_trace
            .last()
            .expect("initial population recorded")
            .clone();
        let (estimate, std_error) = match (config.estimator, config.final_batch) {
            (EstimatorKind::AllTrials, _) => {
                let t = self.trial_estimates.len() as f64;
                let est = self.trial_estimates.iter().sum::<f64>() / t;
                let se = self
                    .trial_std_errors
                    .iter()
                    .map(|s| s * s)
                    .sum::<f64>()
                    .sqrt()
                    / t;
                (est, se)
            }
            (_, FinalBatch::AsDrawn) => (
                *self.trial_estimates.last().expect("at least one trial"),
                *self.trial_std_errors.last().expect("at least one trial"),
            ),
            (_, FinalBatch::Fresh) => {
                let fresh = sample_population(
                    problem,
                    &last,
                    config.samples_per_proposal,
                    config.trials + 1,
                    rng,
                )?;
                let out = (
                    final_trial_estimate(&fresh, self.gamma),
                    final_trial_std_error(&fresh, self.gamma),
                );
                if !self.retain {
                    self.batches.clear();
                }
                self.batches.push(fresh);
                out
            }
        };
        let final_weights = self
            .batches
            .last()
            .expect("a batch was recorded")
            .all_weights();
        let result = EstimateResult {
            estimate,
            estimator_kind: config.estimator,
            std_error,
            n_effective: effective_sample_size(&final_weights)?,
            level_trace: self.levels,
            seed: config.seed,
            runtime_ms: self.started.elapsed().as_secs_f64() * 1e3,
        };
        Ok(PmcRun {
            result,
            batches: self.batches,
            parameter_trace: self.parameter_trace,
            adaptations: self.adaptations,
            trial_estimates: self.trial_estimates,
            trial_std_errors: self.trial_std_errors,
        })
    }
}

/// Runs `T` trials of CE-PMC from `init` and estimates from the last trial
/// (or as `config.estimator` / `config.final_batch` select).
pub fn run_cepmc<R: Rng + ?Sized>(
    problem: &RareEventProblem,
    config: &RunConfig,
    init: Vec<GaussianParams>,
    rng: &mut R,
) -> Result<PmcRun> {
    check_init(problem, config, &init)?;
    let mut recorder = RunRecorder::new(problem, config, &init);
    let mut state = PopulationState::new(init);
    for _ in 0..config.trials {
        let report = cepmc_trial(&mut state, problem, config, rng)?;
        recorder.record(report.batch, report.adaptations, &state.proposals);
    }
    recorder.finish(problem, config, rng)
}
