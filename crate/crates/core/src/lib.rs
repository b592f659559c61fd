//! Rare-event probability estimation with cross-entropy population Monte
//! Carlo, the single-proposal multilevel cross-entropy method, and the
//! LR-PMC / GR-PMC resampling baselines.
//!
//! All problems are posed as `ℓ = P_π(S(x) ≥ γ)` with a Gaussian base
//! density `π` and Gaussian proposals.

pub mod baselines;
pub mod cepmc;
pub mod cross_entropy;
pub mod error;
pub mod estimation;
pub mod gaussian;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod problems;
pub mod weighting;

pub use baselines::{multinomial_resample, resampling_weights, run_gr_pmc, run_lr_pmc, Resampling};
pub use cepmc::{cepmc_trial, run_cepmc, FinalBatch, PmcRun, PopulationState, RunConfig};
pub use cross_entropy::{run_ce, run_ce_fixed, Adaptation, CeConfig, CeRun, CeTrace};
pub use error::{Error, Result};
pub use estimation::{plain_monte_carlo, rrmse, EstimateResult, EstimatorKind};
pub use gaussian::GaussianParams;
pub use problems::RareEventProblem;
pub use weighting::WeightedBatch;
