//! Seeded replication of every cell of an experiment and its CSV outputs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cepmc_core::cepmc::default_cov_schedule_start;
use cepmc_core::{
    plain_monte_carlo, rrmse, run_ce, run_cepmc, run_gr_pmc, run_lr_pmc, CeConfig, EstimateResult,
    GaussianParams, RareEventProblem, RunConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentSpec, InitScheme, Method};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] cepmc_core::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Seed of replication `r`: the SplitMix64 output at position `r + 1` of the
/// stream started at `master`. The finalizer is a bijection and the inputs
/// differ for distinct `r`, so replication seeds never collide.
pub fn derive_seed(master: u64, rep: u64) -> u64 {
    let mut z = master.wrapping_add(rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` centered Latin-hypercube points in `[-1, 1]^dim`: each coordinate
/// takes every stratum center `-1 + (2i + 1)/n` exactly once.
pub fn latin_hypercube_init<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let centers: Vec<f64> = (0..n)
        .map(|i| -1.0 + (2 * i + 1) as f64 / n as f64)
        .collect();
    let columns: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            let mut c = centers.clone();
            c.shuffle(rng);
            c
        })
        .collect();
    (0..n)
        .map(|i| DVector::from_iterator(dim, columns.iter().map(|c| c[i])))
        .collect()
}

pub fn initial_proposals<R: Rng + ?Sized>(
    scheme: &InitScheme,
    sigma: f64,
    problem: &RareEventProblem,
    n: usize,
    rng: &mut R,
) -> cepmc_core::Result<Vec<GaussianParams>> {
    let base = problem.base();
    let cov: DMatrix<f64> = base.cov() * (sigma * sigma);
    let means = match scheme {
        InitScheme::StandardNormal => base.draw(rng, n)?,
        InitScheme::LatinHypercube => {
            let sd = base.cov().diagonal().map(f64::sqrt);
            latin_hypercube_init(n, problem.dim(), rng)
                .into_iter()
                .map(|u| base.mean() + u.component_mul(&sd))
                .collect()
        }
        InitScheme::Explicit(means) => means.clone(),
    };
    means
        .into_iter()
        .map(|m| GaussianParams::new(m, cov.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Overrides the spec's replication count.
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    /// Worker threads; `None` lets rayon decide.
    pub threads: Option<usize>,
    /// Use `paper_replications` when the spec has it.
    pub full: bool,
    /// Write 0 in the runtime column.
    pub no_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub experiment_id: String,
    pub method: String,
    pub problem: String,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "N")]
    pub proposals: usize,
    #[serde(rename = "K")]
    pub samples: usize,
    #[serde(rename = "T")]
    pub trials: usize,
    pub rho: f64,
    pub rep: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub estimate_clamped: Option<f64>,
    pub reference: Option<f64>,
    pub ess_final: Option<f64>,
    pub runtime_ms: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub method: String,
    pub problem: String,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "N")]
    pub proposals: usize,
    #[serde(rename = "K")]
    pub samples: usize,
    #[serde(rename = "T")]
    pub trials: usize,
    pub rho: f64,
    pub replications: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub rrmse: Option<f64>,
    pub reference: Option<f64>,
    pub mean_runtime_ms: f64,
}

/// Final proposals of replication 0, one row per proposal. Vectors are
/// space-separated; the covariance is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRow {
    pub experiment_id: String,
    pub method: String,
    pub problem: String,
    #[serde(rename = "D")]
    pub dim: usize,
    pub rho: f64,
    pub proposal: usize,
    pub mean: String,
    pub cov: String,
}

impl ProposalRow {
    pub fn params(&self) -> Option<GaussianParams> {
        let parse = |s: &str| {
            s.split_whitespace()
                .map(str::parse)
                .collect::<Result<Vec<f64>, _>>()
                .ok()
        };
        let mean = parse(&self.mean)?;
        let cov = parse(&self.cov)?;
        if mean.len() != self.dim || cov.len() != self.dim * self.dim {
            return None;
        }
        GaussianParams::new(
            DVector::from_vec(mean),
            DMatrix::from_row_slice(self.dim, self.dim, &cov),
        )
        .ok()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ReplicationRow>,
    pub summaries: Vec<SummaryRow>,
    pub proposals: Vec<ProposalRow>,
}

struct Outcome {
    result: EstimateResult,
    final_proposals: Vec<GaussianParams>,
}

fn run_once(
    spec: &ExperimentSpec,
    cell: &Cell,
    problem: &RareEventProblem,
    seed: u64,
) -> cepmc_core::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, t) = (spec.proposals, spec.samples_per_proposal, spec.trials);
    match cell.method {
        Method::PlainMc => Ok(Outcome {
            result: plain_monte_carlo(problem, n * k, seed, &mut rng)?,
            final_proposals: Vec::new(),
        }),
        Method::Ce => {
            let mut cfg = CeConfig::new(cell.rho, k);
            cfg.max_iterations = spec.max_iterations;
            cfg.seed = seed;
            let run = run_ce(problem, &cfg, problem.base(), &mut rng)?;
            Ok(Outcome {
                result: run.result,
                final_proposals: run.trace.parameters.last().cloned().into_iter().collect(),
            })
        }
        Method::Cepmc | Method::LrPmc | Method::GrPmc => {
            let init = initial_proposals(&spec.init, spec.init_sigma, problem, n, &mut rng)?;
            let mut cfg = RunConfig::new(n, k, t).with_rho(cell.rho).with_seed(seed);
            cfg.cov_schedule_start = spec
                .cov_schedule_start
                .unwrap_or_else(|| default_cov_schedule_start(t));
            cfg.estimator = spec.estimator;
            cfg.final_batch = spec.final_batch;
            let run = match cell.method {
                Method::Cepmc => run_cepmc(problem, &cfg, init, &mut rng)?,
                Method::LrPmc => run_lr_pmc(problem, &cfg, init, &mut rng)?,
                _ => run_gr_pmc(problem, &cfg, init, &mut rng)?,
            };
            Ok(Outcome {
                final_proposals: run.final_proposals().to_vec(),
                result: run.result,
            })
        }
    }
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn summarize(spec: &ExperimentSpec, rows: &[ReplicationRow]) -> SummaryRow {
    let first = &rows[0];
    let estimates: Vec<f64> = rows.iter().filter_map(|r| r.estimate).collect();
    let m = estimates.len();
    let mean = (m > 0).then(|| estimates.iter().sum::<f64>() / m as f64);
    let std_error = mean.filter(|_| m > 1).map(|mu| {
        let var = estimates.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    });
    SummaryRow {
        experiment_id: spec.experiment_id.clone(),
        method: first.method.clone(),
        problem: first.problem.clone(),
        dim: first.dim,
        proposals: first.proposals,
        samples: first.samples,
        trials: first.trials,
        rho: first.rho,
        replications: rows.len(),
        failures: rows.len() - m,
        mean,
        std_error,
        rrmse: first
            .reference
            .filter(|_| m > 0)
            .map(|r| rrmse(&estimates, r)),
        reference: first.reference,
        mean_runtime_ms: rows.iter().map(|r| r.runtime_ms).sum::<f64>() / rows.len() as f64,
    }
}

/// Runs every cell `R` times. Replication `r` of every cell uses
/// `derive_seed(seed, r)`, so methods see common random streams.
pub fn run_experiment(
    spec: &ExperimentSpec,
    options: &RunOptions,
) -> Result<ExperimentOutput, HarnessError> {
    let replications = match (options.replications, options.full, spec.paper_replications) {
        (Some(r), _, _) => r,
        (None, true, Some(r)) => r,
        _ => spec.replications,
    };
    if replications == 0 {
        return Err(crate::config::ConfigError {
            line: None,
            message: "replications must be at least 1".into(),
        }
        .into());
    }
    let master = options.seed.unwrap_or(spec.seed);
    let timing = spec.record_timing && !options.no_timing;
    let cells = spec.cells();
    let problems = cells
        .iter()
        .map(|c| c.problem.build(&spec.scenario))
        .collect::<Result<Vec<_>, _>>()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = options.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..replications).map(move |r| (c, r)))
        .collect();
    let results: Vec<(ReplicationRow, Option<Vec<GaussianParams>>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, rep)| {
                let cell = &cells[c];
                let problem = &problems[c];
                let seed = derive_seed(master, rep as u64);
                let outcome = run_once(spec, cell, problem, seed);
                let mut row = ReplicationRow {
                    experiment_id: spec.experiment_id.clone(),
                    method: cell.method.as_str().to_string(),
                    problem: cell.problem.id().to_string(),
                    dim: problem.dim(),
                    proposals: spec.proposals,
                    samples: spec.samples_per_proposal,
                    trials: spec.trials,
                    rho: cell.rho,
                    rep,
                    seed,
                    estimate: None,
                    estimate_clamped: None,
                    reference: problem.reference(),
                    ess_final: None,
                    runtime_ms: 0.0,
                    error: String::new(),
                };
                match outcome {
                    Ok(o) => {
                        row.estimate = Some(o.result.estimate);
                        row.estimate_clamped = Some(o.result.clamped());
                        row.ess_final = Some(o.result.n_effective);
                        if timing {
                            row.runtime_ms = (o.result.runtime_ms * 1e3).round() / 1e3;
                        }
                        (row, (rep == 0).then_some(o.final_proposals))
                    }
                    Err(e) => {
                        row.error = e.to_string();
                        (row, None)
                    }
                }
            })
            .collect()
    });

    let mut output = ExperimentOutput::default();
    for (c, chunk) in results.chunks(replications).enumerate() {
        let cell = &cells[c];
        let rows: Vec<ReplicationRow> = chunk.iter().map(|(r, _)| r.clone()).collect();
        output.summaries.push(summarize(spec, &rows));
        if let Some((_, Some(finals))) = chunk.first() {
            for (i, q) in finals.iter().enumerate() {
                output.proposals.push(ProposalRow {
                    experiment_id: spec.experiment_id.clone(),
                    method: cell.method.as_str().to_string(),
                    problem: cell.problem.id().to_string(),
                    dim: q.dim(),
                    rho: cell.rho,
                    proposal: i,
                    mean: join(q.mean().iter().copied()),
                    cov: join(q.cov().transpose().iter().copied()),
                });
            }
        }
        output.rows.extend(rows);
    }
    Ok(output)
}

pub const REPLICATIONS_CSV: &str = "replications.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const PROPOSALS_CSV: &str = "proposals.csv";
pub const CONFIG_COPY: &str = "experiment.conf";

/// Writes the per-replication rows, the summary, the rep-0 proposals and a
/// copy of the experiment file into `dir`.
pub fn write_outputs(
    spec: &ExperimentSpec,
    output: &ExperimentOutput,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    written.push(write_csv(&dir.join(REPLICATIONS_CSV), &output.rows)?);
    written.push(write_csv(&dir.join(SUMMARY_CSV), &output.summaries)?);
    written.push(write_csv(&dir.join(PROPOSALS_CSV), &output.proposals)?);
    let conf = dir.join(CONFIG_COPY);
    fs::write(&conf, &spec.source)?;
    written.push(conf);
    Ok(written)
}

/// A CSV row type and its header, written even when there are no rows.
pub trait Record: Serialize {
    const HEADER: &'static [&'static str];
}

impl Record for ReplicationRow {
    const HEADER: &'static [&'static str] = &[
        "experiment_id",
        "method",
        "problem",
        "D",
        "N",
        "K",
        "T",
        "rho",
        "rep",
        "seed",
        "estimate",
        "estimate_clamped",
        "reference",
        "ess_final",
        "runtime_ms",
        "error",
    ];
}

impl Record for SummaryRow {
    const HEADER: &'static [&'static str] = &[
        "experiment_id",
        "method",
        "problem",
        "D",
        "N",
        "K",
        "T",
        "rho",
        "replications",
        "failures",
        "mean",
        "std_error",
        "rrmse",
        "reference",
        "mean_runtime_ms",
    ];
}

impl Record for ProposalRow {
    const HEADER: &'static [&'static str] = &[
        "experiment_id",
        "method",
        "problem",
        "D",
        "rho",
        "proposal",
        "mean",
        "cov",
    ];
}

pub(crate) fn write_csv<T: Record>(path: &Path, rows: &[T]) -> Result<PathBuf, HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(T::HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn read_replications(dir: &Path) -> Result<Vec<ReplicationRow>, HarnessError> {
    read_csv(&dir.join(REPLICATIONS_CSV))
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    read_csv(&dir.join(SUMMARY_CSV))
}

pub fn read_proposals(dir: &Path) -> Result<Vec<ProposalRow>, HarnessError> {
    read_csv(&dir.join(PROPOSALS_CSV))
}
