//! Multivariate Gaussian proposals.
//!
//! Every proposal in the library is a full-covariance Gaussian. The lower
//! Cholesky factor is computed lazily and cached, so a freshly estimated
//! covariance can be held (and inspected) before anyone decides whether it is
//! usable. A covariance that fails [`factorize`] is treated as singular.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry precondition of [`factorize`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Pivots below this fraction of the largest diagonal entry count as singular.
pub const PIVOT_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = cov`.
///
/// Fails with [`Error::NotPositiveDefinite`] when any pivot is non-finite or
/// falls below `PIVOT_FLOOR` times the largest diagonal entry of `cov`.
pub fn factorize(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::InvalidInput(format!(
            "covariance must be square, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let asym = asymmetry(cov);
    if asym > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(format!(
            "covariance is not symmetric (max deviation {asym:e})"
        )));
    }
    cholesky_lower(cov).map_err(|(row, pivot)| Error::NotPositiveDefinite { row, pivot })
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn cholesky_lower(cov: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let n = cov.nrows();
    let max_diag = (0..n).map(|i| cov[(i, i)]).fold(0.0_f64, f64::max);
    let floor = PIVOT_FLOOR * max_diag;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = cov[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !pivot.is_finite() || pivot <= 0.0 || pivot < floor {
            return Err((j, pivot));
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

#[derive(Debug, Clone)]
struct Factor {
    lower: DMatrix<f64>,
    /// `ln det(L) = ½ ln det(cov)`
    half_log_det: f64,
}

/// Mean and covariance of one Gaussian proposal.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: OnceLock<std::result::Result<Factor, (usize, f64)>>,
}

impl PartialEq for GaussianParams {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianParams {
    /// Builds a proposal, symmetrizing `cov`. Positive definiteness is checked
    /// lazily by [`GaussianParams::factor`].
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Gaussian parameter".into()));
        }
        Ok(Self {
            mean,
            cov: symmetrize(cov),
            factor: OnceLock::new(),
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::isotropic(DVector::zeros(dim), 1.0)
    }

    pub fn isotropic(mean: DVector<f64>, sigma: f64) -> Self {
        let d = mean.len();
        let cov = DMatrix::identity(d, d) * (sigma * sigma);
        Self::new(mean, cov).expect("isotropic parameters are well formed")
    }

    pub fn diagonal(mean: DVector<f64>, variances: &[f64]) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Same covariance, new mean. The cached factor is reused.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: mean.len(),
            });
        }
        Ok(Self {
            mean,
            cov: self.cov.clone(),
            factor: self.factor.clone(),
        })
    }

    fn cached_factor(&self) -> Result<&Factor> {
        self.factor
            .get_or_init(|| {
                cholesky_lower(&self.cov).map(|lower| {
                    let half_log_det = lower.diagonal().iter().map(|d| d.ln()).sum();
                    Factor {
                        lower,
                        half_log_det,
                    }
                })
            })
            .as_ref()
            .map_err(|&(row, pivot)| Error::NotPositiveDefinite { row, pivot })
    }

    /// Lower Cholesky factor of the covariance.
    pub fn factor(&self) -> Result<&DMatrix<f64>> {
        self.cached_factor().map(|f| &f.lower)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cached_factor().is_ok()
    }

    /// Normalized log-density `ln N(x; mean, cov)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        let f = self.cached_factor()?;
        let l = &f.lower;
        // forward substitution L z = x - mean, accumulating |z|²
        let mut z = vec![0.0; d];
        let mut quad = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for (k, zk) in z.iter().enumerate().take(i) {
                s -= l[(i, k)] * zk;
            }
            let zi = s / l[(i, i)];
            z[i] = zi;
            quad += zi * zi;
        }
        Ok(-0.5 * quad - f.half_log_det - 0.5 * d as f64 * LN_2PI)
    }

    /// Draws `count` samples. Consumes exactly `count * dim` standard normals
    /// from `rng`, sample by sample.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<DVector<f64>>> {
        let l = self.factor()?;
        let d = self.dim();
        Ok((0..count)
            .map(|_| {
                let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.mean + l * u
            })
            .collect())
    }
}

/// What [`weighted_moment_update`] does with the covariance.
#[derive(Debug, Clone, Copy)]
pub enum CovarianceUpdate<'a> {
    /// Weighted (maximum-likelihood, `1/Σw`) sample covariance.
    Estimate,
    /// Keep the supplied covariance; only the mean moves.
    Retain(&'a DMatrix<f64>),
}

/// Closed-form maximizer of `Σ wₖ ln N(xₖ; m, C)` over the Gaussian family.
///
/// The returned covariance is not checked for positive definiteness; a point
/// mass, for example, yields the zero matrix.
pub fn weighted_moment_update(
    samples: &[DVector<f64>],
    weights: &[f64],
    cov_update: CovarianceUpdate<'_>,
) -> Result<GaussianParams> {
    if samples.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            actual: weights.len(),
        });
    }
    let Some(first) = samples.first() else {
        return Err(Error::AllWeightsZero);
    };
    let d = first.len();
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::NonFiniteWeight { index, value });
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllWeightsZero);
    }

    let mut mean = DVector::zeros(d);
    for (x, &w) in samples.iter().zip(weights) {
        if w > 0.0 {
            mean.axpy(w, x, 1.0);
        }
    }
    mean /= total;

    let cov = match cov_update {
        CovarianceUpdate::Retain(c) => {
            if c.nrows() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: c.nrows(),
                });
            }
            c.clone()
        }
        CovarianceUpdate::Estimate => {
            let mut cov = DMatrix::zeros(d, d);
            for (x, &w) in samples.iter().zip(weights) {
                if w > 0.0 {
                    let r = x - &mean;
                    cov.ger(w, &r, &r, 1.0);
                }
            }
            cov / total
        }
    };
    GaussianParams::new(mean, cov)
}

/// `ln Σ exp(vᵢ)` against the running maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
