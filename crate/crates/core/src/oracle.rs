//! Independent numerical oracles for tests.
//!
//! Nothing here shares code with the estimators it checks: the weighted
//! Gaussian log-likelihood is maximized by direct Nelder-Mead search over a
//! Cholesky parameterization instead of through the closed-form moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Minimizes `f` from `start` by Nelder-Mead, restarting from the best vertex
/// until a restart no longer improves the objective.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], step: f64, tol: f64) -> Vec<f64> {
    let mut best = start.to_vec();
    let mut best_val = f(&best);
    let mut step = step;
    for _ in 0..50 {
        let (x, v) = nelder_mead_once(&f, &best, step, tol, 20_000);
        let improved = best_val - v;
        best = x;
        best_val = v;
        if improved.abs() <= tol * (1.0 + v.abs()) {
            break;
        }
        step = (step * 0.5).max(1e-3);
    }
    best
}

fn nelder_mead_once<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    step: f64,
    tol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if spread <= tol * (1.0 + vals[0].abs()) && size <= 1e-9 {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < vals[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                vals[n] = fe;
            } else {
                simplex[n] = reflected;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = reflected;
            vals[n] = fr;
        } else {
            let (contracted, fc) = if fr < vals[n] {
                let c = along(-0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = f(&c);
                (c, fc)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                simplex[n] = contracted;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(x, b)| b + 0.5 * (x - b))
                        .collect();
                    vals[i] = f(&shrunk);
                    simplex[i] = shrunk;
                }
                evals += n;
            }
        }
    }
    let i = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap();
    (simplex[i].clone(), vals[i])
}

fn unpack(theta: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mean = theta[..d].to_vec();
    let mut l = vec![vec![0.0; d]; d];
    let mut idx = d;
    for (i, row) in l.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate().take(i + 1) {
            *entry = if i == j { theta[idx].exp() } else { theta[idx] };
            idx += 1;
        }
    }
    (mean, l)
}

/// Negative weighted Gaussian log-likelihood at a packed parameter vector
/// (mean, then the rows of a Cholesky factor with log-diagonal).
fn negative_log_likelihood(theta: &[f64], xs: &[Vec<f64>], ws: &[f64], d: usize) -> f64 {
    let (mean, l) = unpack(theta, d);
    let log_det: f64 = (0..d).map(|i| 2.0 * l[i][i].ln()).sum();
    let mut total = 0.0;
    for (x, &w) in xs.iter().zip(ws) {
        if w == 0.0 {
            continue;
        }
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = x[i] - mean[i];
            for k in 0..i {
                s -= l[i][k] * z[k];
            }
            z[i] = s / l[i][i];
        }
        let q: f64 = z.iter().map(|v| v * v).sum();
        total += w * 0.5 * (q + log_det);
    }
    total
}

/// Mean and covariance maximizing `Σ wₖ ln N(xₖ; m, C)`, found by search.
pub fn gaussian_log_likelihood_maximizer(
    samples: &[DVector<f64>],
    weights: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let xs: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| x.iter().copied().collect())
        .collect();
    // origin mean, identity factor
    let start = vec![0.0; d + d * (d + 1) / 2];
    let theta = nelder_mead(
        |t| negative_log_likelihood(t, &xs, weights, d),
        &start,
        0.5,
        1e-15,
    );
    let (mean, l) = unpack(&theta, d);
    let lm = DMatrix::from_fn(d, d, |i, j| l[i][j]);
    (DVector::from_vec(mean), &lm * lm.transpose())
}

/// Random weighted sample set of `k` points in `d` dimensions with a few zero
/// weights and enough positive mass for a nonsingular fit.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    k: usize,
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xs: Vec<DVector<f64>> = (0..k)
        .map(|_| {
            DVector::from_fn(d, |i, _| {
                shift[i] + rng.random_range(0.5..1.5) * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let positive_needed = d + 2;
    let ws: Vec<f64> = (0..k)
        .map(|i| {
            if i >= positive_needed && rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    (xs, ws)
}
