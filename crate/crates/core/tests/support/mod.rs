//! Independent reference computations shared by integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use smcgm::function_space::{ComponentHead, CovarianceSpectrum, GaussianMixtureSpec};
use smcgm::rng::StreamRng;

/// Log density of `N(mean, cov)` at `x` via a dense Cholesky factor.
pub fn dense_log_normal(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let chol = cov.clone().cholesky().expect("covariance must be SPD");
    let d = x - mean;
    let z = chol.l().solve_lower_triangular(&d).expect("triangular solve");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (z.norm_squared() + log_det + n * (2.0 * std::f64::consts::PI).ln())
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One mixture component restricted to the first `K` modes.
pub struct DenseComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Joint law of `(u, v)` when `u ~ N(0, diag lambda)` and
/// `v | u ~ sum_j w_j N(gamma u + (1 - gamma) m_j, beta^2 diag lambda_j)`,
/// assembled as a 2K-dimensional mixture with dense covariances.
pub fn dense_joint_log_density(
    u: &[f64],
    v: &[f64],
    lambda: &[f64],
    comps: &[DenseComponent],
    beta: f64,
) -> f64 {
    let k = lambda.len();
    let gamma = (1.0 - beta * beta).sqrt();
    let x = DVector::from_iterator(2 * k, u.iter().chain(v).copied());
    let terms: Vec<f64> = comps
        .iter()
        .map(|c| {
            let mut cov = DMatrix::zeros(2 * k, 2 * k);
            let mut mean = DVector::zeros(2 * k);
            for i in 0..k {
                cov[(i, i)] = lambda[i];
                cov[(i, k + i)] = gamma * lambda[i];
                cov[(k + i, i)] = gamma * lambda[i];
                cov[(k + i, k + i)] = gamma * gamma * lambda[i] + beta * beta * c.eigenvalues[i];
                mean[k + i] = (1.0 - gamma) * c.mean[i];
            }
            c.weight.ln() + dense_log_normal(&x, &mean, &cov)
        })
        .collect();
    log_sum_exp(&terms)
}

/// `log [mu0(dv) Q(v, du)] - log [mu0(du) Q(u, dv)]` by brute force.
pub fn dense_log_ratio(
    u: &[f64],
    v: &[f64],
    lambda: &[f64],
    comps: &[DenseComponent],
    beta: f64,
) -> f64 {
    dense_joint_log_density(v, u, lambda, comps, beta) - dense_joint_log_density(u, v, lambda, comps, beta)
}

/// Mixture with random weights, means and eigenvalue ratios on the first `k_fit` modes.
pub fn random_mixture(prior: &CovarianceSpectrum, k_fit: usize, m: usize, rng: &mut StreamRng) -> GaussianMixtureSpec {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let heads = raw
        .iter()
        .map(|w| ComponentHead {
            weight: w / total,
            mean: (0..k_fit)
                .map(|k| rng.random_range(-1.0..1.0) * prior.eigenvalues()[k].sqrt())
                .collect(),
            eigenvalues: (0..k_fit)
                .map(|k| rng.random_range(0.1..2.5) * prior.eigenvalues()[k])
                .collect(),
        })
        .collect();
    GaussianMixtureSpec::new(prior, k_fit, heads).unwrap()
}

pub fn dense_components(mix: &GaussianMixtureSpec, k: usize) -> Vec<DenseComponent> {
    mix.components()
        .iter()
        .map(|c| DenseComponent {
            weight: c.weight,
            mean: c.mean[..k].to_vec(),
            eigenvalues: c.eigenvalues[..k].to_vec(),
        })
        .collect()
}
