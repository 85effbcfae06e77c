//! Metropolis-Hastings kernels on the prior eigenbasis.
//!
//! Four proposals are supported: random walk, pCN, pCN with Gaussian
//! mixture innovations, and direct mixture draws. All acceptance arithmetic
//! is done in log space. The pCN-GM ratio factorises over modes into 2x2
//! blocks, so one evaluation costs `O(M K_fit)`.

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::function_space::{sample_mixture, CoeffField, CovarianceSpectrum, GaussianMixtureSpec};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Rw,
    Pcn,
    PcnGm,
    Gm,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rw => "rw",
            Self::Pcn => "pcn",
            Self::PcnGm => "pcn-gm",
            Self::Gm => "gm",
        }
    }

    pub fn needs_mixture(self) -> bool {
        matches!(self, Self::PcnGm | Self::Gm)
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rw" => Ok(Self::Rw),
            "pcn" => Ok(Self::Pcn),
            "pcn-gm" => Ok(Self::PcnGm),
            "gm" => Ok(Self::Gm),
            other => Err(Error::config(format!(
                "unknown strategy `{other}` (expected rw, pcn, pcn-gm or gm)"
            ))),
        }
    }
}

/// `sqrt(1 - beta^2)`.
pub fn gamma_of(beta: f64) -> f64 {
    (1.0 - beta * beta).max(0.0).sqrt()
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("step size beta must lie in (0, 1], got {beta}")))
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `u + beta * xi`, `xi ~ N(0, C)`.
pub fn propose_rw<R: Rng + ?Sized>(
    u: &CoeffField,
    beta: f64,
    prior: &CovarianceSpectrum,
    rng: &mut R,
) -> CoeffField {
    let coeffs = u
        .coeffs()
        .iter()
        .zip(prior.eigenvalues())
        .map(|(&c, &l)| c + beta * l.sqrt() * normal(rng))
        .collect();
    CoeffField::from_parts(u.basis().clone(), coeffs)
}

/// `gamma * u + beta * xi`, `xi ~ N(0, C)`.
pub fn propose_pcn<R: Rng + ?Sized>(
    u: &CoeffField,
    beta: f64,
    prior: &CovarianceSpectrum,
    rng: &mut R,
) -> CoeffField {
    let gamma = gamma_of(beta);
    let coeffs = u
        .coeffs()
        .iter()
        .zip(prior.eigenvalues())
        .map(|(&c, &l)| gamma * c + beta * l.sqrt() * normal(rng))
        .collect();
    CoeffField::from_parts(u.basis().clone(), coeffs)
}

/// Draws a component `j`, then `gamma * u + (1 - gamma) m_j + beta * xi`
/// with `xi ~ N(0, C_j)`.
pub fn propose_pcn_gm<R: Rng + ?Sized>(
    u: &CoeffField,
    beta: f64,
    mix: &GaussianMixtureSpec,
    rng: &mut R,
) -> CoeffField {
    let gamma = gamma_of(beta);
    let c = &mix.components()[mix.draw_component(rng)];
    let coeffs = u
        .coeffs()
        .iter()
        .zip(c.mean.iter().zip(&c.eigenvalues))
        .map(|(&x, (&m, &l))| gamma * x + (1.0 - gamma) * m + beta * l.sqrt() * normal(rng))
        .collect();
    CoeffField::from_parts(u.basis().clone(), coeffs)
}

/// `min(1, exp(phi_u - phi_v))`.
pub fn accept_pcn(phi_u: f64, phi_v: f64) -> f64 {
    (phi_u - phi_v).min(0.0).exp()
}

/// Per-mode block of the joint law of `(u, v)` under prior times proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeBlock {
    pub lambda: f64,
    pub lambda_j: f64,
    pub beta: f64,
}

impl ModeBlock {
    /// `[[lambda, gamma lambda], [gamma lambda, gamma^2 lambda + beta^2 lambda_j]]`.
    pub fn forward(&self) -> [[f64; 2]; 2] {
        let g = gamma_of(self.beta);
        let c = self.lambda + self.beta * self.beta * (self.lambda_j - self.lambda);
        [[self.lambda, g * self.lambda], [g * self.lambda, c]]
    }

    /// The same block for `(v, u)` read in `(u, v)` order.
    pub fn reversed(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, c]] = self.forward();
        [[c, b], [b, a]]
    }

    pub fn determinant(&self) -> f64 {
        self.beta * self.beta * self.lambda * self.lambda_j
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEigen {
    pub t_plus: f64,
    pub t_minus: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
}

/// Eigen-decomposition of [`ModeBlock::forward`]: eigenvectors `(1, t)`
/// with eigenvalues `eta = (1 + gamma t) lambda`.
pub fn block_eigen(lambda: f64, lambda_j: f64, beta: f64) -> BlockEigen {
    let gamma = gamma_of(beta);
    let b2 = beta * beta;
    let l = (lambda_j - lambda) / lambda;
    let half = 0.5 * b2 * l;
    let eta_plus = lambda * (1.0 + half + (half * half + gamma * gamma).sqrt());
    let eta_minus = b2 * lambda * lambda_j / eta_plus;
    let (t_plus, t_minus) = if gamma == 0.0 {
        if l >= 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (0.0, f64::NEG_INFINITY)
        }
    } else {
        let a = half / gamma;
        let r = (a * a + 1.0).sqrt();
        if a >= 0.0 {
            let tp = a + r;
            (tp, -1.0 / tp)
        } else {
            let tm = a - r;
            (-1.0 / tm, tm)
        }
    };
    BlockEigen {
        t_plus,
        t_minus,
        eta_plus,
        eta_minus,
    }
}

/// `log N(x; mean, var)` without the `2 pi` constant.
#[inline]
fn log_normal_kernel(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + var.ln())
}

/// Log mixture density ratio `mu0(dv) Q(v, du) / mu0(du) Q(u, dv)` for the
/// pCN-GM proposal. Modes past `fitted_modes` cancel exactly and are skipped.
pub fn log_ratio_pcn_gm(
    u: &CoeffField,
    v: &CoeffField,
    beta: f64,
    mix: &GaussianMixtureSpec,
) -> Result<f64> {
    let gamma = gamma_of(beta);
    let b2 = beta * beta;
    let k_fit = mix.fitted_modes();
    let lambda = &mix.prior_eigenvalues()[..k_fit];
    let (u, v) = (&u.coeffs()[..k_fit], &v.coeffs()[..k_fit]);
    let mut fwd = Vec::with_capacity(mix.num_components());
    let mut rev = Vec::with_capacity(mix.num_components());
    for (c, &lw) in mix.components().iter().zip(mix.log_weights()) {
        let (mut lf, mut lr) = (lw, lw);
        for k in 0..k_fit {
            let lk = lambda[k];
            let shift = (1.0 - gamma) * c.mean[k];
            let cond = b2 * c.eigenvalues[k];
            lf += log_normal_kernel(u[k], 0.0, lk) + log_normal_kernel(v[k], gamma * u[k] + shift, cond);
            lr += log_normal_kernel(v[k], 0.0, lk) + log_normal_kernel(u[k], gamma * v[k] + shift, cond);
        }
        fwd.push(lf);
        rev.push(lr);
    }
    let (num, den) = (log_sum_exp(rev), log_sum_exp(fwd));
    let r = num - den;
    if !r.is_finite() {
        return Err(Error::numerical(format!(
            "pCN-GM density ratio is not finite (log numerator {num}, log denominator {den})"
        )));
    }
    Ok(r)
}

/// `min(0, phi_u - phi_v + log R)`; pass tempered potentials.
pub fn log_accept_pcn_gm(
    u: &CoeffField,
    v: &CoeffField,
    phi_u: f64,
    phi_v: f64,
    beta: f64,
    mix: &GaussianMixtureSpec,
) -> Result<f64> {
    Ok((phi_u - phi_v + log_ratio_pcn_gm(u, v, beta, mix)?).min(0.0))
}

/// Step-size rule applied between layers.
pub fn adapt_beta(beta: f64, accept_rate: f64) -> f64 {
    let next = if accept_rate > 0.3 {
        2.0 * beta
    } else if accept_rate < 0.15 {
        0.5 * beta
    } else {
        beta
    };
    next.clamp(f64::MIN_POSITIVE, 1.0)
}

/// An immutable proposal/acceptance pair.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    kind: KernelKind,
    beta: f64,
    prior: CovarianceSpectrum,
    mixture: Option<Arc<GaussianMixtureSpec>>,
}

impl KernelConfig {
    pub fn new(
        kind: KernelKind,
        beta: f64,
        prior: CovarianceSpectrum,
        mixture: Option<Arc<GaussianMixtureSpec>>,
    ) -> Result<Self> {
        check_beta(beta)?;
        if kind.needs_mixture() {
            let mix = mixture
                .as_ref()
                .ok_or_else(|| Error::config(format!("strategy {kind} needs a fitted mixture")))?;
            if mix.prior_eigenvalues() != prior.eigenvalues() {
                return Err(Error::config("mixture was fitted against a different prior"));
            }
        }
        Ok(Self {
            kind,
            beta,
            prior,
            mixture,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        gamma_of(self.beta)
    }

    pub fn prior(&self) -> &CovarianceSpectrum {
        &self.prior
    }

    pub fn mixture(&self) -> Option<&Arc<GaussianMixtureSpec>> {
        self.mixture.as_ref()
    }

    fn mix(&self) -> &GaussianMixtureSpec {
        self.mixture.as_deref().expect("checked at construction")
    }

    pub fn propose<R: Rng + ?Sized>(&self, u: &CoeffField, rng: &mut R) -> CoeffField {
        match self.kind {
            KernelKind::Rw => propose_rw(u, self.beta, &self.prior, rng),
            KernelKind::Pcn => propose_pcn(u, self.beta, &self.prior, rng),
            KernelKind::PcnGm => propose_pcn_gm(u, self.beta, self.mix(), rng),
            KernelKind::Gm => sample_mixture(self.mix(), rng),
        }
    }

    /// Log acceptance probability given tempered potentials.
    pub fn log_accept(&self, u: &CoeffField, v: &CoeffField, phi_u: f64, phi_v: f64) -> Result<f64> {
        match self.kind {
            KernelKind::Rw => {
                let log_prior: f64 = u
                    .coeffs()
                    .iter()
                    .zip(v.coeffs())
                    .zip(self.prior.eigenvalues())
                    .map(|((a, b), l)| 0.5 * (a * a - b * b) / l)
                    .sum();
                Ok((phi_u - phi_v + log_prior).min(0.0))
            }
            KernelKind::Pcn => Ok((phi_u - phi_v).min(0.0)),
            KernelKind::PcnGm => log_accept_pcn_gm(u, v, phi_u, phi_v, self.beta, self.mix()),
            KernelKind::Gm => Ok(0.0),
        }
    }
}

/// A chain position with its cached (untempered) potential.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub u: CoeffField,
    pub phi: f64,
    pub accepted: u64,
    pub proposed: u64,
}

impl ChainState {
    pub fn new(u: CoeffField, phi: f64) -> Self {
        Self {
            u,
            phi,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn accept_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// One MH transition targeting `exp(-temper * phi) mu0`. Evaluates the
/// potential exactly once.
pub fn mh_step<R, F>(
    mut state: ChainState,
    cfg: &KernelConfig,
    temper: f64,
    potential: F,
    rng: &mut R,
) -> Result<ChainState>
where
    R: Rng + ?Sized,
    F: Fn(&CoeffField) -> Result<f64>,
{
    let v = cfg.propose(&state.u, rng);
    let phi_v = potential(&v)?;
    state.proposed += 1;
    let accept = if cfg.kind == KernelKind::Gm {
        true
    } else {
        let log_a = cfg.log_accept(&state.u, &v, temper * state.phi, temper * phi_v)?;
        let draw: f64 = rng.random();
        draw.ln() < log_a
    };
    if accept {
        state.u = v;
        state.phi = phi_v;
        state.accepted += 1;
    }
    Ok(state)
}
