//! EM fitting of eigenbasis-diagonal Gaussian mixtures to particle ensembles.
//!
//! Only the leading `fitted_modes` coefficients are modelled; every
//! component inherits the prior beyond that, so fitted mixtures stay
//! equivalent to the prior.

use crate::error::{Error, Result};
use crate::function_space::{CoeffField, ComponentHead, CovarianceSpectrum, GaussianMixtureSpec};
use crate::math::log_sum_exp;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Leading modes modelled by the mixture.
    pub fitted_modes: usize,
    /// Component count, or the upper end of the BIC sweep.
    pub components: usize,
    #[serde(default)]
    pub bic_sweep: bool,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Independent K-means++ initialisations; the best final likelihood wins.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Component variances are floored at `var_floor * lambda_k`.
    #[serde(default = "default_var_floor")]
    pub var_floor: f64,
}

fn default_max_iter() -> usize {
    200
}

fn default_restarts() -> usize {
    1
}

fn default_var_floor() -> f64 {
    1e-4
}

impl FitConfig {
    pub fn new(fitted_modes: usize, components: usize) -> Self {
        Self {
            fitted_modes,
            components,
            bic_sweep: false,
            max_iter: default_max_iter(),
            restarts: default_restarts(),
            var_floor: default_var_floor(),
        }
    }

    pub fn validate(&self, num_modes: usize) -> Result<()> {
        if self.fitted_modes == 0 || self.fitted_modes > num_modes {
            return Err(Error::config(format!(
                "fitted_modes must lie in 1..={num_modes}, got {}",
                self.fitted_modes
            )));
        }
        if self.components == 0 {
            return Err(Error::config("mixture needs at least one component"));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::config("var_floor must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub mixture: GaussianMixtureSpec,
    /// Log-likelihood after each EM iteration.
    pub log_likelihoods: Vec<f64>,
    pub dropped: usize,
    pub bic: f64,
}

fn leading(samples: &[CoeffField], k: usize) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.coeffs()[..k].to_vec()).collect()
}

/// Per-sample `[log w_j + log N(x; m_j, diag s_j)]_j`.
fn joint_log_densities(x: &[f64], heads: &[ComponentHead]) -> Vec<f64> {
    heads
        .iter()
        .map(|h| {
            let mut acc = h.weight.ln();
            for ((&xi, &m), &s) in x.iter().zip(&h.mean).zip(&h.eigenvalues) {
                let d = xi - m;
                acc -= 0.5 * (d * d / s + (2.0 * PI * s).ln());
            }
            acc
        })
        .collect()
}

fn heads_of(mix: &GaussianMixtureSpec) -> Vec<ComponentHead> {
    let k = mix.fitted_modes();
    mix.components()
        .iter()
        .map(|c| ComponentHead {
            weight: c.weight,
            mean: c.mean[..k].to_vec(),
            eigenvalues: c.eigenvalues[..k].to_vec(),
        })
        .collect()
}

/// Posterior component probabilities per sample; rows sum to one.
pub fn em_responsibilities(samples: &[CoeffField], mix: &GaussianMixtureSpec) -> Vec<Vec<f64>> {
    let heads = heads_of(mix);
    let x = leading(samples, mix.fitted_modes());
    x.par_iter()
        .map(|xi| {
            let l = joint_log_densities(xi, &heads);
            let z = log_sum_exp(l.iter().copied());
            l.iter().map(|v| (v - z).exp()).collect()
        })
        .collect()
}

/// `sum_n log sum_j w_j N(x_n; m_j, diag lambda_j)` over fitted modes.
pub fn mixture_loglik(samples: &[CoeffField], mix: &GaussianMixtureSpec) -> f64 {
    let heads = heads_of(mix);
    leading(samples, mix.fitted_modes())
        .iter()
        .map(|xi| log_sum_exp(joint_log_densities(xi, &heads)))
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// K-means++ seeding; returns fewer than `k` centres when the data has
/// fewer distinct points.
pub(crate) fn kmeans_pp<R: Rng + ?Sized>(x: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centres = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = i;
                break;
            }
        }
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
        }
        let c = x[pick].clone();
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(sq_dist(p, &c));
        }
        centres.push(c);
    }
    centres
}

struct Em<'a> {
    x: &'a [Vec<f64>],
    floor: Vec<f64>,
    min_weight: f64,
}

impl Em<'_> {
    fn m_step(&self, resp: &[Vec<f64>], m: usize) -> Vec<ComponentHead> {
        let n = self.x.len() as f64;
        let k = self.floor.len();
        (0..m)
            .map(|j| {
                let nj: f64 = resp.iter().map(|r| r[j]).sum();
                let mut mean = vec![0.0; k];
                for (r, xi) in resp.iter().zip(self.x) {
                    for (mk, &v) in mean.iter_mut().zip(xi) {
                        *mk += r[j] * v;
                    }
                }
                let safe = nj.max(f64::MIN_POSITIVE);
                mean.iter_mut().for_each(|v| *v /= safe);
                let mut var = vec![0.0; k];
                for (r, xi) in resp.iter().zip(self.x) {
                    for ((s, &v), &mk) in var.iter_mut().zip(xi).zip(&mean) {
                        *s += r[j] * (v - mk) * (v - mk);
                    }
                }
                let eigenvalues = var
                    .iter()
                    .zip(&self.floor)
                    .map(|(s, f)| (s / safe).max(*f))
                    .collect();
                ComponentHead {
                    weight: nj / n,
                    mean,
                    eigenvalues,
                }
            })
            .collect()
    }

    fn e_step(&self, heads: &[ComponentHead]) -> (Vec<Vec<f64>>, f64) {
        let rows: Vec<(Vec<f64>, f64)> = self
            .x
            .par_iter()
            .map(|xi| {
                let l = joint_log_densities(xi, heads);
                let z = log_sum_exp(l.iter().copied());
                (l.iter().map(|v| (v - z).exp()).collect(), z)
            })
            .collect();
        let ll = rows.iter().map(|r| r.1).sum();
        (rows.into_iter().map(|r| r.0).collect(), ll)
    }

    /// Drops light components; returns the number removed.
    fn prune(&self, heads: &mut Vec<ComponentHead>) -> usize {
        let before = heads.len();
        let keep: Vec<bool> = heads.iter().map(|h| h.weight >= self.min_weight).collect();
        if keep.iter().all(|k| !k) {
            // Keep the heaviest so the fit never becomes empty.
            let best = (0..before)
                .max_by(|&a, &b| heads[a].weight.total_cmp(&heads[b].weight))
                .expect("non-empty");
            let h = heads.swap_remove(best);
            heads.clear();
            heads.push(h);
        } else {
            let mut it = keep.iter();
            heads.retain(|_| *it.next().unwrap());
        }
        let total: f64 = heads.iter().map(|h| h.weight).sum();
        heads.iter_mut().for_each(|h| h.weight /= total);
        before - heads.len()
    }
}

fn fit_restarted<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    prior: &CovarianceSpectrum,
    cfg: &FitConfig,
    m: usize,
    rng: &mut R,
) -> Result<FitOutcome> {
    let mut best = fit_fixed(x, prior, cfg, m, rng)?;
    for _ in 1..cfg.restarts {
        let fit = fit_fixed(x, prior, cfg, m, rng)?;
        if fit.log_likelihoods.last() > best.log_likelihoods.last() {
            best = fit;
        }
    }
    Ok(best)
}

fn fit_fixed<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    prior: &CovarianceSpectrum,
    cfg: &FitConfig,
    m: usize,
    rng: &mut R,
) -> Result<FitOutcome> {
    let k = cfg.fitted_modes;
    let em = Em {
        x,
        floor: prior.eigenvalues()[..k].iter().map(|l| cfg.var_floor * l).collect(),
        min_weight: 1.0 / (10.0 * x.len() as f64),
    };
    let centres = kmeans_pp(x, m, rng);
    let init: Vec<Vec<f64>> = x
        .iter()
        .map(|xi| {
            let best = (0..centres.len())
                .min_by(|&a, &b| sq_dist(xi, &centres[a]).total_cmp(&sq_dist(xi, &centres[b])))
                .expect("at least one centre");
            (0..centres.len()).map(|j| if j == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let mut heads = em.m_step(&init, centres.len());
    let mut dropped = em.prune(&mut heads);
    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iter {
        let (resp, ll) = em.e_step(&heads);
        if !ll.is_finite() {
            return Err(Error::numerical("mixture log-likelihood is not finite"));
        }
        history.push(ll);
        let converged = (ll - prev).abs() <= 1e-8 * ll.abs().max(1e-300);
        prev = ll;
        let mut next = em.m_step(&resp, heads.len());
        let removed = em.prune(&mut next);
        heads = next;
        if removed > 0 {
            log::warn!("dropped {removed} collapsed mixture component(s)");
            dropped += removed;
            prev = f64::NEG_INFINITY;
            continue;
        }
        if converged {
            break;
        }
    }
    let (_, ll) = em.e_step(&heads);
    history.push(ll);
    let params = (heads.len() - 1) + 2 * heads.len() * k;
    let bic = -2.0 * ll + params as f64 * (x.len() as f64).ln();
    Ok(FitOutcome {
        mixture: GaussianMixtureSpec::new(prior, k, heads)?,
        log_likelihoods: history,
        dropped,
        bic,
    })
}

/// Fits a mixture to equally weighted samples.
pub fn fit_mixture<R: Rng + ?Sized>(
    samples: &[CoeffField],
    prior: &CovarianceSpectrum,
    cfg: &FitConfig,
    rng: &mut R,
) -> Result<FitOutcome> {
    cfg.validate(prior.num_modes())?;
    if samples.is_empty() {
        return Err(Error::config("cannot fit a mixture to an empty ensemble"));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != prior.num_modes()) {
        return Err(Error::Shape {
            context: "mixture samples",
            expected: prior.num_modes(),
            found: bad.len(),
        });
    }
    let x = leading(samples, cfg.fitted_modes);
    if !cfg.bic_sweep {
        return fit_restarted(&x, prior, cfg, cfg.components, rng);
    }
    let mut best: Option<FitOutcome> = None;
    for m in 1..=cfg.components {
        let fit = fit_restarted(&x, prior, cfg, m, rng)?;
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// On-disk form of a fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFile {
    pub fitted_modes: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// `lambda_jk / lambda_k` on fitted modes.
    pub eigenvalue_ratios: Vec<Vec<f64>>,
}

impl MixtureFile {
    pub fn from_spec(mix: &GaussianMixtureSpec) -> Self {
        let k = mix.fitted_modes();
        let lam = &mix.prior_eigenvalues()[..k];
        Self {
            fitted_modes: k,
            weights: mix.components().iter().map(|c| c.weight).collect(),
            means: mix.components().iter().map(|c| c.mean[..k].to_vec()).collect(),
            eigenvalue_ratios: mix
                .components()
                .iter()
                .map(|c| c.eigenvalues[..k].iter().zip(lam).map(|(a, b)| a / b).collect())
                .collect(),
        }
    }

    pub fn to_spec(&self, prior: &CovarianceSpectrum) -> Result<GaussianMixtureSpec> {
        let lam = prior.eigenvalues();
        if self.means.len() != self.weights.len() || self.eigenvalue_ratios.len() != self.weights.len() {
            return Err(Error::config("mixture file has inconsistent component counts"));
        }
        let heads = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.eigenvalue_ratios)
            .map(|((&weight, mean), ratios)| ComponentHead {
                weight,
                mean: mean.clone(),
                eigenvalues: ratios.iter().zip(lam).map(|(r, l)| r * l).collect(),
            })
            .collect();
        GaussianMixtureSpec::new(prior, self.fitted_modes, heads)
    }
}
