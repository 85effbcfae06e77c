//! Tempered sequential Monte Carlo.
//!
//! Each layer mutates the ensemble with a kernel that leaves the current
//! tempered measure invariant (or redraws it from a fitted mixture), picks
//! the next temperature increment by bisection on the effective sample
//! size, reweights, and resamples systematically.

use crate::error::{Error, Result};
use crate::forward::PotentialEvaluator;
use crate::function_space::{
    sample_gaussian, sample_mixture, CoeffField, CovarianceSpectrum, GaussianMeasureSpec,
    GaussianMixtureSpec,
};
use crate::kernels::{adapt_beta, mh_step, ChainState, KernelConfig, KernelKind};
use crate::math::log_sum_exp;
use crate::mixture::{fit_mixture, FitConfig};
use crate::rng::{stream, Site};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

pub const BISECTION_TOLERANCE: f64 = 1e-6;
pub const BISECTION_MAX_ITER: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcConfig {
    pub strategy: KernelKind,
    pub particles: usize,
    /// MH steps per particle per layer.
    pub chain_len: usize,
    /// Initial step size.
    pub beta0: f64,
    pub ess_threshold: f64,
    pub adapt_beta: bool,
    pub fit: FitConfig,
    pub seed: u64,
    pub max_layers: usize,
}

impl SmcConfig {
    pub fn new(strategy: KernelKind, particles: usize, fit: FitConfig, seed: u64) -> Self {
        Self {
            strategy,
            particles,
            chain_len: 200,
            beta0: 0.2,
            ess_threshold: 0.6,
            adapt_beta: true,
            fit,
            seed,
            max_layers: 500,
        }
    }

    pub fn validate(&self, num_modes: usize) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::config("SMC needs at least 2 particles"));
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(Error::config(format!("beta0 must lie in (0, 1], got {}", self.beta0)));
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold < 1.0) {
            return Err(Error::config("ess_threshold must lie in (0, 1)"));
        }
        if self.max_layers == 0 {
            return Err(Error::config("max_layers must be positive"));
        }
        if self.strategy.needs_mixture() {
            self.fit.validate(num_modes)?;
        }
        Ok(())
    }
}

/// Weighted particles at a given cumulative temperature.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub particles: Vec<CoeffField>,
    pub log_weights: Vec<f64>,
    /// Cached untempered potentials, when current.
    pub potentials: Option<Vec<f64>>,
    pub h_cum: f64,
    pub layer: usize,
}

impl Ensemble {
    pub fn uniform(particles: Vec<CoeffField>) -> Self {
        let n = particles.len();
        Self {
            particles,
            log_weights: vec![-(n as f64).ln(); n],
            potentials: None,
            h_cum: 0.0,
            layer: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Weighted mean coefficients.
    pub fn mean(&self) -> Vec<f64> {
        let w = self.weights();
        let mut out = vec![0.0; self.particles.first().map_or(0, CoeffField::len)];
        for (p, wi) in self.particles.iter().zip(w) {
            for (o, c) in out.iter_mut().zip(p.coeffs()) {
                *o += wi * c;
            }
        }
        out
    }
}

/// `1 / sum w_i^2` after normalising `exp(log_weights)`.
pub fn ess(log_weights: &[f64]) -> f64 {
    let z = log_sum_exp(log_weights.iter().copied());
    1.0 / log_weights.iter().map(|l| (2.0 * (l - z)).exp()).sum::<f64>()
}

/// `log w_i - h phi_i`, renormalised in log space.
pub fn reweight(log_weights: &[f64], h: f64, potentials: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = log_weights
        .iter()
        .zip(potentials)
        .map(|(l, p)| if h == 0.0 { *l } else { l - h * p })
        .collect();
    let z = log_sum_exp(raw.iter().copied());
    raw.iter().map(|l| l - z).collect()
}

/// Largest increment `h <= remaining` keeping `ESS >= threshold * N`.
pub fn find_next_temperature(
    log_weights: &[f64],
    potentials: &[f64],
    remaining: f64,
    threshold: f64,
) -> Result<f64> {
    let target = threshold * log_weights.len() as f64;
    let ok = |h: f64| ess(&reweight(log_weights, h, potentials)) >= target;
    if ok(remaining) {
        return Ok(remaining);
    }
    let (mut lo, mut hi) = (0.0, remaining);
    let mut iter = 0;
    // Keep halving while lo is still zero so a positive step is returned.
    while iter < BISECTION_MAX_ITER || lo == 0.0 {
        if hi - lo < BISECTION_TOLERANCE && lo > 0.0 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    if lo > 0.0 {
        Ok(lo)
    } else {
        Err(Error::numerical(
            "no positive temperature increment keeps the ESS above threshold",
        ))
    }
}

/// Systematic resampling; returns the selected ancestor indices.
pub fn resample_systematic<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = log_weights.len();
    let z = log_sum_exp(log_weights.iter().copied());
    let offset: f64 = rng.random();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for m in 0..n {
        let pos = (m as f64 + offset) / n as f64;
        while i + 1 < n && cum + (log_weights[i] - z).exp() <= pos {
            cum += (log_weights[i] - z).exp();
            i += 1;
        }
        out.push(i);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MutationStats {
    pub accepted: u64,
    pub proposed: u64,
}

impl MutationStats {
    pub fn accept_rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Moves every particle with `kernel` at the ensemble temperature.
///
/// MH kernels need cached potentials and keep them current. The `gm`
/// kernel redraws particles without touching the potential and leaves the
/// cache empty.
pub fn mutate(
    ens: &mut Ensemble,
    kernel: &KernelConfig,
    chain_len: usize,
    potential: &PotentialEvaluator,
    seed: u64,
) -> Result<MutationStats> {
    let layer = ens.layer as u64;
    if kernel.kind() == KernelKind::Gm {
        let mix = kernel.mixture().expect("gm kernel carries a mixture").clone();
        ens.particles = (0..ens.len())
            .into_par_iter()
            .map(|n| sample_mixture(&mix, &mut stream(seed, layer, n as u64, Site::Mutation)))
            .collect();
        ens.potentials = None;
        let n = ens.len() as u64;
        return Ok(MutationStats {
            accepted: n,
            proposed: n,
        });
    }
    if chain_len == 0 {
        return Ok(MutationStats::default());
    }
    let phis = ens
        .potentials
        .take()
        .ok_or_else(|| Error::numerical("MH mutation needs cached potentials"))?;
    let h = ens.h_cum;
    let moved: Vec<ChainState> = ens
        .particles
        .par_iter()
        .zip(phis.par_iter())
        .enumerate()
        .map(|(n, (u, &phi))| {
            let mut rng = stream(seed, layer, n as u64, Site::Mutation);
            let mut s = ChainState::new(u.clone(), phi);
            for _ in 0..chain_len {
                s = mh_step(s, kernel, h, |v| potential.potential(v), &mut rng)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut stats = MutationStats::default();
    let mut phis = Vec::with_capacity(moved.len());
    ens.particles = moved
        .into_iter()
        .map(|s| {
            stats.accepted += s.accepted;
            stats.proposed += s.proposed;
            phis.push(s.phi);
            s.u
        })
        .collect();
    ens.potentials = Some(phis);
    Ok(stats)
}

fn evaluate_all(particles: &[CoeffField], potential: &PotentialEvaluator) -> Result<Vec<f64>> {
    particles.par_iter().map(|u| potential.potential(u)).collect()
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub h: f64,
    pub h_cum: f64,
    pub ess: f64,
    pub accept_rate: f64,
    pub beta: f64,
    pub solves_cum: u64,
    pub evaluations_cum: u64,
    pub components: Option<usize>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemperSchedule {
    pub records: Vec<LayerRecord>,
}

impl TemperSchedule {
    pub fn layers(&self) -> usize {
        self.records.len()
    }

    pub fn increments(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h).collect()
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h_cum).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for line in BufReader::new(std::fs::File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Clone)]
pub struct SmcOutput {
    pub ensemble: Ensemble,
    pub schedule: TemperSchedule,
    /// Mixture fitted at the start of the last layer, for mixture kernels.
    pub last_mixture: Option<Arc<GaussianMixtureSpec>>,
    pub evaluations: u64,
    pub solves: u64,
}

/// Runs the sampler from prior draws until the temperature reaches one.
pub fn run_smc(
    prior: &CovarianceSpectrum,
    potential: &PotentialEvaluator,
    cfg: &SmcConfig,
) -> Result<SmcOutput> {
    cfg.validate(prior.num_modes())?;
    let n = cfg.particles;
    let spec = GaussianMeasureSpec::centered(prior.clone());
    let particles: Vec<CoeffField> = (0..n)
        .map(|i| sample_gaussian(&spec, &mut stream(cfg.seed, 0, i as u64, Site::Init)))
        .collect();
    let mut ens = Ensemble::uniform(particles);
    let (eval0, solve0) = (potential.evaluations(), potential.solves());
    if cfg.strategy != KernelKind::Gm {
        ens.potentials = Some(evaluate_all(&ens.particles, potential)?);
    }
    let mut beta = if cfg.strategy == KernelKind::Gm { 1.0 } else { cfg.beta0 };
    let mut schedule = TemperSchedule::default();
    let mut last_mixture = None;
    let clock = Instant::now();
    loop {
        let layer = ens.layer;
        let mut step = || -> Result<LayerRecord> {
            let mixture = if cfg.strategy.needs_mixture() {
                let mut rng = stream(cfg.seed, layer as u64, 0, Site::MixtureFit);
                Some(Arc::new(fit_mixture(&ens.particles, prior, &cfg.fit, &mut rng)?.mixture))
            } else {
                None
            };
            let components = mixture.as_ref().map(|m| m.num_components());
            let kernel = KernelConfig::new(cfg.strategy, beta, prior.clone(), mixture.clone())?;
            let stats = mutate(&mut ens, &kernel, cfg.chain_len, potential, cfg.seed)?;
            last_mixture = mixture;
            let phis = match ens.potentials.take() {
                Some(p) => p,
                None => evaluate_all(&ens.particles, potential)?,
            };
            let remaining = 1.0 - ens.h_cum;
            let h = find_next_temperature(&ens.log_weights, &phis, remaining, cfg.ess_threshold)?;
            let final_layer = h >= remaining;
            let lw = reweight(&ens.log_weights, h, &phis);
            let ess_now = ess(&lw);
            let mut rng = stream(cfg.seed, layer as u64, 0, Site::Resample);
            let idx = resample_systematic(&lw, &mut rng);
            ens.particles = idx.iter().map(|&i| ens.particles[i].clone()).collect();
            ens.potentials = Some(idx.iter().map(|&i| phis[i]).collect());
            ens.log_weights = vec![-(n as f64).ln(); n];
            ens.h_cum = if final_layer { 1.0 } else { ens.h_cum + h };
            Ok(LayerRecord {
                layer,
                h,
                h_cum: ens.h_cum,
                ess: ess_now,
                accept_rate: stats.accept_rate(),
                beta,
                solves_cum: potential.solves() - solve0,
                evaluations_cum: potential.evaluations() - eval0,
                components,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            })
        };
        let record = step().map_err(|e| e.at_layer(layer))?;
        log::info!(
            "layer {layer}: h={:.3e} h_cum={:.4} ess={:.1} accept={:.3} beta={:.3}",
            record.h,
            record.h_cum,
            record.ess,
            record.accept_rate,
            record.beta
        );
        if cfg.adapt_beta && cfg.strategy != KernelKind::Gm {
            beta = adapt_beta(beta, record.accept_rate);
        }
        schedule.records.push(record);
        if ens.h_cum >= 1.0 {
            break;
        }
        ens.layer += 1;
        if ens.layer >= cfg.max_layers {
            return Err(Error::numerical(format!(
                "temperature {:.4} after {} layers; raise max_layers",
                ens.h_cum, cfg.max_layers
            ))
            .at_layer(ens.layer));
        }
    }
    Ok(SmcOutput {
        ensemble: ens,
        schedule,
        last_mixture,
        evaluations: potential.evaluations() - eval0,
        solves: potential.solves() - solve0,
    })
}

/// Coefficient table with one row per particle.
pub fn write_ensemble_csv(path: &Path, particles: &[CoeffField]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = particles.first().map_or(0, CoeffField::len);
    w.write_record((0..k).map(|i| format!("c{i}")))?;
    for p in particles {
        w.serialize(p.coeffs())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ensemble_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
