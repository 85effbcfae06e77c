//! Ready-made problem setups.

use crate::error::{Error, Result};
use crate::forward::darcy::DarcyConfig;
use crate::forward::{
    example_one_modes, measurement_grid, synthesize_data, DarcyForward, LinearForward,
    MeasurementLayout, ObservationSetup, PotentialEvaluator,
};
use crate::function_space::{
    make_prior_basis, sample_gaussian, CoeffField, CovarianceSpectrum, GaussianMeasureSpec,
};
use crate::rng::{stream, Site};
use std::f64::consts::PI;

/// Four-mode target on `[0, 1]` with prior `(I - 0.01 Lap)^-2`.
pub struct Multimodal {
    pub prior: CovarianceSpectrum,
    pub modes: Vec<CoeffField>,
    pub sigma: f64,
    pub evaluator: PotentialEvaluator,
}

pub fn multimodal1d(num_modes: usize, sigma: f64) -> Result<Multimodal> {
    let (basis, prior) = make_prior_basis(1, num_modes, 2 * num_modes, 0.01, 2)?;
    let modes = example_one_modes(&basis)?;
    let evaluator = PotentialEvaluator::multimodal(modes.clone(), sigma)?;
    Ok(Multimodal {
        prior,
        modes,
        sigma,
        evaluator,
    })
}

/// Closed-form posterior of the four-mode target: a Gaussian mixture
/// with diagonal covariance in the prior eigenbasis.
#[derive(Debug, Clone)]
pub struct MultimodalPosterior {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Multimodal {
    pub fn posterior(&self) -> MultimodalPosterior {
        let s2 = self.sigma * self.sigma;
        let lam = self.prior.eigenvalues();
        let log_w: Vec<f64> = self
            .modes
            .iter()
            .map(|f| {
                -0.5 * f.coeffs().iter().zip(lam).map(|(c, l)| c * c / (l + s2)).sum::<f64>()
            })
            .collect();
        let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = raw.iter().sum();
        MultimodalPosterior {
            weights: raw.iter().map(|r| r / z).collect(),
            means: self
                .modes
                .iter()
                .map(|f| f.coeffs().iter().zip(lam).map(|(c, l)| l * c / (l + s2)).collect())
                .collect(),
            variances: lam.iter().map(|l| l * s2 / (l + s2)).collect(),
        }
    }
}

impl MultimodalPosterior {
    /// Posterior mean of `cos(pi u_1)`, where `u_1` is the first non-constant coefficient.
    pub fn cos_functional(&self) -> f64 {
        let damp = (-0.5 * PI * PI * self.variances[1]).exp();
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * (PI * m[1]).cos() * damp)
            .sum()
    }
}

pub fn cos_functional(u: &CoeffField) -> f64 {
    (PI * u.coeffs()[1]).cos()
}

/// Darcy inversion with prior `(I - Lap)^-2` and data from a prior draw.
pub struct Darcy {
    pub prior: CovarianceSpectrum,
    pub truth: CoeffField,
    pub config: DarcyConfig,
    pub observations: ObservationSetup,
    pub evaluator: PotentialEvaluator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarcySpec {
    pub layout: MeasurementLayout,
    pub config: DarcyConfig,
    /// Modes per axis of the inversion prior.
    pub modes_per_axis: usize,
    /// Modes per axis of the true field.
    pub truth_modes_per_axis: usize,
    pub noise_pct: f64,
    pub data_seed: u64,
}

impl DarcySpec {
    pub fn new(layout: MeasurementLayout, config: DarcyConfig, data_seed: u64) -> Self {
        Self {
            layout,
            config,
            modes_per_axis: config.inverse_resolution,
            truth_modes_per_axis: config.inverse_resolution,
            noise_pct: 0.02,
            data_seed,
        }
    }
}

/// The true field for `spec`, drawn on its own mode set.
pub fn darcy_truth(spec: &DarcySpec) -> Result<CoeffField> {
    let (_, truth_prior) = make_prior_basis(
        2,
        spec.truth_modes_per_axis,
        spec.config.inverse_resolution.max(spec.truth_modes_per_axis),
        1.0,
        2,
    )?;
    Ok(sample_gaussian(
        &GaussianMeasureSpec::centered(truth_prior),
        &mut stream(spec.data_seed, 0, 0, Site::Truth),
    ))
}

pub fn darcy(spec: &DarcySpec) -> Result<Darcy> {
    spec.config.validate()?;
    if spec.modes_per_axis > spec.config.inverse_resolution {
        return Err(Error::config("modes per axis cannot exceed the inverse resolution"));
    }
    let truth_full = darcy_truth(spec)?;
    let points = measurement_grid(spec.layout);
    let observations = synthesize_data(
        &truth_full,
        &spec.config,
        &points,
        spec.noise_pct,
        &mut stream(spec.data_seed, 0, 0, Site::Data),
    )?;
    darcy_with_data(spec, truth_full, observations)
}

/// Builds the inversion from existing observations.
pub fn darcy_with_data(spec: &DarcySpec, truth_full: CoeffField, observations: ObservationSetup) -> Result<Darcy> {
    let (basis, prior) = make_prior_basis(2, spec.modes_per_axis, spec.config.inverse_resolution, 1.0, 2)?;
    let truth = project(&truth_full, &prior)?;
    let forward = DarcyForward::new(basis, spec.config.source, observations.points.clone())?;
    let evaluator = PotentialEvaluator::darcy(forward, observations.clone())?;
    Ok(Darcy {
        prior,
        truth,
        config: spec.config,
        observations,
        evaluator,
    })
}

/// Restricts or zero-pads `u` onto the modes of `prior`.
pub fn project(u: &CoeffField, prior: &CovarianceSpectrum) -> Result<CoeffField> {
    let from = u.basis();
    let to = prior.basis();
    if from.dim() != to.dim() {
        return Err(Error::config("cannot project between dimensions"));
    }
    let mut out = CoeffField::zeros(to.clone());
    for k in 0..to.num_modes() {
        let mode = to.mode(k);
        if mode[0] < from.modes_per_axis() && mode[1] < from.modes_per_axis().max(1) {
            if let Some(j) = (0..from.num_modes()).find(|&j| from.mode(j) == mode) {
                out.coeffs_mut()[k] = u.coeffs()[j];
            }
        }
    }
    Ok(out)
}

/// Identity observation of the leading modes under a Gaussian prior.
pub struct Conjugate {
    pub prior: CovarianceSpectrum,
    pub data: Vec<f64>,
    pub sigma: f64,
    pub evaluator: PotentialEvaluator,
}

pub fn conjugate(num_modes: usize, data: Vec<f64>, sigma: f64) -> Result<Conjugate> {
    let (_, prior) = make_prior_basis(1, num_modes, 2 * num_modes, 0.01, 2)?;
    let m = data.len();
    let forward = LinearForward::leading_modes(m, num_modes)?;
    let obs = ObservationSetup::new(vec![[0.5, 0.5]; m], sigma, data.clone())?;
    let evaluator = PotentialEvaluator::linear(forward, obs)?;
    Ok(Conjugate {
        prior,
        data,
        sigma,
        evaluator,
    })
}

impl Conjugate {
    /// Posterior `(mean, variance)` of each observed mode.
    pub fn posterior(&self) -> Vec<(f64, f64)> {
        let s2 = self.sigma * self.sigma;
        self.data
            .iter()
            .zip(self.prior.eigenvalues())
            .map(|(d, l)| {
                let v = 1.0 / (1.0 / l + 1.0 / s2);
                (v * d / s2, v)
            })
            .collect()
    }
}
