//! Experiment configuration files.

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use smcgm::forward::darcy::DarcyConfig;
use smcgm::forward::MeasurementLayout;
use smcgm::kernels::KernelKind;
use smcgm::mixture::FitConfig;
use smcgm::smc::SmcConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub smc: SmcSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<FitConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Multimodal {
        #[serde(default = "default_modes_1d")]
        modes: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Darcy(DarcyProblem),
    Conjugate {
        modes: usize,
        data: Vec<f64>,
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcyProblem {
    pub layout: MeasurementLayout,
    #[serde(default = "default_inverse")]
    pub inverse_resolution: usize,
    #[serde(default = "default_fine")]
    pub fine_resolution: usize,
    /// Defaults to the inverse resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes_per_axis: Option<usize>,
    /// Modes per axis of the true field; defaults to `modes_per_axis`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_modes_per_axis: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise_pct: f64,
    #[serde(default = "default_source")]
    pub source: f64,
    #[serde(default)]
    pub data_seed: u64,
    /// Observation CSV produced by `synth-data`; its sidecar sits beside it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

impl DarcyProblem {
    pub fn darcy_config(&self) -> DarcyConfig {
        DarcyConfig {
            inverse_resolution: self.inverse_resolution,
            fine_resolution: self.fine_resolution,
            source: self.source,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes_per_axis.unwrap_or(self.inverse_resolution)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcSection {
    pub strategy: KernelKind,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_chain")]
    pub chain_len: usize,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default = "default_ess")]
    pub ess_threshold: f64,
    #[serde(default = "default_true")]
    pub adapt_beta: bool,
    #[serde(default = "default_layers")]
    pub max_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Fixed K-means cluster count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    /// Upper end of a silhouette sweep over `2..=max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette_max: Option<usize>,
    /// Leading modes used for clustering, marginals and comparisons.
    #[serde(default = "default_diag_modes")]
    pub modes: usize,
    #[serde(default = "default_kde_points")]
    pub kde_points: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            clusters: None,
            silhouette_max: None,
            modes: default_diag_modes(),
            kde_points: default_kde_points(),
        }
    }
}

fn default_modes_1d() -> usize {
    64
}
fn default_sigma() -> f64 {
    0.2
}
fn default_inverse() -> usize {
    32
}
fn default_fine() -> usize {
    128
}
fn default_noise() -> f64 {
    0.02
}
fn default_source() -> f64 {
    1.0
}
fn default_particles() -> usize {
    1000
}
fn default_chain() -> usize {
    200
}
fn default_beta0() -> f64 {
    0.2
}
fn default_ess() -> f64 {
    0.6
}
fn default_true() -> bool {
    true
}
fn default_layers() -> usize {
    500
}
fn default_diag_modes() -> usize {
    20
}
fn default_kde_points() -> usize {
    256
}

/// A run manifest also serves as a config.
#[derive(Deserialize)]
struct ManifestConfig {
    config: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads TOML, or the `config` entry of a JSON manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: ManifestConfig =
                serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            return Ok(m.config);
        }
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// Restores the meshes and particle counts of the published experiments.
    pub fn apply_paper_scale(&mut self) {
        match &mut self.problem {
            ProblemConfig::Multimodal { .. } => self.smc.particles = 20_000,
            ProblemConfig::Darcy(d) => {
                let modes = d.modes().min(20);
                d.inverse_resolution = 20;
                d.fine_resolution = 500;
                d.modes_per_axis = Some(modes);
                if let Some(t) = d.truth_modes_per_axis.as_mut() {
                    *t = (*t).min(20);
                }
                self.smc.particles = match (d.layout, self.smc.strategy) {
                    (MeasurementLayout::SparseLine20, KernelKind::Gm) => 60_000,
                    (MeasurementLayout::SparseLine20, _) => 6_000,
                    (MeasurementLayout::Dense10x10, _) => 1_000,
                };
            }
            ProblemConfig::Conjugate { .. } => {}
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        self.mixture.clone().unwrap_or_else(|| {
            let (k, m) = match &self.problem {
                ProblemConfig::Multimodal { .. } => (20, 4),
                ProblemConfig::Darcy(d) => (
                    20,
                    if d.layout == MeasurementLayout::SparseLine20 { 8 } else { 3 },
                ),
                ProblemConfig::Conjugate { modes, .. } => (*modes.min(&3), 1),
            };
            FitConfig::new(k.min(self.num_modes().max(1)), m)
        })
    }

    pub fn smc_config(&self) -> SmcConfig {
        let s = &self.smc;
        let mut cfg = SmcConfig::new(s.strategy, s.particles, self.fit_config(), self.seed);
        cfg.chain_len = s.chain_len;
        cfg.beta0 = s.beta0;
        cfg.ess_threshold = s.ess_threshold;
        cfg.adapt_beta = s.adapt_beta;
        cfg.max_layers = s.max_layers;
        cfg
    }

    /// Dimension, modes per axis and grid per axis of the inversion basis.
    pub fn basis_shape(&self) -> (usize, usize, usize) {
        match &self.problem {
            ProblemConfig::Multimodal { modes, .. } => (1, *modes, 2 * modes),
            ProblemConfig::Darcy(d) => (2, d.modes(), d.inverse_resolution),
            ProblemConfig::Conjugate { modes, .. } => (1, *modes, 2 * modes),
        }
    }

    pub fn num_modes(&self) -> usize {
        let (dim, k, _) = self.basis_shape();
        k.pow(dim as u32)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.smc_config()
            .validate(self.num_modes())
            .map_err(CliError::from)?;
        let d = &self.diagnostics;
        if d.modes == 0 || d.kde_points < 2 {
            return Err(CliError::Config("diagnostics need modes >= 1 and kde_points >= 2".into()));
        }
        if d.clusters == Some(0) || d.silhouette_max.is_some_and(|m| m < 2) {
            return Err(CliError::Config("cluster counts must be positive, silhouette_max >= 2".into()));
        }
        if let ProblemConfig::Darcy(p) = &self.problem {
            p.darcy_config().validate().map_err(CliError::from)?;
        }
        Ok(())
    }
}
