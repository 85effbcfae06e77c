//! Subcommand implementations. Every file is written inside the output directory.

use crate::config::{DarcyProblem, ExperimentConfig, ProblemConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use serde::{Deserialize, Serialize};
use smcgm::diagnostics::{
    data_misfits, kde_marginal, kmeans_cluster, marginal_grid, marginal_tv_table, relative_l2_error,
    silhouette_sweep, write_clusters_csv, write_densities_csv, write_tv_csv, ClusterReport,
};
use smcgm::experiments::{conjugate, darcy_truth, darcy_with_data, multimodal1d, DarcySpec};
use smcgm::forward::{
    measurement_grid, read_observations, synthesize_data, write_observations, DataSidecar,
    MeasurementLayout, ObservationSetup, PotentialEvaluator,
};
use smcgm::function_space::{CoeffField, CovarianceSpectrum};
use smcgm::mixture::MixtureFile;
use smcgm::rng::{stream, Site};
use smcgm::smc::{read_ensemble_csv, run_smc, write_ensemble_csv, TemperSchedule};
use std::fs;
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const ENSEMBLE_FILE: &str = "ensemble.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MIXTURE_FILE: &str = "mixture.json";
pub const OBS_CSV: &str = "observations.csv";
pub const OBS_JSON: &str = "observations.json";
pub const TRUTH_FILE: &str = "truth.csv";
pub const DENSITIES_FILE: &str = "densities.csv";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const CLUSTERS_JSON: &str = "clusters.json";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const TV_FILE: &str = "tv.csv";

/// Prior, potential and optional truth assembled from a config.
pub struct Problem {
    pub prior: CovarianceSpectrum,
    pub evaluator: PotentialEvaluator,
    pub truth: Option<CoeffField>,
    pub observations: Option<(ObservationSetup, DataSidecar)>,
}

fn darcy_spec(d: &DarcyProblem) -> DarcySpec {
    let mut spec = DarcySpec::new(d.layout, d.darcy_config(), d.data_seed);
    spec.modes_per_axis = d.modes();
    spec.truth_modes_per_axis = d.truth_modes_per_axis.unwrap_or(spec.modes_per_axis);
    spec.noise_pct = d.noise_pct;
    spec
}

fn layout_name(layout: MeasurementLayout) -> String {
    serde_json::to_value(layout)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Synthesises the observations of a Darcy problem.
pub fn synthesize(d: &DarcyProblem) -> CliResult<(CoeffField, ObservationSetup, DataSidecar)> {
    let spec = darcy_spec(d);
    let truth = darcy_truth(&spec)?;
    let points = measurement_grid(d.layout);
    let obs = synthesize_data(
        &truth,
        &spec.config,
        &points,
        d.noise_pct,
        &mut stream(d.data_seed, 0, 0, Site::Data),
    )?;
    let sidecar = DataSidecar {
        sigma: obs.sigma,
        noise_pct: d.noise_pct,
        seed: d.data_seed,
        layout: layout_name(d.layout),
        darcy: spec.config,
        count: obs.len(),
    };
    Ok((truth, obs, sidecar))
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Builds the problem; existing observations take precedence over synthesis.
pub fn build_problem(cfg: &ExperimentConfig, observations: Option<&Path>) -> CliResult<Problem> {
    match &cfg.problem {
        ProblemConfig::Multimodal { modes, sigma } => {
            let m = multimodal1d(*modes, *sigma)?;
            Ok(Problem {
                prior: m.prior,
                evaluator: m.evaluator,
                truth: None,
                observations: None,
            })
        }
        ProblemConfig::Conjugate { modes, data, sigma } => {
            let c = conjugate(*modes, data.clone(), *sigma)?;
            Ok(Problem {
                prior: c.prior,
                evaluator: c.evaluator,
                truth: None,
                observations: None,
            })
        }
        ProblemConfig::Darcy(d) => {
            let spec = darcy_spec(d);
            let source = observations.map(Path::to_path_buf).or_else(|| d.data.clone());
            let (truth, obs, sidecar) = match source {
                Some(csv) => {
                    let (obs, sidecar) = read_observations(&csv, &sidecar_path(&csv))?;
                    (darcy_truth(&spec)?, obs, sidecar)
                }
                None => synthesize(d)?,
            };
            let built = darcy_with_data(&spec, truth, obs.clone())?;
            Ok(Problem {
                prior: built.prior,
                evaluator: built.evaluator,
                truth: Some(built.truth),
                observations: Some((obs, sidecar)),
            })
        }
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub problem: String,
    pub strategy: String,
    pub particles: usize,
    pub layers: usize,
    pub evaluations: u64,
    pub solves: u64,
    pub mean: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub method: String,
    pub report: ClusterReport,
    /// `(k, clusters found, score)` when a silhouette sweep ran.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub silhouette: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub paper_scale: bool,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
}

fn resolve(mut cfg: ExperimentConfig, opts: &RunOptions) -> CliResult<ExperimentConfig> {
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if opts.paper_scale {
        cfg.apply_paper_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn problem_tag(cfg: &ExperimentConfig) -> &'static str {
    match cfg.problem {
        ProblemConfig::Multimodal { .. } => "multimodal",
        ProblemConfig::Darcy(_) => "darcy",
        ProblemConfig::Conjugate { .. } => "conjugate",
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs SMC and writes every artifact to `opts.out`.
pub fn run(cfg: ExperimentConfig, opts: &RunOptions) -> CliResult<RunSummary> {
    let cfg = resolve(cfg, opts)?;
    ensure_dir(&opts.out)?;
    let problem = build_problem(&cfg, opts.data.as_deref())?;
    let smc_cfg = cfg.smc_config();
    let output = with_threads(opts.threads, || run_smc(&problem.prior, &problem.evaluator, &smc_cfg))??;

    let out = &opts.out;
    let toml_text = cfg.to_toml();
    write_text(&out.join(CONFIG_FILE), &toml_text)?;
    output.schedule.write_jsonl(&out.join(RUN_LOG_FILE))?;
    write_ensemble_csv(&out.join(ENSEMBLE_FILE), &output.ensemble.particles)?;
    let mut files = vec![CONFIG_FILE, RUN_LOG_FILE, ENSEMBLE_FILE, SUMMARY_FILE];
    if let Some(mix) = &output.last_mixture {
        write_json(&out.join(MIXTURE_FILE), &MixtureFile::from_spec(mix))?;
        files.push(MIXTURE_FILE);
    }
    if let Some((obs, sidecar)) = &problem.observations {
        write_observations(&out.join(OBS_CSV), &out.join(OBS_JSON), obs, sidecar)?;
        files.extend([OBS_CSV, OBS_JSON]);
    }
    if let Some(t) = &problem.truth {
        write_ensemble_csv(&out.join(TRUTH_FILE), std::slice::from_ref(t))?;
        files.push(TRUTH_FILE);
    }
    let mean = CoeffField::new(problem.prior.basis().clone(), output.ensemble.mean())?;
    let summary = RunSummary {
        problem: problem_tag(&cfg).into(),
        strategy: cfg.smc.strategy.to_string(),
        particles: cfg.smc.particles,
        layers: output.schedule.layers(),
        evaluations: output.evaluations,
        solves: output.solves,
        relative_error: problem.truth.as_ref().map(|t| relative_l2_error(&mean, t)),
        mean: mean.into_coeffs(),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    files.extend(write_diagnostics(&cfg, &problem, &output.ensemble.particles, out)?);
    let manifest = Manifest::new("run", &cfg, &toml_text, opts, files);
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

/// KDE marginals and clusters of an ensemble.
fn write_diagnostics(
    cfg: &ExperimentConfig,
    problem: &Problem,
    particles: &[CoeffField],
    out: &Path,
) -> CliResult<Vec<&'static str>> {
    let d = &cfg.diagnostics;
    let modes = d.modes.min(problem.prior.num_modes());
    let mut files = vec![DENSITIES_FILE];
    let densities = (0..modes)
        .map(|k| {
            let xs: Vec<f64> = particles.iter().map(|p| p.coeffs()[k]).collect();
            kde_marginal(k, &xs, &marginal_grid(&xs, d.kde_points))
        })
        .collect::<smcgm::Result<Vec<_>>>()?;
    write_densities_csv(&out.join(DENSITIES_FILE), &densities)?;
    let seed = cfg.seed;
    let clustered = match (d.clusters, d.silhouette_max) {
        (Some(k), _) => Some(ClusterSummary {
            method: format!("kmeans-{k}"),
            report: kmeans_cluster(particles, k, modes, seed)?,
            silhouette: Vec::new(),
        }),
        (None, Some(max)) => {
            let sweep = silhouette_sweep(particles, 2..=max, modes, seed)?;
            Some(ClusterSummary {
                method: "silhouette".into(),
                report: sweep.report,
                silhouette: sweep.scores,
            })
        }
        (None, None) => None,
    };
    if let Some(mut c) = clustered {
        if problem.evaluator.observation().is_some() {
            let means = c.report.means(&particles[0]);
            for (cl, m) in c.report.clusters.iter_mut().zip(data_misfits(&means, &problem.evaluator)?) {
                cl.misfit = Some(m);
            }
        }
        write_clusters_csv(&out.join(CLUSTERS_CSV), &c.report)?;
        write_json(&out.join(CLUSTERS_JSON), &c)?;
        files.extend([CLUSTERS_CSV, CLUSTERS_JSON]);
    }
    Ok(files)
}

/// Writes synthetic Darcy observations and the true field.
pub fn synth_data(cfg: ExperimentConfig, opts: &RunOptions) -> CliResult<DataSidecar> {
    let mut cfg = cfg;
    if opts.paper_scale {
        cfg.apply_paper_scale();
    }
    let ProblemConfig::Darcy(d) = &mut cfg.problem else {
        return Err(CliError::Config("synth-data needs a darcy problem".into()));
    };
    if let Some(s) = opts.seed {
        d.data_seed = s;
    }
    cfg.validate()?;
    let ProblemConfig::Darcy(d) = &cfg.problem else { unreachable!() };
    ensure_dir(&opts.out)?;
    let (truth, obs, sidecar) = synthesize(d)?;
    write_observations(&opts.out.join(OBS_CSV), &opts.out.join(OBS_JSON), &obs, &sidecar)?;
    write_ensemble_csv(&opts.out.join(TRUTH_FILE), std::slice::from_ref(&truth))?;
    let toml_text = cfg.to_toml();
    write_text(&opts.out.join(CONFIG_FILE), &toml_text)?;
    let manifest = Manifest::new("synth-data", &cfg, &toml_text, opts, vec![CONFIG_FILE, OBS_CSV, OBS_JSON, TRUTH_FILE]);
    write_json(&opts.out.join(MANIFEST_FILE), &manifest)?;
    Ok(sidecar)
}

/// A finished run read back from disk.
pub struct RunDir {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
    pub particles: Vec<CoeffField>,
    pub problem: Problem,
}

pub fn load_run(dir: &Path) -> CliResult<RunDir> {
    let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
    let obs = dir.join(OBS_CSV);
    let problem = build_problem(&config, obs.exists().then_some(obs.as_path()))?;
    let rows = read_ensemble_csv(&dir.join(ENSEMBLE_FILE))?;
    let basis = problem.prior.basis().clone();
    let particles = rows
        .into_iter()
        .map(|r| CoeffField::new(basis.clone(), r))
        .collect::<smcgm::Result<Vec<_>>>()?;
    Ok(RunDir {
        config,
        summary,
        particles,
        problem,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub tv: Vec<f64>,
    pub average_tv: f64,
    /// `||mean_a - mean_b|| / ||mean_b||`.
    pub mean_relative_difference: f64,
    /// Solves of run A over solves of run B; potential evaluations when neither solves a PDE.
    pub cost_ratio: f64,
}

/// Per-mode TV, mean difference and cost ratio of two runs on the same basis.
pub fn compare(a: &Path, b: &Path, out: Option<&Path>) -> CliResult<Comparison> {
    let ra = load_run(a)?;
    let rb = load_run(b)?;
    if ra.config.basis_shape() != rb.config.basis_shape() {
        return Err(CliError::Config(format!(
            "runs use different bases: {:?} vs {:?}",
            ra.config.basis_shape(),
            rb.config.basis_shape()
        )));
    }
    let modes = ra.config.diagnostics.modes.min(ra.problem.prior.num_modes());
    let tv = marginal_tv_table(&ra.particles, &rb.particles, modes, ra.config.diagnostics.kde_points)?;
    let basis = ra.problem.prior.basis().clone();
    let ma = CoeffField::new(basis.clone(), ra.summary.mean.clone())?;
    let mb = CoeffField::new(basis, rb.summary.mean.clone())?;
    let norm = mb.l2_norm();
    let (ca, cb) = if ra.summary.solves > 0 || rb.summary.solves > 0 {
        (ra.summary.solves, rb.summary.solves)
    } else {
        (ra.summary.evaluations, rb.summary.evaluations)
    };
    let cmp = Comparison {
        run_a: a.display().to_string(),
        run_b: b.display().to_string(),
        average_tv: tv.iter().sum::<f64>() / tv.len() as f64,
        tv,
        mean_relative_difference: if norm > 0.0 { ma.l2_distance(&mb) / norm } else { ma.l2_distance(&mb) },
        cost_ratio: smcgm::diagnostics::evaluation_ratio(ca, cb),
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join(COMPARISON_FILE), &cmp)?;
        write_tv_csv(&dir.join(TV_FILE), &cmp.tv)?;
    }
    Ok(cmp)
}

/// Recomputes diagnostics for a run and returns a text summary.
pub fn report(dir: &Path, out: Option<&Path>) -> CliResult<String> {
    let run = load_run(dir)?;
    let target = out.unwrap_or(dir);
    ensure_dir(target)?;
    write_diagnostics(&run.config, &run.problem, &run.particles, target)?;
    let schedule = TemperSchedule::read_jsonl(&dir.join(RUN_LOG_FILE))?;
    let s = &run.summary;
    let mut text = format!(
        "{} / {}: {} particles, {} layers, {} evaluations, {} solves\n",
        s.problem, s.strategy, s.particles, s.layers, s.evaluations, s.solves
    );
    if let Some(e) = s.relative_error {
        text.push_str(&format!("relative L2 error of the mean: {e:.4}\n"));
    }
    for r in &schedule.records {
        text.push_str(&format!(
            "layer {:>3}  h={:.3e}  h_cum={:.4}  ess={:.1}  accept={:.3}  beta={:.4}\n",
            r.layer, r.h, r.h_cum, r.ess, r.accept_rate, r.beta
        ));
    }
    let clusters = target.join(CLUSTERS_JSON);
    if clusters.exists() {
        let c: ClusterSummary = read_json(&clusters)?;
        text.push_str(&format!("{} clusters ({})\n", c.report.count, c.method));
        for cl in &c.report.clusters {
            match cl.misfit {
                Some(m) => text.push_str(&format!("  {} members, misfit {m:.4e}\n", cl.members)),
                None => text.push_str(&format!("  {} members\n", cl.members)),
            }
        }
    }
    Ok(text)
}
