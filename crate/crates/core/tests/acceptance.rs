//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria and
//! `ACCEPTANCE_STRICT=1` turns any FAIL into a nonzero exit status.

mod support;

use nalgebra::{Matrix2, SymmetricEigen};
use rand::Rng;
use smcgm::diagnostics::{
    data_misfits, kmeans_cluster, linspace, marginal_tv_table, max_curve_gap, mesh_independence_report,
    relative_l2_error, silhouette_sweep, tv_distance, MarginalDensity, MeshReport,
};
use smcgm::experiments::{conjugate, cos_functional, darcy, multimodal1d, Darcy, DarcySpec};
use smcgm::forward::darcy::{solve_constant_source, solve_with_source, DarcyConfig};
use smcgm::forward::MeasurementLayout;
use smcgm::function_space::{
    make_prior_basis, sample_gaussian, CoeffField, ComponentHead, GaussianMeasureSpec, GaussianMixtureSpec, GridField,
};
use smcgm::kernels::{block_eigen, log_accept_pcn_gm, propose_pcn, propose_pcn_gm, KernelKind, ModeBlock};
use smcgm::mixture::{fit_mixture, FitConfig};
use smcgm::rng::{stream, Site};
use smcgm::smc::{ess, resample_systematic, reweight, run_smc, SmcConfig, SmcOutput};
use std::f64::consts::PI;
use std::time::{Duration, Instant};
use support::{dense_components, dense_log_ratio, random_mixture};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

fn reduction() -> Verdict {
    let t = Instant::now();
    let (_, prior) = make_prior_basis(1, 32, 64, 0.01, 2).unwrap();
    let head = ComponentHead {
        weight: 1.0,
        mean: vec![0.0; prior.num_modes()],
        eigenvalues: prior.eigenvalues().to_vec(),
    };
    let mix = GaussianMixtureSpec::new(&prior, prior.num_modes(), vec![head]).unwrap();
    let spec = GaussianMeasureSpec::centered(prior.clone());
    let mut rng = stream(1, 0, 0, Site::Mutation);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let beta = rng.random_range(0.01..1.0);
        let u = sample_gaussian(&spec, &mut rng);
        let v = propose_pcn(&u, beta, &prior, &mut rng);
        let (pu, pv) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let gm = log_accept_pcn_gm(&u, &v, pu, pv, beta, &mix).unwrap();
        worst = worst.max((gm - (pu - pv).min(0.0)).abs());
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    Verdict::new(worst <= 1e-12 && fast, format!("max |diff| {worst:.2e}, {time}"))
}

fn product_oracle() -> Verdict {
    let (k, m) = (5, 2);
    let (_, prior) = make_prior_basis(1, k, 16, 0.05, 2).unwrap();
    let mut rng = stream(2, 0, 0, Site::Mutation);
    let mut worst_ratio = 0.0f64;
    for _ in 0..1000 {
        let mix = random_mixture(&prior, k, m, &mut rng);
        let beta = rng.random_range(0.05..0.99);
        let u = smcgm::function_space::sample_mixture(&mix, &mut rng);
        let v = propose_pcn_gm(&u, beta, &mix, &mut rng);
        let (pu, pv) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let fast = log_accept_pcn_gm(&u, &v, pu, pv, beta, &mix).unwrap();
        let ratio = dense_log_ratio(u.coeffs(), v.coeffs(), prior.eigenvalues(), &dense_components(&mix, k), beta);
        let dense = (pu - pv + ratio).min(0.0);
        worst_ratio = worst_ratio.max((fast - dense).abs() / dense.abs().max(1.0));
    }
    let mut worst_eig = 0.0f64;
    for _ in 0..1000 {
        let lambda = rng.random_range(1e-3..2.0);
        let block = ModeBlock {
            lambda,
            lambda_j: lambda * rng.random_range(0.05..3.0),
            beta: rng.random_range(0.05..0.95),
        };
        let e = block_eigen(block.lambda, block.lambda_j, block.beta);
        let [[a, b], [_, c]] = block.forward();
        let dense = SymmetricEigen::new(Matrix2::new(a, b, b, c));
        let (lo, hi) = if dense.eigenvalues[0] < dense.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let scale = dense.eigenvalues[hi];
        worst_eig = worst_eig
            .max((e.eta_plus - dense.eigenvalues[hi]).abs() / scale)
            .max((e.eta_minus - dense.eigenvalues[lo]).abs() / scale);
        for (t, col) in [(e.t_plus, hi), (e.t_minus, lo)] {
            let v = dense.eigenvectors.column(col);
            let norm = (1.0 + t * t).sqrt();
            worst_eig = worst_eig.max((v[0] * t - v[1]).abs() / norm);
        }
    }
    Verdict::new(
        worst_ratio <= 1e-8 && worst_eig <= 1e-12,
        format!("ratio rel err {worst_ratio:.2e}, block eigen err {worst_eig:.2e}"),
    )
}

fn conjugate_recovery() -> Verdict {
    let t = Instant::now();
    let target = conjugate(3, vec![0.6, -0.4, 0.25], 0.2).unwrap();
    let post = target.posterior();
    let mut pass = true;
    let mut worst = 0.0f64;
    for kind in [KernelKind::Rw, KernelKind::Pcn, KernelKind::PcnGm, KernelKind::Gm] {
        let mut cfg = SmcConfig::new(kind, 5000, FitConfig::new(3, 1), 21);
        cfg.chain_len = 20;
        let out = run_smc(&target.prior, &target.evaluator, &cfg).unwrap();
        let n_eff = out.schedule.records.last().unwrap().ess;
        for (k, &(m, v)) in post.iter().enumerate() {
            let xs: Vec<f64> = out.ensemble.particles.iter().map(|p| p.coeffs()[k]).collect();
            let (mh, vh) = mean_var(&xs);
            let zm = (mh - m).abs() / (v / n_eff).sqrt();
            let zv = (vh - v).abs() / (v * (2.0 / n_eff).sqrt());
            worst = worst.max(zm).max(zv);
            pass &= zm <= 3.0 && zv <= 3.0;
        }
    }
    let (fast, time) = within(t, Duration::from_secs(60));
    Verdict::new(pass && fast, format!("largest deviation {worst:.2} SE, {time}"))
}

fn cluster_check(out: &SmcOutput, modes: &[CoeffField]) -> (bool, String) {
    let rep = kmeans_cluster(&out.ensemble.particles, 4, 20, 1).unwrap();
    let mut covered = [false; 4];
    let mut max_d = 0.0f64;
    for mu in rep.means(&modes[0]) {
        let (i, d) = modes
            .iter()
            .map(|f| f.l2_distance(&mu))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        covered[i] = true;
        max_d = max_d.max(d);
    }
    let ok = rep.count == 4 && max_d <= 0.15 && covered.iter().all(|&c| c);
    (ok, format!("{} clusters, worst distance {max_d:.3}, covered {covered:?}", rep.count))
}

fn four_modes() -> Verdict {
    let t = Instant::now();
    let m = multimodal1d(64, 0.2).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, chain) in [(KernelKind::Gm, 0), (KernelKind::Pcn, 200)] {
        let mut cfg = SmcConfig::new(kind, 2000, FitConfig::new(20, 4), 11);
        cfg.chain_len = chain;
        let out = run_smc(&m.prior, &m.evaluator, &cfg).unwrap();
        let (ok, d) = cluster_check(&out, &m.modes);
        pass &= ok;
        parts.push(format!("{kind}: {d}"));
    }
    let (fast, time) = within(t, Duration::from_secs(300));
    parts.push(time);
    Verdict::new(pass && fast, parts.join("; "))
}

fn dense_darcy_spec(resolution: usize) -> DarcySpec {
    let cfg = DarcyConfig { inverse_resolution: resolution, fine_resolution: 128, source: 1.0 };
    let mut spec = DarcySpec::new(MeasurementLayout::Dense10x10, cfg, 7);
    spec.truth_modes_per_axis = 32;
    spec
}

fn posterior_mean(d: &Darcy, out: &SmcOutput) -> CoeffField {
    CoeffField::new(d.prior.basis().clone(), out.ensemble.mean()).unwrap()
}

fn dense_darcy() -> Verdict {
    let t = Instant::now();
    let d = darcy(&dense_darcy_spec(32)).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut outs = Vec::new();
    for (kind, chain) in [(KernelKind::Gm, 0), (KernelKind::Pcn, 40)] {
        let mut cfg = SmcConfig::new(kind, 1000, FitConfig::new(20, 3), 11);
        cfg.chain_len = chain;
        let out = run_smc(&d.prior, &d.evaluator, &cfg).unwrap();
        let err = relative_l2_error(&posterior_mean(&d, &out), &d.truth);
        pass &= err <= 0.10;
        parts.push(format!("{kind} relL2 {err:.4}"));
        outs.push(out);
    }
    let tv = marginal_tv_table(&outs[0].ensemble.particles, &outs[1].ensemble.particles, 20, 256).unwrap();
    let avg = tv.iter().sum::<f64>() / tv.len() as f64;
    pass &= avg <= 0.30;
    parts.push(format!("avg TV {avg:.3}"));
    let (fast, time) = within(t, Duration::from_secs(1800));
    parts.push(time);
    Verdict::new(pass && fast, parts.join(", "))
}

fn efficiency() -> Verdict {
    let m = multimodal1d(64, 0.2).unwrap();
    let run = |kind, chain| {
        let mut cfg = SmcConfig::new(kind, 1000, FitConfig::new(20, 4), 12);
        cfg.chain_len = chain;
        run_smc(&m.prior, &m.evaluator, &cfg).unwrap()
    };
    let gm = run(KernelKind::Gm, 0);
    let pcn = run(KernelKind::Pcn, 200);
    let ratio = pcn.evaluations as f64 / gm.evaluations as f64;
    Verdict::new(
        (150.0..=250.0).contains(&ratio),
        format!(
            "ratio {ratio:.1} (pCN {} evals over {} layers, GM {} over {})",
            pcn.evaluations,
            pcn.schedule.layers(),
            gm.evaluations,
            gm.schedule.layers()
        ),
    )
}

fn mesh_report(kind: KernelKind, particles: usize, chain: usize) -> MeshReport {
    mesh_independence_report(&[16, 24, 32], |r| {
        let d = darcy(&dense_darcy_spec(r))?;
        let mut cfg = SmcConfig::new(kind, particles, FitConfig::new(20, 3), 11);
        cfg.chain_len = chain;
        Ok(run_smc(&d.prior, &d.evaluator, &cfg)?.schedule)
    })
    .unwrap()
}

/// Largest gap between the curves indexed by raw layer number.
fn raw_gap(rep: &MeshReport) -> f64 {
    let raw: Vec<Vec<(f64, f64)>> = rep
        .rows
        .iter()
        .map(|r| r.curve.iter().map(|&(x, h)| (x * r.layers as f64, h)).collect())
        .collect();
    let end = rep.rows.iter().map(|r| r.layers).max().unwrap_or(0) as f64;
    let extended: Vec<Vec<(f64, f64)>> = raw
        .into_iter()
        .map(|mut c| {
            c.push((end, 1.0));
            c.into_iter().map(|(x, h)| (x / end, h)).collect()
        })
        .collect();
    let mut g = 0.0f64;
    for (i, a) in extended.iter().enumerate() {
        for b in &extended[i + 1..] {
            g = g.max(max_curve_gap(a, b));
        }
    }
    g
}

fn mesh_independence() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, particles, chain) in [(KernelKind::Gm, 1000, 0), (KernelKind::Pcn, 500, 20)] {
        let rep = mesh_report(kind, particles, chain);
        let (spread, gap) = (rep.layer_spread(), rep.max_gap());
        pass &= spread <= 2 && gap <= 0.1;
        let j: Vec<usize> = rep.rows.iter().map(|r| r.layers).collect();
        parts.push(format!("{kind} J {j:?} gap {gap:.3} (unnormalized {:.3})", raw_gap(&rep)));
    }
    let rw = mesh_report(KernelKind::Rw, 500, 20);
    pass &= rw.strictly_increasing();
    let j: Vec<usize> = rw.rows.iter().map(|r| r.layers).collect();
    parts.push(format!("rw J {j:?}"));
    Verdict::new(pass, parts.join("; "))
}

fn sparse_darcy() -> Verdict {
    let cfg = DarcyConfig { inverse_resolution: 32, fine_resolution: 128, source: 1.0 };
    let mut spec = DarcySpec::new(MeasurementLayout::SparseLine20, cfg, 7);
    spec.truth_modes_per_axis = 32;
    let d = darcy(&spec).unwrap();
    let floor = d.observations.sigma * (d.observations.len() as f64).sqrt();
    let mut pass = true;
    let mut found = [Vec::new(), Vec::new()];
    let mut solves = [0u64; 2];
    let mut worst = 0.0f64;
    for seed in 11..15 {
        let mut spent = [0u64; 2];
        for (i, (kind, n, chain)) in [(KernelKind::Pcn, 300, 20), (KernelKind::Gm, 4000, 0)].into_iter().enumerate() {
            let mut cfg = SmcConfig::new(kind, n, FitConfig::new(20, 8), seed);
            cfg.chain_len = chain;
            let out = run_smc(&d.prior, &d.evaluator, &cfg).unwrap();
            let sweep = silhouette_sweep(&out.ensemble.particles, 2..=10, 20, 1).unwrap();
            let misfit = data_misfits(&sweep.report.means(&d.truth), &d.evaluator).unwrap();
            worst = misfit.iter().copied().fold(worst, f64::max);
            found[i].push(sweep.best_k);
            spent[i] = out.solves;
            solves[i] = solves[i].max(out.solves);
        }
        pass &= spent[1] <= spent[0];
    }
    let total = |v: &[usize]| v.iter().sum::<usize>();
    pass &= worst <= 5.0 * floor;
    pass &= total(&found[1]) >= total(&found[0]);
    let parts = [
        format!("clusters per seed pcn {:?} gm {:?}", found[0], found[1]),
        format!("max solves pcn {} gm {}", solves[0], solves[1]),
        format!("worst misfit {worst:.4} of {:.4}", 5.0 * floor),
    ];
    Verdict::new(pass, parts.join("; "))
}

fn error_scaling() -> Verdict {
    let m = multimodal1d(64, 0.2).unwrap();
    let truth = m.posterior().cos_functional();
    let reps = 30;
    let sizes = [100usize, 1000, 10_000];
    let mut rms = Vec::new();
    for &n in &sizes {
        let mut sq = 0.0;
        for r in 0..reps {
            let mut cfg = SmcConfig::new(KernelKind::Pcn, n, FitConfig::new(20, 4), 1000 + r);
            cfg.chain_len = 20;
            let out = run_smc(&m.prior, &m.evaluator, &cfg).unwrap();
            let est = out.ensemble.particles.iter().map(cos_functional).sum::<f64>() / n as f64;
            sq += (est - truth).powi(2);
        }
        rms.push((sq / reps as f64).sqrt());
    }
    let x: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = rms.iter().map(|e| e.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 3.0, y.iter().sum::<f64>() / 3.0);
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
    Verdict::new(
        (-0.6..=-0.4).contains(&slope),
        format!("exponent {slope:.3}, rms {:?}", rms.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()),
    )
}

fn gaussian(mean: f64, grid: &[f64]) -> MarginalDensity {
    MarginalDensity {
        mode: 0,
        grid: grid.to_vec(),
        density: grid.iter().map(|x| (-0.5 * (x - mean).powi(2)).exp() / (2.0 * PI).sqrt()).collect(),
    }
}

fn manufactured_error(n: usize) -> f64 {
    let u = |x: f64, y: f64| 0.5 * (PI * x).sin() * (PI * y).cos() - 0.2 * y;
    let ux = |x: f64, y: f64| 0.5 * PI * (PI * x).cos() * (PI * y).cos();
    let uy = |x: f64, y: f64| -0.5 * PI * (PI * x).sin() * (PI * y).sin() - 0.2;
    let w = |x: f64, y: f64| x * (1.0 - x) * y * (1.0 - y);
    let wx = |x: f64, y: f64| (1.0 - 2.0 * x) * y * (1.0 - y);
    let wy = |x: f64, y: f64| x * (1.0 - x) * (1.0 - 2.0 * y);
    let lap = |x: f64, y: f64| -2.0 * y * (1.0 - y) - 2.0 * x * (1.0 - x);
    let f = |x: f64, y: f64| -u(x, y).exp() * (ux(x, y) * wx(x, y) + uy(x, y) * wy(x, y) + lap(x, y));
    let (sol, _) = solve_with_source(&GridField::from_fn(2, n, u), GridField::from_fn(2, n, f).values()).unwrap();
    let exact = GridField::from_fn(2, n, w);
    let err: Vec<f64> = sol.values().iter().zip(exact.values()).map(|(a, b)| a - b).collect();
    GridField::new(2, n, err).l2_norm()
}

fn properties() -> Verdict {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_owned());
        }
    };

    check("ess uniform", (ess(&[0.0; 8]) - 8.0).abs() < 1e-12);
    let lw: Vec<f64> = [0.5f64, 0.25, 0.25].iter().map(|w| w.ln()).collect();
    check("ess weighted", (ess(&lw) - 1.0 / 0.375).abs() < 1e-12);
    check("ess degenerate", (ess(&[0.0, -800.0, -800.0]) - 1.0).abs() < 1e-12);

    let rw = reweight(&[0.0, 0.0], 2.0, &[0.0, 1.0]);
    let expect = [1.0 / (1.0 + (-2.0f64).exp()), (-2.0f64).exp() / (1.0 + (-2.0f64).exp())];
    check("reweight", rw.iter().zip(expect).all(|(a, b)| (a.exp() - b).abs() < 1e-14));
    check("reweight h=0", reweight(&lw, 0.0, &[1.0, 2.0, 3.0]).iter().zip(&lw).all(|(a, b)| (a - b).abs() < 1e-14));

    let w = [0.1, 0.35, 0.05, 0.3, 0.2];
    let lw: Vec<f64> = w.iter().map(|x: &f64| x.ln()).collect();
    let mut counts = [0usize; 5];
    let trials = 20_000;
    for s in 0..trials {
        for i in resample_systematic(&lw, &mut stream(s, 0, 0, Site::Resample)) {
            counts[i] += 1;
        }
    }
    check(
        "systematic resampling unbiased",
        counts.iter().zip(w).all(|(&c, wi)| (c as f64 / (trials * 5) as f64 - wi).abs() < 2e-3),
    );

    let (_, prior) = make_prior_basis(1, 8, 16, 0.05, 2).unwrap();
    let mut rng = stream(4, 0, 0, Site::Init);
    let samples: Vec<CoeffField> = (0..600)
        .map(|i| {
            let mut c = sample_gaussian(&GaussianMeasureSpec::centered(prior.clone()), &mut rng);
            c.coeffs_mut()[0] += if i % 2 == 0 { 1.5 } else { -1.5 };
            c
        })
        .collect();
    let fit = fit_mixture(&samples, &prior, &FitConfig::new(4, 3), &mut rng).unwrap();
    check(
        "em monotone",
        fit.log_likelihoods.windows(2).all(|p| p[1] >= p[0] - 1e-10 * p[0].abs().max(1.0)),
    );

    let grid = linspace(-12.0, 13.0, 20_001);
    check("gaussian tv", (tv_distance(&gaussian(0.0, &grid), &gaussian(1.0, &grid)) - 0.3829).abs() < 1e-3);

    let log_perm = GridField::from_fn(2, 24, |x, y| 2.0 * (5.0 * x - 3.0 * y).sin() + x);
    let (p, _) = solve_constant_source(&log_perm, 1.0).unwrap();
    check("maximum principle", p.values().iter().all(|&v| v >= 0.0));
    let e = [manufactured_error(16), manufactured_error(32), manufactured_error(64)];
    check("second order", e.windows(2).all(|p| (3.5..=4.5).contains(&(p[0] / p[1]))));

    let m = multimodal1d(16, 0.2).unwrap();
    let runs: Vec<Vec<Vec<f64>>> = [1, 4]
        .iter()
        .map(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                [KernelKind::Pcn, KernelKind::Gm]
                    .iter()
                    .flat_map(|&k| {
                        let mut cfg = SmcConfig::new(k, 300, FitConfig::new(8, 4), 9);
                        cfg.chain_len = 5;
                        run_smc(&m.prior, &m.evaluator, &cfg)
                            .unwrap()
                            .ensemble
                            .particles
                            .into_iter()
                            .map(|p| p.into_coeffs())
                    })
                    .collect()
            })
        })
        .collect();
    check("thread determinism", runs[0] == runs[1]);

    let pass = failed.is_empty();
    Verdict::new(pass, if pass { "all property checks hold".to_owned() } else { format!("failed: {failed:?}") })
}

type Criterion = (usize, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "kernel reduction", reduction),
    (2, "product-space oracle", product_oracle),
    (3, "conjugate recovery", conjugate_recovery),
    (4, "four-mode example", four_modes),
    (5, "dense Darcy", dense_darcy),
    (6, "evaluation ratio", efficiency),
    (7, "mesh independence", mesh_independence),
    (8, "sparse Darcy", sparse_darcy),
    (9, "error scaling", error_scaling),
    (10, "property suites", properties),
];

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (id, name, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        if !v.pass {
            failures += 1;
        }
        println!(
            "criterion {id} ({name}): {} | {} | {:.1}s",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failures} criteria failed");
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok() {
        std::process::exit(1);
    }
}
