//! Posterior summaries: marginal densities, total variation, clustering,
//! error measures and temperature-curve comparisons.

use crate::error::{Error, Result};
use crate::forward::PotentialEvaluator;
use crate::function_space::CoeffField;
use crate::mixture::kmeans_pp;
use crate::rng::{stream, Site};
use crate::smc::TemperSchedule;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDensity {
    pub mode: usize,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

impl MarginalDensity {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Linear interpolation, zero outside the grid.
    pub fn at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let i = g.partition_point(|&v| v <= x).clamp(1, g.len() - 1);
        let (a, b) = (g[i - 1], g[i]);
        if b == a {
            return self.density[i];
        }
        let t = (x - a) / (b - a);
        (1.0 - t) * self.density[i - 1] + t * self.density[i]
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

/// `1.06 * sd * n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, sd) = mean_sd(samples);
    1.06 * sd * (samples.len() as f64).powf(-0.2)
}

/// Evenly spaced grid covering `samples` with a margin of four bandwidths.
pub fn marginal_grid(samples: &[f64], points: usize) -> Vec<f64> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pad = 4.0 * silverman_bandwidth(samples);
    if pad == 0.0 {
        pad = 1e-3 * lo.abs().max(1.0);
    }
    linspace(lo - pad, hi + pad, points)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Gaussian KDE with Silverman bandwidth, renormalised on `grid`.
pub fn kde_marginal(mode: usize, samples: &[f64], grid: &[f64]) -> Result<MarginalDensity> {
    if samples.is_empty() {
        return Err(Error::config("density estimate needs samples"));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("density grid must be strictly increasing with two or more points"));
    }
    let mut bw = silverman_bandwidth(samples);
    if !(bw > 0.0) {
        bw = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    }
    let norm = 1.0 / (samples.len() as f64 * bw * (2.0 * PI).sqrt());
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|s| {
                    let z = (x - s) / bw;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    let total = trapezoid(grid, &density);
    if !(total > 0.0) {
        return Err(Error::numerical("density estimate has no mass on the grid"));
    }
    density.iter_mut().for_each(|d| *d /= total);
    Ok(MarginalDensity {
        mode,
        grid: grid.to_vec(),
        density,
    })
}

/// `0.5 * int |p - q|` on the union grid, exact for the interpolants.
pub fn tv_distance(p: &MarginalDensity, q: &MarginalDensity) -> f64 {
    let mut grid: Vec<f64> = p.grid.iter().chain(&q.grid).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let diff: Vec<f64> = grid.iter().map(|&x| p.at(x) - q.at(x)).collect();
    let mut acc = 0.0;
    for (xs, ds) in grid.windows(2).zip(diff.windows(2)) {
        let (w, a, b) = (xs[1] - xs[0], ds[0], ds[1]);
        acc += if a * b >= 0.0 {
            0.5 * w * (a.abs() + b.abs())
        } else {
            0.5 * w * (a * a + b * b) / (a.abs() + b.abs())
        };
    }
    (0.5 * acc).min(1.0)
}

fn column(samples: &[CoeffField], k: usize) -> Vec<f64> {
    samples.iter().map(|s| s.coeffs()[k]).collect()
}

/// Per-mode TV between KDE marginals of two ensembles on a shared grid.
pub fn marginal_tv_table(a: &[CoeffField], b: &[CoeffField], modes: usize, points: usize) -> Result<Vec<f64>> {
    (0..modes)
        .map(|k| {
            let (xa, xb) = (column(a, k), column(b, k));
            let both: Vec<f64> = xa.iter().chain(&xb).copied().collect();
            let grid = marginal_grid(&both, points);
            Ok(tv_distance(&kde_marginal(k, &xa, &grid)?, &kde_marginal(k, &xb, &grid)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub mean: Vec<f64>,
    pub members: usize,
    pub misfit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub count: usize,
    pub clusters: Vec<Cluster>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss: Vec<f64>,
}

impl ClusterReport {
    pub fn means(&self, like: &CoeffField) -> Vec<CoeffField> {
        self.clusters
            .iter()
            .map(|c| CoeffField::new(like.basis().clone(), c.mean.clone()).expect("same length"))
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centres: &[Vec<f64>]) -> usize {
    (0..centres.len())
        .min_by(|&i, &j| sq_dist(x, &centres[i]).total_cmp(&sq_dist(x, &centres[j])))
        .expect("non-empty centres")
}

/// K-means++ seeded Lloyd iterations on the leading `fitted_modes`
/// coefficients. Empty clusters are removed from the report.
pub fn kmeans_cluster(samples: &[CoeffField], k: usize, fitted_modes: usize, seed: u64) -> Result<ClusterReport> {
    if samples.is_empty() || k == 0 {
        return Err(Error::config("clustering needs samples and k >= 1"));
    }
    let dim = samples[0].len();
    let kf = fitted_modes.min(dim);
    let x: Vec<Vec<f64>> = samples.iter().map(|s| s.coeffs()[..kf].to_vec()).collect();
    let mut rng = stream(seed, 0, k as u64, Site::Cluster);
    let mut centres = kmeans_pp(&x, k, &mut rng);
    let mut assign: Vec<usize> = x.iter().map(|xi| nearest(xi, &centres)).collect();
    let mut wcss = Vec::new();
    for _ in 0..200 {
        for (j, c) in centres.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = x.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (d, cd) in c.iter_mut().enumerate() {
                *cd = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
        wcss.push(x.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centres[a])).sum());
        let next: Vec<usize> = x.iter().map(|xi| nearest(xi, &centres)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    // Full-coefficient means of the non-empty clusters.
    let mut remap = vec![usize::MAX; centres.len()];
    let mut clusters = Vec::new();
    for j in 0..centres.len() {
        let members: Vec<&CoeffField> = samples.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(s, _)| s).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for m in &members {
            for (o, c) in mean.iter_mut().zip(m.coeffs()) {
                *o += c;
            }
        }
        mean.iter_mut().for_each(|v| *v /= members.len() as f64);
        remap[j] = clusters.len();
        clusters.push(Cluster {
            mean,
            members: members.len(),
            misfit: None,
        });
    }
    Ok(ClusterReport {
        count: clusters.len(),
        clusters,
        assignments: assign.iter().map(|&a| remap[a]).collect(),
        wcss,
    })
}

/// Mean silhouette coefficient on the leading `fitted_modes` coefficients.
pub fn silhouette(samples: &[CoeffField], assignments: &[usize], fitted_modes: usize) -> f64 {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return 0.0;
    }
    let x: Vec<&[f64]> = samples.iter().map(|s| &s.coeffs()[..fitted_modes.min(s.len())]).collect();
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += sq_dist(x[i], x[j]).sqrt();
            }
        }
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteSweep {
    pub best_k: usize,
    /// `(k, clusters found, score)`.
    pub scores: Vec<(usize, usize, f64)>,
    pub report: ClusterReport,
}

/// Clusters for each `k` in `ks` and keeps the best mean silhouette.
pub fn silhouette_sweep(
    samples: &[CoeffField],
    ks: std::ops::RangeInclusive<usize>,
    fitted_modes: usize,
    seed: u64,
) -> Result<SilhouetteSweep> {
    let mut best: Option<(f64, ClusterReport)> = None;
    let mut scores = Vec::new();
    for k in ks {
        let rep = kmeans_cluster(samples, k, fitted_modes, seed)?;
        let s = silhouette(samples, &rep.assignments, fitted_modes);
        scores.push((k, rep.count, s));
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, rep));
        }
    }
    let (_, report) = best.ok_or_else(|| Error::config("empty k range"))?;
    Ok(SilhouetteSweep {
        best_k: report.count,
        scores,
        report,
    })
}

/// `||mean - truth|| / ||truth||` in L2.
pub fn relative_l2_error(mean: &CoeffField, truth: &CoeffField) -> f64 {
    mean.l2_distance(truth) / truth.l2_norm()
}

/// `l2` misfit `||F(u) - d||` of each field.
pub fn data_misfits(fields: &[CoeffField], evaluator: &PotentialEvaluator) -> Result<Vec<f64>> {
    let obs = evaluator
        .observation()
        .ok_or_else(|| Error::config("data misfit needs an observed forward model"))?;
    fields
        .iter()
        .map(|u| {
            let out = evaluator.forward(u)?.expect("observed model");
            Ok(out.iter().zip(&obs.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect()
}

/// Mean of [`data_misfits`].
pub fn avg_data_misfit(fields: &[CoeffField], evaluator: &PotentialEvaluator) -> Result<f64> {
    let m = data_misfits(fields, evaluator)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Cumulative temperature against normalised layer index `j / J`,
/// starting from `(0, 0)`.
pub fn normalized_curve(schedule: &TemperSchedule) -> Vec<(f64, f64)> {
    let j = schedule.layers() as f64;
    std::iter::once((0.0, 0.0))
        .chain(schedule.records.iter().enumerate().map(|(i, r)| ((i + 1) as f64 / j, r.h_cum)))
        .collect()
}

fn interp(curve: &[(f64, f64)], t: f64) -> f64 {
    let i = curve.partition_point(|p| p.0 <= t).clamp(1, curve.len() - 1);
    let (a, b) = (curve[i - 1], curve[i]);
    if b.0 == a.0 {
        return b.1;
    }
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// Largest vertical gap between two piecewise linear curves on `[0, 1]`.
pub fn max_curve_gap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .chain(b)
        .map(|p| (interp(a, p.0) - interp(b, p.0)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshRow {
    pub resolution: usize,
    pub layers: usize,
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub rows: Vec<MeshRow>,
}

impl MeshReport {
    pub fn layer_spread(&self) -> usize {
        let j: Vec<usize> = self.rows.iter().map(|r| r.layers).collect();
        j.iter().max().unwrap_or(&0) - j.iter().min().unwrap_or(&0)
    }

    pub fn max_gap(&self) -> f64 {
        let mut g = 0.0f64;
        for (i, a) in self.rows.iter().enumerate() {
            for b in &self.rows[i + 1..] {
                g = g.max(max_curve_gap(&a.curve, &b.curve));
            }
        }
        g
    }

    pub fn strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].layers > w[0].layers)
    }
}

/// Runs `run` at each resolution and tabulates the schedules.
pub fn mesh_independence_report(
    resolutions: &[usize],
    mut run: impl FnMut(usize) -> Result<TemperSchedule>,
) -> Result<MeshReport> {
    let rows = resolutions
        .iter()
        .map(|&r| {
            let s = run(r)?;
            Ok(MeshRow {
                resolution: r,
                layers: s.layers(),
                curve: normalized_curve(&s),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MeshReport { rows })
}

/// Ratio of potential evaluations between two runs.
pub fn evaluation_ratio(numerator: u64, denominator: u64) -> f64 {
    numerator as f64 / denominator as f64
}

pub fn write_densities_csv(path: &Path, densities: &[MarginalDensity]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "x", "density"])?;
    for d in densities {
        for (x, p) in d.grid.iter().zip(&d.density) {
            w.serialize((d.mode, x, p))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_clusters_csv(path: &Path, report: &ClusterReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = report.clusters.first().map_or(0, |c| c.mean.len());
    let mut header = vec!["cluster".to_string(), "members".into(), "misfit".into()];
    header.extend((0..k).map(|i| format!("c{i}")));
    w.write_record(&header)?;
    for (j, c) in report.clusters.iter().enumerate() {
        let mut row = vec![j.to_string(), c.members.to_string(), c.misfit.map_or(String::new(), |m| m.to_string())];
        row.extend(c.mean.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tv_csv(path: &Path, tv: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "tv"])?;
    for (k, v) in tv.iter().enumerate() {
        w.serialize((k, v))?;
    }
    w.flush()?;
    Ok(())
}
