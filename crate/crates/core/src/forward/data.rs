use super::darcy::{solve_constant_source, DarcyConfig};
use super::{check_point, observe, Point};
use crate::error::{Error, Result};
use crate::function_space::CoeffField;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

/// Data `d`, the points it was read at, and its noise level.
///
/// `sigma` is zero only for noise-free records; evaluators require it to be
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSetup {
    pub points: Vec<Point>,
    pub sigma: f64,
    pub data: Vec<f64>,
}

impl ObservationSetup {
    pub fn new(points: Vec<Point>, sigma: f64, data: Vec<f64>) -> Result<Self> {
        for p in &points {
            check_point(p)?;
        }
        if points.len() != data.len() {
            return Err(Error::Shape {
                context: "observation points vs data",
                expected: points.len(),
                found: data.len(),
            });
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("invalid noise level {sigma}")));
        }
        Ok(Self {
            points,
            sigma,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.points.clone(), sigma, self.data.clone())
    }

    /// `||out - d||^2 / (2 sigma^2)`.
    pub fn misfit_potential(&self, out: &[f64]) -> f64 {
        let r2: f64 = out.iter().zip(&self.data).map(|(a, b)| (a - b) * (a - b)).sum();
        r2 / (2.0 * self.sigma * self.sigma)
    }
}

/// Solves for `truth` on the fine mesh, reads it at `points` and adds
/// Gaussian noise of standard deviation `noise_pct * max |F(truth)|`.
pub fn synthesize_data<R: Rng + ?Sized>(
    truth: &CoeffField,
    cfg: &DarcyConfig,
    points: &[Point],
    noise_pct: f64,
    rng: &mut R,
) -> Result<ObservationSetup> {
    cfg.validate()?;
    if !(noise_pct >= 0.0 && noise_pct.is_finite()) {
        return Err(Error::config("noise percentage must be non-negative"));
    }
    let fine = truth.basis().with_grid(cfg.fine_resolution)?;
    let (w, _) = solve_constant_source(&fine.synthesize_coeffs(truth.coeffs()), cfg.source)?;
    let clean = observe(&w, points)?;
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sigma = noise_pct * peak;
    let data = clean
        .iter()
        .map(|v| {
            if sigma > 0.0 {
                v + sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                *v
            }
        })
        .collect();
    ObservationSetup::new(points.to_vec(), sigma, data)
}

/// Metadata stored beside the data CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSidecar {
    pub sigma: f64,
    pub noise_pct: f64,
    pub seed: u64,
    pub layout: String,
    pub darcy: DarcyConfig,
    pub count: usize,
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    value: f64,
}

pub fn write_observations(
    csv_path: &Path,
    json_path: &Path,
    setup: &ObservationSetup,
    sidecar: &DataSidecar,
) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    for (p, v) in setup.points.iter().zip(&setup.data) {
        w.serialize(Row {
            x: p[0],
            y: p[1],
            value: *v,
        })?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(json_path)?), sidecar)?;
    Ok(())
}

pub fn read_observations(csv_path: &Path, json_path: &Path) -> Result<(ObservationSetup, DataSidecar)> {
    let sidecar: DataSidecar = serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    let mut points = Vec::new();
    let mut data = Vec::new();
    for row in csv::Reader::from_path(csv_path)?.deserialize() {
        let row: Row = row?;
        points.push([row.x, row.y]);
        data.push(row.value);
    }
    if data.len() != sidecar.count {
        return Err(Error::Shape {
            context: "observation file rows",
            expected: sidecar.count,
            found: data.len(),
        });
    }
    Ok((ObservationSetup::new(points, sidecar.sigma, data)?, sidecar))
}
