use super::darcy::solve_constant_source;
use super::{observe, ObservationSetup, Point};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::function_space::{analyze, CoeffField, GridField, SpectralBasis};
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// `-log sum_i exp(-||u - f_i||^2 / (2 sigma^2))`.
pub fn multimodal_potential(u: &CoeffField, modes: &[CoeffField], sigma: f64) -> f64 {
    let s2 = 2.0 * sigma * sigma;
    -log_sum_exp(modes.iter().map(|f| {
        let d = u.l2_distance(f);
        -d * d / s2
    }))
}

/// `cos(pi x)`, `-cos(pi x)`, `cos(2 pi x)`, `cos(3 pi x)` analysed on `basis`.
pub fn example_one_modes(basis: &Arc<SpectralBasis>) -> Result<Vec<CoeffField>> {
    if basis.dim() != 1 || basis.num_modes() < 4 {
        return Err(Error::config(
            "the four-mode target needs a 1D basis with at least 4 modes",
        ));
    }
    let g = basis.grid_per_axis();
    let fs: [fn(f64) -> f64; 4] = [
        |x| (PI * x).cos(),
        |x| -(PI * x).cos(),
        |x| (2.0 * PI * x).cos(),
        |x| (3.0 * PI * x).cos(),
    ];
    fs.iter()
        .map(|f| analyze(&GridField::from_fn(1, g, |x, _| f(x)), basis))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MultimodalModel {
    pub modes: Vec<CoeffField>,
    pub sigma: f64,
}

/// Darcy pressure sampled at observation points.
#[derive(Debug, Clone)]
pub struct DarcyForward {
    basis: Arc<SpectralBasis>,
    source: f64,
    points: Vec<Point>,
}

impl DarcyForward {
    /// `basis` fixes the modes and grid on which the pressure is solved.
    pub fn new(basis: Arc<SpectralBasis>, source: f64, points: Vec<Point>) -> Result<Self> {
        if basis.dim() != 2 {
            return Err(Error::config("Darcy forward map needs a 2D basis"));
        }
        if basis.grid_per_axis() < 8 {
            return Err(Error::config("Darcy resolution must be at least 8"));
        }
        if !source.is_finite() {
            return Err(Error::config("Darcy source must be finite"));
        }
        for p in &points {
            super::check_point(p)?;
        }
        Ok(Self {
            basis,
            source,
            points,
        })
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn solve(&self, u: &CoeffField) -> Result<GridField> {
        let b = &self.basis;
        let ub = u.basis();
        if ub.dim() != b.dim() || ub.modes_per_axis() != b.modes_per_axis() {
            return Err(Error::Shape {
                context: "Darcy parameter modes",
                expected: b.num_modes(),
                found: u.len(),
            });
        }
        let log_perm = b.synthesize_coeffs(u.coeffs());
        Ok(solve_constant_source(&log_perm, self.source)?.0)
    }

    pub fn apply(&self, u: &CoeffField) -> Result<Vec<f64>> {
        observe(&self.solve(u)?, &self.points)
    }
}

/// Finite-dimensional linear map acting on coefficients.
#[derive(Debug, Clone)]
pub struct LinearForward {
    rows: Vec<Vec<f64>>,
}

impl LinearForward {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::config("linear forward map needs a non-empty rectangular matrix"));
        }
        Ok(Self { rows })
    }

    /// Observes the first `m` coefficients directly.
    pub fn leading_modes(m: usize, num_modes: usize) -> Result<Self> {
        if m > num_modes {
            return Err(Error::config("more observed modes than basis modes"));
        }
        Self::new(
            (0..m)
                .map(|i| (0..num_modes).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn apply(&self, u: &CoeffField) -> Result<Vec<f64>> {
        let width = self.rows[0].len();
        if u.len() != width {
            return Err(Error::Shape {
                context: "linear forward input",
                expected: width,
                found: u.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r.iter().zip(u.coeffs()).map(|(a, b)| a * b).sum())
            .collect())
    }
}

#[derive(Debug, Clone)]
pub enum ForwardKind {
    Multimodal(MultimodalModel),
    Darcy(DarcyForward, ObservationSetup),
    Linear(LinearForward, ObservationSetup),
}

/// Thread-safe potential with evaluation and PDE-solve counters.
#[derive(Debug)]
pub struct PotentialEvaluator {
    kind: ForwardKind,
    evaluations: AtomicU64,
    solves: AtomicU64,
}

fn check_setup(setup: &ObservationSetup, outputs: usize) -> Result<()> {
    if !(setup.sigma > 0.0 && setup.sigma.is_finite()) {
        return Err(Error::config(format!(
            "noise standard deviation must be positive, got {}",
            setup.sigma
        )));
    }
    if setup.data.len() != outputs {
        return Err(Error::Shape {
            context: "observation data",
            expected: outputs,
            found: setup.data.len(),
        });
    }
    Ok(())
}

impl PotentialEvaluator {
    pub fn multimodal(modes: Vec<CoeffField>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config("multimodal sigma must be positive"));
        }
        if modes.is_empty() {
            return Err(Error::config("multimodal target needs at least one mode"));
        }
        Ok(Self::from_kind(ForwardKind::Multimodal(MultimodalModel { modes, sigma })))
    }

    pub fn darcy(forward: DarcyForward, setup: ObservationSetup) -> Result<Self> {
        check_setup(&setup, forward.points().len())?;
        Ok(Self::from_kind(ForwardKind::Darcy(forward, setup)))
    }

    pub fn linear(forward: LinearForward, setup: ObservationSetup) -> Result<Self> {
        check_setup(&setup, forward.rows().len())?;
        Ok(Self::from_kind(ForwardKind::Linear(forward, setup)))
    }

    fn from_kind(kind: ForwardKind) -> Self {
        Self {
            kind,
            evaluations: AtomicU64::new(0),
            solves: AtomicU64::new(0),
        }
    }

    pub fn kind(&self) -> &ForwardKind {
        &self.kind
    }

    pub fn tag(&self) -> &'static str {
        match self.kind {
            ForwardKind::Multimodal(_) => "multimodal",
            ForwardKind::Darcy(..) => "darcy",
            ForwardKind::Linear(..) => "linear-test",
        }
    }

    pub fn observation(&self) -> Option<&ObservationSetup> {
        match &self.kind {
            ForwardKind::Multimodal(_) => None,
            ForwardKind::Darcy(_, s) | ForwardKind::Linear(_, s) => Some(s),
        }
    }

    /// Model outputs `F(u)`; `None` for the multimodal target.
    pub fn forward(&self, u: &CoeffField) -> Result<Option<Vec<f64>>> {
        match &self.kind {
            ForwardKind::Multimodal(_) => Ok(None),
            ForwardKind::Darcy(f, _) => {
                self.solves.fetch_add(1, Ordering::Relaxed);
                f.apply(u).map(Some)
            }
            ForwardKind::Linear(f, _) => f.apply(u).map(Some),
        }
    }

    pub fn potential(&self, u: &CoeffField) -> Result<f64> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let phi = match &self.kind {
            ForwardKind::Multimodal(m) => multimodal_potential(u, &m.modes, m.sigma),
            ForwardKind::Darcy(_, setup) | ForwardKind::Linear(_, setup) => {
                let out = self.forward(u)?.expect("observed model");
                setup.misfit_potential(&out)
            }
        };
        if phi.is_nan() {
            return Err(Error::numerical("potential evaluated to NaN"));
        }
        Ok(phi)
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn solves(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
        self.solves.store(0, Ordering::Relaxed);
    }
}
