//! Spectral representation of fields on `[0,1]` and `(0,1)^2`.
//!
//! Fields are stored as coefficients in the eigenbasis of the prior
//! covariance. The basis is the homogeneous-Neumann cosine family
//! `1, sqrt(2) cos(k pi x), ...` (tensor products in 2D), which diagonalizes
//! `(I - alpha * Laplacian)^(-p)` in closed form. Grids are cell-centred with
//! `G` points per axis, `x_i = (i + 1/2) / G`; for `K <= G` modes the sampled
//! cosines are exactly orthonormal under midpoint quadrature (DCT-II), so
//! `analyze` inverts `synthesize` on band-limited fields.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tail ratio `lambda_K / lambda_1` above which truncation is reported.
pub const TAIL_WARN_RATIO: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    dim: usize,
    modes_per_axis: usize,
    grid_per_axis: usize,
    /// `(k1, k2)` per mode in canonical order; `k2 = 0` in 1D.
    modes: Vec<[usize; 2]>,
    /// Neumann Laplacian eigenvalue `pi^2 (k1^2 + k2^2)` per mode.
    rho: Vec<f64>,
    /// Row `k`, column `i`: one-dimensional eigenfunction `k` at grid point `i`.
    axis_table: Vec<f64>,
}

impl PartialEq for SpectralBasis {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.modes_per_axis == other.modes_per_axis
            && self.grid_per_axis == other.grid_per_axis
    }
}

/// One-dimensional Neumann eigenfunction `k` evaluated at `x`.
pub fn cosine_mode(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * (k as f64 * PI * x).cos()
    }
}

impl SpectralBasis {
    pub fn new(dim: usize, modes_per_axis: usize, grid_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::config(format!("domain_dim must be 1 or 2, got {dim}")));
        }
        if modes_per_axis == 0 {
            return Err(Error::config("modes_per_axis must be at least 1"));
        }
        if grid_per_axis < modes_per_axis {
            return Err(Error::config(format!(
                "grid resolution {grid_per_axis} cannot resolve {modes_per_axis} modes per axis"
            )));
        }

        let mut modes: Vec<[usize; 2]> = if dim == 1 {
            (0..modes_per_axis).map(|k| [k, 0]).collect()
        } else {
            (0..modes_per_axis)
                .flat_map(|k1| (0..modes_per_axis).map(move |k2| [k1, k2]))
                .collect()
        };
        // Graded by rho, ties broken lexicographically on (k1, k2).
        modes.sort_by_key(|&[k1, k2]| (k1 * k1 + k2 * k2, k1, k2));
        let rho = modes
            .iter()
            .map(|&[k1, k2]| PI * PI * (k1 * k1 + k2 * k2) as f64)
            .collect();

        let h = 1.0 / grid_per_axis as f64;
        let mut axis_table = Vec::with_capacity(modes_per_axis * grid_per_axis);
        for k in 0..modes_per_axis {
            for i in 0..grid_per_axis {
                axis_table.push(cosine_mode(k, (i as f64 + 0.5) * h));
            }
        }

        Ok(Self {
            dim,
            modes_per_axis,
            grid_per_axis,
            modes,
            rho,
            axis_table,
        })
    }

    /// Same modes and ordering, sampled on a different grid.
    pub fn with_grid(&self, grid_per_axis: usize) -> Result<Self> {
        Self::new(self.dim, self.modes_per_axis, grid_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes_per_axis(&self) -> usize {
        self.modes_per_axis
    }

    pub fn grid_per_axis(&self) -> usize {
        self.grid_per_axis
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Number of grid values (`G` or `G^2`).
    pub fn grid_len(&self) -> usize {
        self.grid_per_axis.pow(self.dim as u32)
    }

    pub fn mode(&self, k: usize) -> [usize; 2] {
        self.modes[k]
    }

    pub fn laplacian_eigenvalue(&self, k: usize) -> f64 {
        self.rho[k]
    }

    pub fn laplacian_eigenvalues(&self) -> &[f64] {
        &self.rho
    }

    /// Cell-centre coordinates along one axis.
    pub fn axis_points(&self) -> Vec<f64> {
        let h = 1.0 / self.grid_per_axis as f64;
        (0..self.grid_per_axis).map(|i| (i as f64 + 0.5) * h).collect()
    }

    /// Eigenfunction `k` evaluated at an arbitrary point (`y` ignored in 1D).
    pub fn eval_mode(&self, k: usize, x: f64, y: f64) -> f64 {
        let [k1, k2] = self.modes[k];
        if self.dim == 1 {
            cosine_mode(k1, x)
        } else {
            cosine_mode(k1, x) * cosine_mode(k2, y)
        }
    }

    /// Eigenfunction `k` sampled on the grid.
    pub fn sampled_mode(&self, k: usize) -> GridField {
        let mut coeffs = vec![0.0; self.num_modes()];
        coeffs[k] = 1.0;
        self.synthesize_coeffs(&coeffs)
    }

    fn axis_row(&self, k: usize) -> &[f64] {
        let g = self.grid_per_axis;
        &self.axis_table[k * g..(k + 1) * g]
    }

    pub(crate) fn synthesize_coeffs(&self, coeffs: &[f64]) -> GridField {
        debug_assert_eq!(coeffs.len(), self.num_modes());
        let g = self.grid_per_axis;
        if self.dim == 1 {
            let mut values = vec![0.0; g];
            for (k, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for (v, &phi) in values.iter_mut().zip(self.axis_row(self.modes[k][0])) {
                    *v += c * phi;
                }
            }
            return GridField::new(1, g, values);
        }

        let kk = self.modes_per_axis;
        let mut cmat = vec![0.0; kk * kk];
        for (k, &c) in coeffs.iter().enumerate() {
            let [k1, k2] = self.modes[k];
            cmat[k1 * kk + k2] = c;
        }
        // partial[k1][iy] = sum_k2 c[k1][k2] phi_k2(y_iy)
        let mut partial = vec![0.0; kk * g];
        for k1 in 0..kk {
            let row = &mut partial[k1 * g..(k1 + 1) * g];
            for k2 in 0..kk {
                let c = cmat[k1 * kk + k2];
                if c == 0.0 {
                    continue;
                }
                for (p, &phi) in row.iter_mut().zip(self.axis_row(k2)) {
                    *p += c * phi;
                }
            }
        }
        let mut values = vec![0.0; g * g];
        for k1 in 0..kk {
            let tx = self.axis_row(k1);
            let prow = &partial[k1 * g..(k1 + 1) * g];
            for (iy, &p) in prow.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let out = &mut values[iy * g..(iy + 1) * g];
                for (v, &phi) in out.iter_mut().zip(tx) {
                    *v += p * phi;
                }
            }
        }
        GridField::new(2, g, values)
    }

    pub(crate) fn analyze_values(&self, values: &[f64]) -> Vec<f64> {
        let g = self.grid_per_axis;
        let n = self.num_modes();
        if self.dim == 1 {
            let w = 1.0 / g as f64;
            return (0..n)
                .map(|k| {
                    let row = self.axis_row(self.modes[k][0]);
                    w * row.iter().zip(values).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
        }
        let kk = self.modes_per_axis;
        // partial[k1][iy] = sum_ix phi_k1(x_ix) v(ix, iy)
        let mut partial = vec![0.0; kk * g];
        for k1 in 0..kk {
            let tx = self.axis_row(k1);
            for iy in 0..g {
                let line = &values[iy * g..(iy + 1) * g];
                partial[k1 * g + iy] = tx.iter().zip(line).map(|(a, b)| a * b).sum();
            }
        }
        let w = 1.0 / (g * g) as f64;
        (0..n)
            .map(|k| {
                let [k1, k2] = self.modes[k];
                let prow = &partial[k1 * g..(k1 + 1) * g];
                w * prow.iter().zip(self.axis_row(k2)).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Values on a cell-centred grid, indexed `ix + G * iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    dim: usize,
    n: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(dim: usize, n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n.pow(dim as u32), "grid value count");
        Self { dim, n, values }
    }

    pub fn from_fn(dim: usize, n: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = 1.0 / n as f64;
        let values = if dim == 1 {
            (0..n).map(|i| f((i as f64 + 0.5) * h, 0.0)).collect()
        } else {
            let mut v = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    v.push(f((ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h));
                }
            }
            v
        };
        Self::new(dim, n, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix + self.n * iy]
    }

    /// Midpoint-rule `L^2` norm.
    pub fn l2_norm(&self) -> f64 {
        let w = 1.0 / self.values.len() as f64;
        (w * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceSpectrum {
    basis: Arc<SpectralBasis>,
    eigenvalues: Vec<f64>,
}

impl CovarianceSpectrum {
    pub fn new(basis: Arc<SpectralBasis>, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != basis.num_modes() {
            return Err(Error::Shape {
                context: "covariance spectrum",
                expected: basis.num_modes(),
                found: eigenvalues.len(),
            });
        }
        if let Some((k, &l)) = eigenvalues
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::config(format!(
                "covariance eigenvalue {k} must be positive and finite, got {l}"
            )));
        }
        let max = eigenvalues.iter().cloned().fold(0.0, f64::max);
        let last = *eigenvalues.last().expect("non-empty basis");
        if eigenvalues.len() > 1 && last / max > TAIL_WARN_RATIO {
            log::warn!(
                "covariance truncated at {} modes with tail ratio {:.2e} > {:.0e}",
                eigenvalues.len(),
                last / max,
                TAIL_WARN_RATIO
            );
        }
        Ok(Self { basis, eigenvalues })
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// The same spectrum attached to a basis sampled on another grid.
    pub fn with_grid(&self, grid_per_axis: usize) -> Result<Self> {
        let basis = Arc::new(self.basis.with_grid(grid_per_axis)?);
        Ok(Self {
            basis,
            eigenvalues: self.eigenvalues.clone(),
        })
    }
}

/// Builds the cosine basis and the spectrum of `(I - alpha * Laplacian)^(-power)`.
pub fn make_prior_basis(
    domain_dim: usize,
    modes_per_axis: usize,
    grid_per_axis: usize,
    alpha: f64,
    power: u32,
) -> Result<(Arc<SpectralBasis>, CovarianceSpectrum)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    if power == 0 {
        return Err(Error::config("power must be at least 1"));
    }
    let basis = Arc::new(SpectralBasis::new(domain_dim, modes_per_axis, grid_per_axis)?);
    let eigenvalues = basis
        .laplacian_eigenvalues()
        .iter()
        .map(|&rho| (1.0 + alpha * rho).powi(-(power as i32)))
        .collect();
    let spectrum = CovarianceSpectrum::new(basis.clone(), eigenvalues)?;
    Ok((basis, spectrum))
}

#[derive(Debug, Clone)]
pub struct CoeffField {
    basis: Arc<SpectralBasis>,
    coeffs: Vec<f64>,
}

impl PartialEq for CoeffField {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis && self.coeffs == other.coeffs
    }
}

impl CoeffField {
    pub fn new(basis: Arc<SpectralBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.num_modes() {
            return Err(Error::Shape {
                context: "coefficient field",
                expected: basis.num_modes(),
                found: coeffs.len(),
            });
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Arc<SpectralBasis>) -> Self {
        let n = basis.num_modes();
        Self {
            basis,
            coeffs: vec![0.0; n],
        }
    }

    pub(crate) fn from_parts(basis: Arc<SpectralBasis>, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), basis.num_modes());
        Self { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `L^2` norm, equal to the coefficient `l^2` norm by orthonormality.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn l2_distance(&self, other: &CoeffField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Reattaches the coefficients to an equivalent basis on another grid.
    pub fn rebased(&self, basis: Arc<SpectralBasis>) -> Result<Self> {
        if basis.dim() != self.basis.dim() || basis.modes_per_axis() != self.basis.modes_per_axis()
        {
            return Err(Error::config("cannot rebase a field onto a different mode set"));
        }
        Ok(Self {
            basis,
            coeffs: self.coeffs.clone(),
        })
    }
}

pub fn synthesize(field: &CoeffField) -> GridField {
    field.basis.synthesize_coeffs(&field.coeffs)
}

/// Quadrature projection of grid values onto the basis.
pub fn analyze(grid: &GridField, basis: &Arc<SpectralBasis>) -> Result<CoeffField> {
    if grid.dim() != basis.dim() || grid.resolution() != basis.grid_per_axis() {
        return Err(Error::Shape {
            context: "analyze grid",
            expected: basis.grid_len(),
            found: grid.values().len(),
        });
    }
    Ok(CoeffField::from_parts(
        basis.clone(),
        basis.analyze_values(grid.values()),
    ))
}

#[derive(Debug, Clone)]
pub struct GaussianMeasureSpec {
    mean: CoeffField,
    spectrum: CovarianceSpectrum,
}

impl GaussianMeasureSpec {
    pub fn new(mean: CoeffField, spectrum: CovarianceSpectrum) -> Result<Self> {
        if **mean.basis() != **spectrum.basis() {
            return Err(Error::config("mean and covariance live on different bases"));
        }
        Ok(Self { mean, spectrum })
    }

    pub fn centered(spectrum: CovarianceSpectrum) -> Self {
        let mean = CoeffField::zeros(spectrum.basis().clone());
        Self { mean, spectrum }
    }

    pub fn mean(&self) -> &CoeffField {
        &self.mean
    }

    pub fn spectrum(&self) -> &CovarianceSpectrum {
        &self.spectrum
    }
}

/// Draws `mean_k + sqrt(lambda_k) * xi_k` for every mode.
pub fn sample_gaussian<R: Rng + ?Sized>(spec: &GaussianMeasureSpec, rng: &mut R) -> CoeffField {
    let coeffs = spec
        .mean
        .coeffs()
        .iter()
        .zip(spec.spectrum.eigenvalues())
        .map(|(&m, &l)| m + l.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    CoeffField::from_parts(spec.mean.basis().clone(), coeffs)
}

/// One mixture component over all modes.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Leading-mode parameters of a component; the tail is taken from the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentHead {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Gaussian mixture whose components share the prior eigenfunctions.
///
/// Components deviate from the prior only on the first `fitted_modes`
/// modes; beyond that every component has zero mean and the prior
/// eigenvalue exactly.
#[derive(Debug, Clone)]
pub struct GaussianMixtureSpec {
    basis: Arc<SpectralBasis>,
    prior_eigenvalues: Vec<f64>,
    fitted_modes: usize,
    components: Vec<MixtureComponent>,
    log_weights: Vec<f64>,
}

impl GaussianMixtureSpec {
    pub fn new(
        prior: &CovarianceSpectrum,
        fitted_modes: usize,
        heads: Vec<ComponentHead>,
    ) -> Result<Self> {
        let n = prior.num_modes();
        if heads.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        if fitted_modes > n {
            return Err(Error::config(format!(
                "fitted modes {fitted_modes} exceed basis size {n}"
            )));
        }
        let total: f64 = heads.iter().map(|h| h.weight).sum();
        if heads.iter().any(|h| !(h.weight.is_finite() && h.weight >= 0.0)) || total <= 0.0 {
            return Err(Error::config("mixture weights must be non-negative with positive sum"));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("mixture weights sum to {total}, not 1")));
        }
        let lambda = prior.eigenvalues();
        let mut components = Vec::with_capacity(heads.len());
        for (j, head) in heads.into_iter().enumerate() {
            if head.mean.len() != fitted_modes || head.eigenvalues.len() != fitted_modes {
                return Err(Error::Shape {
                    context: "mixture component head",
                    expected: fitted_modes,
                    found: head.mean.len().max(head.eigenvalues.len()),
                });
            }
            if head.eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                return Err(Error::config(format!(
                    "component {j} has a non-positive eigenvalue"
                )));
            }
            let mut mean = head.mean;
            mean.resize(n, 0.0);
            let mut eigenvalues = head.eigenvalues;
            eigenvalues.extend_from_slice(&lambda[fitted_modes..]);
            components.push(MixtureComponent {
                weight: head.weight / total,
                mean,
                eigenvalues,
            });
        }
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        Ok(Self {
            basis: prior.basis().clone(),
            prior_eigenvalues: lambda.to_vec(),
            fitted_modes,
            components,
            log_weights,
        })
    }

    /// A single component equal to the prior, optionally shifted.
    pub fn prior_only(prior: &CovarianceSpectrum) -> Self {
        Self::new(
            prior,
            0,
            vec![ComponentHead {
                weight: 1.0,
                mean: vec![],
                eigenvalues: vec![],
            }],
        )
        .expect("prior component is valid")
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn prior_eigenvalues(&self) -> &[f64] {
        &self.prior_eigenvalues
    }

    pub fn fitted_modes(&self) -> usize {
        self.fitted_modes
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `sum_j w_j m_j`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.prior_eigenvalues.len()];
        for c in &self.components {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += c.weight * m;
            }
        }
        out
    }

    /// Largest `|lambda_jk / lambda_k - 1|` over components and modes.
    pub fn max_eigenvalue_ratio_deviation(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| {
                c.eigenvalues
                    .iter()
                    .zip(&self.prior_eigenvalues)
                    .map(|(lj, l)| (lj / l - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return j;
            }
        }
        // Rounding left u above the last partial sum.
        self.components
            .iter()
            .rposition(|c| c.weight > 0.0)
            .expect("positive total weight")
    }
}

/// Categorical component draw followed by a Gaussian draw from it.
pub fn sample_mixture<R: Rng + ?Sized>(mix: &GaussianMixtureSpec, rng: &mut R) -> CoeffField {
    let j = mix.draw_component(rng);
    let c = &mix.components[j];
    let coeffs = c
        .mean
        .iter()
        .zip(&c.eigenvalues)
        .map(|(&m, &l)| m + l.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    CoeffField::from_parts(mix.basis.clone(), coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Site};

    fn prior_1d(k: usize) -> (Arc<SpectralBasis>, CovarianceSpectrum) {
        make_prior_basis(1, k, k, 0.01, 2).unwrap()
    }

    #[test]
    fn prior_eigenvalues_match_closed_form() {
        let (_, s) = prior_1d(8);
        assert_eq!(s.eigenvalues()[0], 1.0);
        // (1 + 0.01 pi^2)^-2 evaluated at 30 digits.
        assert!((s.eigenvalues()[1] - 0.828_409_133_361_047_2).abs() < 1e-15);

        let (b2, s2) = make_prior_basis(2, 4, 4, 1.0, 2).unwrap();
        let k = (0..b2.num_modes()).find(|&k| b2.mode(k) == [1, 1]).unwrap();
        assert!((s2.eigenvalues()[k] - 0.002_324_960_783_616_211_8).abs() < 1e-16);
    }

    #[test]
    fn invalid_sizes_are_configuration_errors() {
        assert!(matches!(make_prior_basis(3, 4, 4, 1.0, 2), Err(Error::Config(_))));
        assert!(matches!(make_prior_basis(1, 0, 4, 1.0, 2), Err(Error::Config(_))));
        assert!(matches!(make_prior_basis(1, 4, 4, -1.0, 2), Err(Error::Config(_))));
        assert!(matches!(make_prior_basis(1, 4, 4, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(make_prior_basis(2, 8, 4, 1.0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn zero_eigenvalue_is_rejected() {
        let b = Arc::new(SpectralBasis::new(1, 3, 3).unwrap());
        assert!(CovarianceSpectrum::new(b, vec![1.0, 0.0, 0.5]).is_err());
    }

    #[test]
    fn two_dimensional_ordering_is_graded_then_lexicographic() {
        let b = SpectralBasis::new(2, 3, 3).unwrap();
        let modes: Vec<_> = (0..b.num_modes()).map(|k| b.mode(k)).collect();
        assert_eq!(
            modes,
            vec![[0, 0], [0, 1], [1, 0], [1, 1], [0, 2], [2, 0], [1, 2], [2, 1], [2, 2]]
        );
        assert!(b.laplacian_eigenvalues().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gram_matrix_is_identity() {
        for (dim, k, g) in [(1, 16, 16), (1, 8, 20), (2, 6, 6), (2, 5, 9)] {
            let b = SpectralBasis::new(dim, k, g).unwrap();
            let sampled: Vec<GridField> = (0..b.num_modes()).map(|m| b.sampled_mode(m)).collect();
            let w = 1.0 / b.grid_len() as f64;
            for (i, a) in sampled.iter().enumerate() {
                for (j, c) in sampled.iter().enumerate() {
                    let g: f64 = w * a.values().iter().zip(c.values()).map(|(x, y)| x * y).sum::<f64>();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g - expect).abs() < 1e-8, "dim {dim} ({i},{j}) gram {g}");
                }
            }
        }
    }

    #[test]
    fn synthesis_edge_cases() {
        let b = Arc::new(SpectralBasis::new(2, 4, 6).unwrap());
        let zero = synthesize(&CoeffField::zeros(b.clone()));
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let mut c = CoeffField::zeros(b.clone());
        c.coeffs_mut()[1] = 1.0;
        let g = synthesize(&c);
        let pts = b.axis_points();
        for iy in 0..6 {
            for ix in 0..6 {
                let expect = b.eval_mode(1, pts[ix], pts[iy]);
                assert!((g.at(ix, iy) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn analyze_rejects_mismatched_grid() {
        let b = Arc::new(SpectralBasis::new(1, 4, 8).unwrap());
        let g = GridField::new(1, 6, vec![0.0; 6]);
        assert!(matches!(analyze(&g, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn gaussian_sampling_moments() {
        let (_, s) = prior_1d(10);
        let spec = GaussianMeasureSpec::centered(s.clone());
        let mut rng = stream(11, 0, 0, Site::Init);
        let n = 100_000;
        let mut sum = vec![0.0; 10];
        let mut sq = vec![0.0; 10];
        let mut cross = vec![vec![0.0; 10]; 10];
        for _ in 0..n {
            let c = sample_gaussian(&spec, &mut rng);
            let xi: Vec<f64> = c
                .coeffs()
                .iter()
                .zip(s.eigenvalues())
                .map(|(c, l)| c / l.sqrt())
                .collect();
            for k in 0..10 {
                sum[k] += c.coeffs()[k];
                sq[k] += c.coeffs()[k] * c.coeffs()[k];
                for j in 0..10 {
                    cross[k][j] += xi[k] * xi[j];
                }
            }
        }
        for k in 0..10 {
            let l = s.eigenvalues()[k];
            let mean = sum[k] / n as f64;
            assert!(mean.abs() < 4.0 * (l / n as f64).sqrt(), "mode {k} mean {mean}");
            let var = sq[k] / n as f64;
            assert!((var / l - 1.0).abs() < 0.05, "mode {k} var {var} vs {l}");
            for j in 0..10 {
                if j != k {
                    let corr = cross[k][j] / n as f64;
                    assert!(corr.abs() < 0.02, "corr({k},{j}) = {corr}");
                }
            }
        }
    }

    #[test]
    fn shifted_gaussian_mean() {
        let (b, s) = prior_1d(4);
        let mean = CoeffField::new(b, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let spec = GaussianMeasureSpec::new(mean.clone(), s.clone()).unwrap();
        let mut rng = stream(3, 0, 0, Site::Init);
        let n = 100_000;
        let mut acc = vec![0.0; 4];
        for _ in 0..n {
            for (a, c) in acc.iter_mut().zip(sample_gaussian(&spec, &mut rng).coeffs()) {
                *a += c;
            }
        }
        for k in 0..4 {
            let m = acc[k] / n as f64;
            let bound = 4.0 * (s.eigenvalues()[k] / n as f64).sqrt();
            assert!((m - mean.coeffs()[k]).abs() < bound);
        }
    }

    fn two_component(prior: &CovarianceSpectrum, w0: f64) -> GaussianMixtureSpec {
        GaussianMixtureSpec::new(
            prior,
            1,
            vec![
                ComponentHead {
                    weight: w0,
                    mean: vec![-10.0],
                    eigenvalues: vec![0.01],
                },
                ComponentHead {
                    weight: 1.0 - w0,
                    mean: vec![10.0],
                    eigenvalues: vec![0.01],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn mixture_component_frequencies() {
        let (_, s) = prior_1d(3);
        let mut rng = stream(5, 0, 0, Site::Init);
        let always = two_component(&s, 1.0);
        for _ in 0..1000 {
            assert!(sample_mixture(&always, &mut rng).coeffs()[0] < 0.0);
        }
        let mix = two_component(&s, 0.3);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| sample_mixture(&mix, &mut rng).coeffs()[0] < 0.0)
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn single_component_mixture_matches_gaussian_draws() {
        let (_, s) = prior_1d(5);
        let mix = GaussianMixtureSpec::prior_only(&s);
        let spec = GaussianMeasureSpec::centered(s.clone());
        // One uniform is consumed for the component index, then identical normals.
        let mut r1 = stream(9, 0, 0, Site::Init);
        let mut r2 = stream(9, 0, 0, Site::Init);
        let _: f64 = r2.random();
        assert_eq!(sample_mixture(&mix, &mut r1), sample_gaussian(&spec, &mut r2));
    }

    #[test]
    fn mixture_tail_equals_prior_exactly() {
        let (_, s) = prior_1d(6);
        let mix = two_component(&s, 0.5);
        for c in mix.components() {
            assert_eq!(&c.eigenvalues[1..], &s.eigenvalues()[1..]);
            assert!(c.mean[1..].iter().all(|&m| m == 0.0));
        }
        assert!((mix.components().iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mix.max_eigenvalue_ratio_deviation().is_finite());
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let (_, s) = prior_1d(2);
        let head = |w: f64| ComponentHead {
            weight: w,
            mean: vec![],
            eigenvalues: vec![],
        };
        assert!(GaussianMixtureSpec::new(&s, 0, vec![head(0.5), head(0.2)]).is_err());
        assert!(GaussianMixtureSpec::new(&s, 0, vec![head(-0.5), head(1.5)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn analyze_inverts_synthesize(
                dim in 1usize..=2,
                k in 1usize..7,
                extra in 0usize..5,
                seed in any::<u64>(),
            ) {
                let b = Arc::new(SpectralBasis::new(dim, k, k + extra).unwrap());
                let mut rng = stream(seed, 0, 0, Site::Init);
                let coeffs: Vec<f64> = (0..b.num_modes())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let u = CoeffField::new(b.clone(), coeffs).unwrap();
                let grid = synthesize(&u);
                // Parseval under midpoint quadrature.
                prop_assert!((grid.l2_norm() - u.l2_norm()).abs() < 1e-9);
                let back = analyze(&grid, &b).unwrap();
                for (a, c) in back.coeffs().iter().zip(u.coeffs()) {
                    prop_assert!((a - c).abs() < 1e-10);
                }
            }
        }
    }
}
