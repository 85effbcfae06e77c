//! Cell-centred finite-volume solver for `-div(exp(u) grad w) = f` on the
//! unit square with `w = 0` on the boundary.
//!
//! Unknowns sit at cell centres `((i + 1/2) h, (j + 1/2) h)`. Interior face
//! coefficients are harmonic means of the adjacent cell permeabilities;
//! boundary faces see the cell permeability over half a cell. The result is
//! a symmetric M-matrix on the 5-point stencil, solved by conjugate
//! gradients preconditioned with zero-fill incomplete Cholesky.

use crate::error::{Error, Result};
use crate::function_space::{CoeffField, GridField};
use serde::{Deserialize, Serialize};

pub const SOLVE_RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarcyConfig {
    /// Cells per axis of the inverse mesh.
    pub inverse_resolution: usize,
    /// Cells per axis of the data-generating mesh.
    pub fine_resolution: usize,
    pub source: f64,
}

impl Default for DarcyConfig {
    fn default() -> Self {
        Self {
            inverse_resolution: 32,
            fine_resolution: 128,
            source: 1.0,
        }
    }
}

impl DarcyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inverse_resolution < 8 {
            return Err(Error::config("inverse resolution must be at least 8"));
        }
        if self.fine_resolution <= self.inverse_resolution {
            return Err(Error::config(
                "fine resolution must exceed the inverse resolution",
            ));
        }
        if !self.source.is_finite() {
            return Err(Error::config("source must be finite"));
        }
        Ok(())
    }
}

/// Pressure for log-permeability `u` on the inverse mesh of `cfg`.
pub fn darcy_solve(u: &CoeffField, cfg: &DarcyConfig) -> Result<GridField> {
    cfg.validate()?;
    let basis = u.basis().with_grid(cfg.inverse_resolution)?;
    let log_perm = basis.synthesize_coeffs(u.coeffs());
    Ok(solve_constant_source(&log_perm, cfg.source)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Assembled 5-point operator (scaled by `h^2`).
#[derive(Debug, Clone)]
pub struct DarcyOperator {
    n: usize,
    diag: Vec<f64>,
    /// Coupling to the east neighbour (zero on the last column).
    east: Vec<f64>,
    /// Coupling to the north neighbour (zero on the last row).
    north: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl DarcyOperator {
    pub fn assemble(log_perm: &GridField) -> Result<Self> {
        if log_perm.dim() != 2 {
            return Err(Error::config("Darcy solver needs a two-dimensional field"));
        }
        let n = log_perm.resolution();
        let k: Vec<f64> = log_perm.values().iter().map(|u| u.exp()).collect();
        if k.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::numerical(
                "permeability exp(u) overflowed or underflowed on the grid",
            ));
        }
        let len = n * n;
        let mut diag = vec![0.0; len];
        let mut east = vec![0.0; len];
        let mut north = vec![0.0; len];
        for iy in 0..n {
            for ix in 0..n {
                let p = ix + n * iy;
                let kp = k[p];
                if ix + 1 < n {
                    let c = harmonic(kp, k[p + 1]);
                    east[p] = c;
                    diag[p] += c;
                    diag[p + 1] += c;
                }
                if iy + 1 < n {
                    let c = harmonic(kp, k[p + n]);
                    north[p] = c;
                    diag[p] += c;
                    diag[p + n] += c;
                }
                let boundary_faces =
                    (ix == 0) as u8 + (ix + 1 == n) as u8 + (iy == 0) as u8 + (iy + 1 == n) as u8;
                diag[p] += 2.0 * kp * boundary_faces as f64;
            }
        }
        Ok(Self {
            n,
            diag,
            east,
            north,
        })
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for p in 0..n * n {
            let ix = p % n;
            let mut acc = self.diag[p] * x[p];
            if ix + 1 < n {
                acc -= self.east[p] * x[p + 1];
            }
            if ix > 0 {
                acc -= self.east[p - 1] * x[p - 1];
            }
            if p + n < n * n {
                acc -= self.north[p] * x[p + n];
            }
            if p >= n {
                acc -= self.north[p - n] * x[p - n];
            }
            out[p] = acc;
        }
    }

    /// Zero-fill incomplete Cholesky pivots.
    fn ic0_pivots(&self) -> Result<Vec<f64>> {
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for p in 0..n * n {
            let ix = p % n;
            let mut v = self.diag[p];
            if ix > 0 {
                v -= self.east[p - 1] * self.east[p - 1] / d[p - 1];
            }
            if p >= n {
                v -= self.north[p - n] * self.north[p - n] / d[p - n];
            }
            if !(v > 0.0) {
                return Err(Error::numerical(format!(
                    "incomplete Cholesky breakdown at cell {p} (pivot {v:e})"
                )));
            }
            d[p] = v;
        }
        Ok(d)
    }

    fn precondition(&self, pivots: &[f64], r: &[f64], z: &mut [f64]) {
        let n = self.n;
        let len = n * n;
        for p in 0..len {
            let ix = p % n;
            let mut v = r[p];
            if ix > 0 {
                v += self.east[p - 1] * z[p - 1];
            }
            if p >= n {
                v += self.north[p - n] * z[p - n];
            }
            z[p] = v / pivots[p];
        }
        for p in (0..len).rev() {
            let ix = p % n;
            let mut v = 0.0;
            if ix + 1 < n {
                v += self.east[p] * z[p + 1];
            }
            if p + n < len {
                v += self.north[p] * z[p + n];
            }
            z[p] += v / pivots[p];
        }
    }

    /// Solves `A w = rhs` where `rhs` is already scaled by `h^2`.
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let len = self.n * self.n;
        if rhs.len() != len {
            return Err(Error::Shape {
                context: "Darcy right-hand side",
                expected: len,
                found: rhs.len(),
            });
        }
        let b_norm = norm(rhs);
        let mut x = vec![0.0; len];
        if b_norm == 0.0 {
            return Ok((
                x,
                SolveStats {
                    iterations: 0,
                    relative_residual: 0.0,
                },
            ));
        }
        let pivots = self.ic0_pivots()?;
        let mut r = rhs.to_vec();
        let mut z = vec![0.0; len];
        self.precondition(&pivots, &r, &mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; len];
        let mut rz = dot(&r, &z);
        let cap = 20 * len;
        let mut rel = 1.0;
        for it in 1..=cap {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::numerical(format!(
                    "conjugate gradients lost positive definiteness at iteration {it} (p'Ap = {pap:e})"
                )));
            }
            let alpha = rz / pap;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rel = norm(&r) / b_norm;
            if rel <= SOLVE_RELATIVE_TOLERANCE {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it,
                        relative_residual: rel,
                    },
                ));
            }
            self.precondition(&pivots, &r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::LinearSolve {
            iterations: cap,
            residual: rel,
            unknowns: len,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves with a per-cell source term.
pub fn solve_with_source(log_perm: &GridField, source: &[f64]) -> Result<(GridField, SolveStats)> {
    let op = DarcyOperator::assemble(log_perm)?;
    let n = op.resolution();
    let h2 = 1.0 / (n * n) as f64;
    let rhs: Vec<f64> = source.iter().map(|f| f * h2).collect();
    let (w, stats) = op.solve(&rhs)?;
    Ok((GridField::new(2, n, w), stats))
}

/// Solves with a constant source `f`.
pub fn solve_constant_source(log_perm: &GridField, source: f64) -> Result<(GridField, SolveStats)> {
    let n = log_perm.resolution();
    solve_with_source(log_perm, &vec![source; n * n])
}
