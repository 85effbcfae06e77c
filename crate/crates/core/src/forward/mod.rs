//! Forward models and the potentials built on them.

pub mod darcy;
mod data;
mod potential;

pub use data::{
    read_observations, synthesize_data, write_observations, DataSidecar, ObservationSetup,
};
pub use potential::{
    example_one_modes, multimodal_potential, DarcyForward, ForwardKind, LinearForward,
    MultimodalModel, PotentialEvaluator,
};

use crate::error::{Error, Result};
use crate::function_space::GridField;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Observation locations in the unit square.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementLayout {
    /// 10 x 10 points at `(9 + 98 i) / 900`.
    Dense10x10,
    /// 20 points on the segment `x = 0.8`, `y = 0.2 + 0.03 i`.
    SparseLine20,
}

impl FromStr for MeasurementLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-10x10" | "dense10x10" | "dense" => Ok(Self::Dense10x10),
            "sparse-line20" | "sparse-line-20" | "sparse" => Ok(Self::SparseLine20),
            other => Err(Error::config(format!("unknown measurement layout `{other}`"))),
        }
    }
}

pub fn measurement_grid(layout: MeasurementLayout) -> Vec<Point> {
    match layout {
        MeasurementLayout::Dense10x10 => {
            let axis: Vec<f64> = (0..10).map(|i| (9.0 + 98.0 * i as f64) / 900.0).collect();
            let mut pts = Vec::with_capacity(100);
            for &y in &axis {
                for &x in &axis {
                    pts.push([x, y]);
                }
            }
            pts
        }
        MeasurementLayout::SparseLine20 => {
            (1..=20).map(|i| [0.8, 0.2 + 0.03 * i as f64]).collect()
        }
    }
}

fn check_point(p: &Point) -> Result<()> {
    let inside = |v: f64| (0.0..=1.0).contains(&v);
    if inside(p[0]) && inside(p[1]) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "observation point ({}, {}) lies outside the unit square",
            p[0], p[1]
        )))
    }
}

/// Locates `x` among the padded nodes `0, c_0, .., c_{n-1}, 1`.
fn bracket(x: f64, n: usize) -> (usize, f64) {
    let h = 1.0 / n as f64;
    let node = |i: usize| -> f64 {
        if i == 0 {
            0.0
        } else if i == n + 1 {
            1.0
        } else {
            (i as f64 - 0.5) * h
        }
    };
    let i = if x < 0.5 * h {
        0
    } else if x >= 1.0 - 0.5 * h {
        n
    } else {
        (((x - 0.5 * h) / h).floor() as usize + 1).min(n - 1)
    };
    let (a, b) = (node(i), node(i + 1));
    (i, ((x - a) / (b - a)).clamp(0.0, 1.0))
}

/// Bilinear interpolation of a 2D cell-centred field extended by zero on
/// the boundary of the unit square.
pub fn observe(field: &GridField, points: &[Point]) -> Result<Vec<f64>> {
    if field.dim() != 2 {
        return Err(Error::config("observation needs a two-dimensional field"));
    }
    let n = field.resolution();
    let padded = |i: usize, j: usize| -> f64 {
        if i == 0 || j == 0 || i == n + 1 || j == n + 1 {
            0.0
        } else {
            field.at(i - 1, j - 1)
        }
    };
    points
        .iter()
        .map(|p| {
            check_point(p)?;
            let (i, tx) = bracket(p[0], n);
            let (j, ty) = bracket(p[1], n);
            Ok((1.0 - tx) * (1.0 - ty) * padded(i, j)
                + tx * (1.0 - ty) * padded(i + 1, j)
                + (1.0 - tx) * ty * padded(i, j + 1)
                + tx * ty * padded(i + 1, j + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_have_expected_shape() {
        let dense = measurement_grid(MeasurementLayout::Dense10x10);
        assert_eq!(dense.len(), 100);
        assert!((dense[0][0] - 0.01).abs() < 1e-15);
        assert!((dense[99][1] - 0.99).abs() < 1e-15);
        let sparse = measurement_grid(MeasurementLayout::SparseLine20);
        assert_eq!(sparse.len(), 20);
        assert!((sparse[19][1] - 0.8).abs() < 1e-12);
        assert!(sparse.iter().all(|p| p[0] == 0.8));
    }

    #[test]
    fn observe_reproduces_bilinear_fields() {
        let n = 12;
        // Bilinear in the interior; boundary padding only matters near edges.
        let f = |x: f64, y: f64| 0.3 + 2.0 * x - y + 1.5 * x * y;
        let grid = GridField::from_fn(2, n, f);
        let h = 1.0 / n as f64;
        let pts: Vec<Point> = (0..50)
            .map(|i| {
                let s = i as f64 / 49.0;
                [0.5 * h + s * (1.0 - h), 0.5 * h + (1.0 - s) * (1.0 - h) * 0.7]
            })
            .collect();
        let vals = observe(&grid, &pts).unwrap();
        for (p, v) in pts.iter().zip(vals) {
            assert!((v - f(p[0], p[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn observe_is_exact_at_cell_centres_and_zero_on_boundary() {
        let n = 8;
        let grid = GridField::from_fn(2, n, |x, y| (x * 5.0).sin() + y * y);
        let h = 1.0 / n as f64;
        for iy in 0..n {
            for ix in 0..n {
                let p = [(ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h];
                let v = observe(&grid, &[p]).unwrap()[0];
                assert!((v - grid.at(ix, iy)).abs() < 1e-12);
            }
        }
        let edge = observe(&grid, &[[0.0, 0.4], [1.0, 0.3], [0.2, 1.0], [0.0, 0.0]]).unwrap();
        assert!(edge.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn points_outside_domain_are_rejected() {
        let grid = GridField::new(2, 4, vec![1.0; 16]);
        assert!(observe(&grid, &[[1.2, 0.5]]).is_err());
        assert!(observe(&grid, &[[0.5, -0.01]]).is_err());
    }

    #[test]
    fn layout_parsing() {
        assert_eq!("dense".parse::<MeasurementLayout>().unwrap(), MeasurementLayout::Dense10x10);
        assert!("diagonal".parse::<MeasurementLayout>().is_err());
    }
}
