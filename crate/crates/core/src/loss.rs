//! Estimation loss `l_d(x, x̂)` between a state value and an output cell.

use serde::{Deserialize, Serialize};

use crate::model::Tessellation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Squared,
    Absolute,
    /// 0 when `x` falls in the output cell, 1 otherwise.
    ZeroOne,
}

/// Loss against the centers of the output cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Distortion {
    pub kind: LossKind,
    centers: Vec<f64>,
    half_width: f64,
}

impl Distortion {
    pub fn new(kind: LossKind, tessellation: &Tessellation) -> Self {
        Self { kind, centers: tessellation.centers(), half_width: tessellation.width() / 2.0 }
    }

    /// Loss against arbitrary output centers; `ZeroOne` uses half the
    /// smallest center spacing as the cell half-width.
    pub fn from_centers(kind: LossKind, centers: Vec<f64>) -> Self {
        let half_width = centers
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / 2.0)
            .fold(f64::INFINITY, f64::min);
        let half_width = if half_width.is_finite() { half_width } else { f64::INFINITY };
        Self { kind, centers, half_width }
    }

    pub fn n_out(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, cell: usize) -> f64 {
        self.centers[cell]
    }

    pub fn eval(&self, x: f64, cell: usize) -> f64 {
        let e = x - self.centers[cell];
        match self.kind {
            LossKind::Squared => e * e,
            LossKind::Absolute => e.abs(),
            LossKind::ZeroOne => {
                if e.abs() <= self.half_width {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// `table[i][j] = l_d(x_(i), center_j)` over state-grid centers.
    pub fn table(&self, x_centers: &[f64]) -> Vec<Vec<f64>> {
        x_centers
            .iter()
            .map(|&x| (0..self.centers.len()).map(|j| self.eval(x, j)).collect())
            .collect()
    }
}
