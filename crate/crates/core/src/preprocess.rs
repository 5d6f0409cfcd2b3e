//! Per-feature z-scoring and three-level discretization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Column statistics fitted on training rows, reusable on held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; `1.0` for constant columns.
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(values: &DMatrix<f64>) -> Self {
        let n = values.nrows() as f64;
        let mut means = Vec::with_capacity(values.ncols());
        let mut stds = Vec::with_capacity(values.ncols());
        let mut constant = Vec::with_capacity(values.ncols());
        for col in values.column_iter() {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            // Relative test: a column of identical values can still pick up
            // rounding noise in the mean.
            let is_constant = !(std > 1e-12 * mean.abs().max(1.0)) || col.iter().all(|&x| x == col[0]);
            means.push(mean);
            stds.push(if is_constant { 1.0 } else { std });
            constant.push(is_constant);
        }
        Self {
            means,
            stds,
            constant,
        }
    }

    /// Fits on the selected rows only.
    pub fn fit_rows(values: &DMatrix<f64>, rows: &[usize]) -> Self {
        Self::fit(&values.select_rows(rows.iter()))
    }

    pub fn transform(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(values.ncols(), self.means.len(), "column count mismatch");
        let mut out = values.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                let (m, s) = (self.means[j], self.stds[j]);
                col.apply(|x| *x = (*x - m) / s);
            }
        }
        out
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.constant[j] {
                    0.0
                } else {
                    (v - self.means[j]) / self.stds[j]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    pub values: DMatrix<f64>,
    pub standardizer: Standardizer,
}

impl StandardizedMatrix {
    pub fn feature_means(&self) -> &[f64] {
        &self.standardizer.means
    }

    pub fn feature_stds(&self) -> &[f64] {
        &self.standardizer.stds
    }

    pub fn constant_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.standardizer
            .constant
            .iter()
            .enumerate()
            .filter(|(_, c)| **c)
            .map(|(j, _)| j)
    }
}

/// Column-wise z-score with population standard deviation. Constant columns
/// become all zeros and are flagged.
pub fn zscore(values: &DMatrix<f64>) -> StandardizedMatrix {
    let standardizer = Standardizer::fit(values);
    StandardizedMatrix {
        values: standardizer.transform(values),
        standardizer,
    }
}

/// Level matrix with entries in `{0, 1, 2}`, stored column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteMatrix {
    nrows: usize,
    ncols: usize,
    levels: Vec<u8>,
}

impl DiscreteMatrix {
    pub fn from_columns(nrows: usize, columns: Vec<Vec<u8>>) -> Self {
        let ncols = columns.len();
        let mut levels = Vec::with_capacity(nrows * ncols);
        for c in columns {
            assert_eq!(c.len(), nrows, "ragged columns");
            levels.extend(c);
        }
        Self {
            nrows,
            ncols,
            levels,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.levels[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.levels[j * self.nrows + i]
    }

    /// Keeps only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let columns = (0..self.ncols)
            .map(|j| {
                let col = self.column(j);
                rows.iter().map(|&i| col[i]).collect()
            })
            .collect();
        Self::from_columns(rows.len(), columns)
    }
}

pub fn discretize_value(z: f64, cutoff: f64) -> u8 {
    if z <= -cutoff {
        0
    } else if z >= cutoff {
        2
    } else {
        1
    }
}

/// Maps z-scores to 0 (`z <= -cutoff`), 1 (strictly inside) or 2
/// (`z >= cutoff`).
pub fn discretize(values: &DMatrix<f64>, cutoff: f64) -> DiscreteMatrix {
    assert!(cutoff > 0.0, "cutoff must be positive");
    let columns = values
        .column_iter()
        .map(|col| col.iter().map(|&z| discretize_value(z, cutoff)).collect())
        .collect();
    DiscreteMatrix::from_columns(values.nrows(), columns)
}
