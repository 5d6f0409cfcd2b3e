use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mercer kernel used in the representer expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    /// `(x·z + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `exp(-gamma ‖x − z‖²)`
    Rbf { gamma: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Polynomial {
            degree: 3,
            offset: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    Err(Error::Config("polynomial degree must be positive".into()))
                } else if !offset.is_finite() {
                    Err(Error::Config("polynomial offset must be finite".into()))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Rbf { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("rbf gamma must be positive, got {gamma}")))
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), z.len());
        match *self {
            KernelSpec::Linear => dot(x, z),
            KernelSpec::Polynomial { degree, offset } => (dot(x, z) + offset).powi(degree as i32),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Contract(format!(
            "kernel inputs have {} and {} features",
            a.ncols(),
            b.ncols()
        )));
    }
    let inner = a * b.transpose();
    Ok(match *spec {
        KernelSpec::Linear => inner,
        KernelSpec::Polynomial { degree, offset } => inner.map(|v| (v + offset).powi(degree as i32)),
        KernelSpec::Rbf { gamma } => {
            let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
            let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
            DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                let d2 = (na[i] + nb[j] - 2.0 * inner[(i, j)]).max(0.0);
                (-gamma * d2).exp()
            })
        }
    })
}
