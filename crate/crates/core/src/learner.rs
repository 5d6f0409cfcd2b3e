//! Supervised SVM and Laplacian SVM in representer form.
//!
//! Both learners minimize
//!
//! ```text
//! (1/l) Σ_labeled max(0, 1 − y_i f(x_i)) + γ_A ‖f‖²_K + γ_I fᵀ L f
//! ```
//!
//! over `f(x) = Σ_i α_i K(x_i, x) + b` with anchors at every training point
//! (labeled first, then unlabeled). Plain SVM is the `γ_I = 0`, `u = 0`
//! case. With `M = 2γ_A I + 2γ_I L K` and `J` selecting the labeled anchors,
//! the dual is a box QP in `β ∈ [0, 1/l]^l` with
//! `Q = Y J K M⁻¹ Jᵀ Y`, and the expansion is recovered as
//! `α = M⁻¹ Jᵀ Y β`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphLaplacian;
use crate::kernel::{gram, KernelSpec};
use crate::qp::{self, QpSolution, SolverOptions};

const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    /// Training points, labeled rows first.
    pub anchors: DMatrix<f64>,
    pub alphas: DVector<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub gamma_ambient: f64,
    pub gamma_intrinsic: f64,
    pub n_labeled: usize,
    /// Primal objective at the returned solution.
    pub objective: f64,
    pub kkt_residual: f64,
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn decision_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Contract(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.len()
            )));
        }
        let mut score = self.bias;
        let mut anchor = vec![0.0; self.dim()];
        for (i, alpha) in self.alphas.iter().enumerate() {
            if *alpha == 0.0 {
                continue;
            }
            for (k, a) in anchor.iter_mut().enumerate() {
                *a = self.anchors[(i, k)];
            }
            score += alpha * self.kernel.eval(&anchor, x);
        }
        Ok(score)
    }

    /// Scores every row of `points`.
    pub fn decision_scores(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        let k = gram(points, &self.anchors, &self.kernel)?;
        Ok(k * &self.alphas + DVector::from_element(points.nrows(), self.bias))
    }

    pub fn predict(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .decision_scores(points)?
            .iter()
            .map(|&s| if s >= 0.0 { 1.0 } else { -1.0 })
            .collect())
    }

    /// Primal weight vector `Σ α_i x_i`; linear kernels only.
    pub fn linear_weights(&self) -> Option<DVector<f64>> {
        match self.kernel {
            KernelSpec::Linear => Some(self.anchors.transpose() * &self.alphas),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Hinge loss + ambient + intrinsic penalty for a fitted expansion.
/// `kernel_matrix` is the anchor Gram matrix; the first `labels.len()`
/// anchors are the labeled ones.
pub fn primal_objective(
    kernel_matrix: &DMatrix<f64>,
    alphas: &DVector<f64>,
    bias: f64,
    labels: &[f64],
    gamma_ambient: f64,
    gamma_intrinsic: f64,
    laplacian: Option<&GraphLaplacian>,
) -> f64 {
    let f = kernel_matrix * alphas;
    let l = labels.len();
    let hinge: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (1.0 - y * (f[i] + bias)).max(0.0))
        .sum::<f64>()
        / l as f64;
    let ambient = gamma_ambient * alphas.dot(&f);
    let intrinsic = match laplacian {
        Some(lap) if gamma_intrinsic > 0.0 => gamma_intrinsic * lap.quadratic_form(&f),
        _ => 0.0,
    };
    hinge + ambient + intrinsic
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapSvm {
    pub kernel: KernelSpec,
    pub gamma_ambient: f64,
    pub gamma_intrinsic: f64,
    pub solver: SolverOptions,
}

impl LapSvm {
    pub fn new(kernel: KernelSpec, gamma_ambient: f64, gamma_intrinsic: f64) -> Self {
        Self {
            kernel,
            gamma_ambient,
            gamma_intrinsic,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Self {
        self.solver = solver;
        self
    }

    /// Fits on labeled rows plus optional unlabeled rows. A Laplacian is
    /// required whenever `γ_I > 0` and must span all `l + u` points.
    pub fn fit(
        &self,
        labeled: &DMatrix<f64>,
        labels: &[f64],
        unlabeled: Option<&DMatrix<f64>>,
        laplacian: Option<&GraphLaplacian>,
    ) -> Result<TrainedModel> {
        self.kernel.validate()?;
        let l = labeled.nrows();
        if labels.len() != l {
            return Err(Error::Contract(format!("{} labels for {l} rows", labels.len())));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Contract("labels must be ±1".into()));
        }
        if !labels.contains(&1.0) || !labels.contains(&-1.0) {
            return Err(Error::Contract("training labels contain a single class".into()));
        }
        if !(self.gamma_ambient > 0.0 && self.gamma_ambient.is_finite()) {
            return Err(Error::Config(format!(
                "gamma_ambient must be positive, got {}",
                self.gamma_ambient
            )));
        }
        if !(self.gamma_intrinsic >= 0.0 && self.gamma_intrinsic.is_finite()) {
            return Err(Error::Config(format!(
                "gamma_intrinsic must be non-negative, got {}",
                self.gamma_intrinsic
            )));
        }

        let anchors = match unlabeled {
            Some(u) if u.nrows() > 0 => {
                if u.ncols() != labeled.ncols() {
                    return Err(Error::Contract("labeled and unlabeled feature counts differ".into()));
                }
                let mut a = DMatrix::zeros(l + u.nrows(), labeled.ncols());
                a.rows_mut(0, l).copy_from(labeled);
                a.rows_mut(l, u.nrows()).copy_from(u);
                a
            }
            _ => labeled.clone(),
        };
        let n = anchors.nrows();
        if let Some(lap) = laplacian {
            if lap.n() != n {
                return Err(Error::Contract(format!(
                    "Laplacian has {} nodes but there are {n} training points",
                    lap.n()
                )));
            }
        } else if self.gamma_intrinsic > 0.0 {
            return Err(Error::Contract("gamma_intrinsic > 0 requires a Laplacian".into()));
        }

        let k = gram(&anchors, &anchors, &self.kernel)?;
        let use_graph = self.gamma_intrinsic > 0.0 && laplacian.is_some();

        // expansion = coefficient map from β to α (n × l).
        let expansion = if use_graph {
            let lap = laplacian.unwrap();
            let mut m = lap.mul_dense(&k) * (2.0 * self.gamma_intrinsic);
            for i in 0..n {
                m[(i, i)] += 2.0 * self.gamma_ambient;
            }
            let rhs = DMatrix::from_fn(n, l, |i, j| if i == j { labels[j] } else { 0.0 });
            solve_dense(m, &rhs)?
        } else {
            DMatrix::from_fn(n, l, |i, j| {
                if i == j {
                    labels[j] / (2.0 * self.gamma_ambient)
                } else {
                    0.0
                }
            })
        };

        let k_labeled = k.rows(0, l).into_owned();
        let projected = &k_labeled * &expansion;
        let mut q = DMatrix::from_fn(l, l, |i, j| labels[i] * projected[(i, j)]);
        q = (&q + q.transpose()) * 0.5;

        let upper = 1.0 / l as f64;
        let QpSolution {
            betas, kkt_residual, ..
        } = qp::solve(&q, labels, upper, &self.solver)?;

        let alphas = &expansion * &betas;
        let g = &k_labeled * &alphas;
        let bias = bias_from_kkt(&betas, labels, upper, &g);

        let objective = primal_objective(
            &k,
            &alphas,
            bias,
            labels,
            self.gamma_ambient,
            self.gamma_intrinsic,
            laplacian,
        );

        Ok(TrainedModel {
            anchors,
            alphas,
            bias,
            kernel: self.kernel,
            gamma_ambient: self.gamma_ambient,
            gamma_intrinsic: self.gamma_intrinsic,
            n_labeled: l,
            objective,
            kkt_residual,
        })
    }
}

/// Mean of `y_i − g_i` over unbounded support vectors; otherwise the midpoint
/// of the interval the KKT conditions allow.
fn bias_from_kkt(betas: &DVector<f64>, labels: &[f64], upper: f64, g: &DVector<f64>) -> f64 {
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (i, &y) in labels.iter().enumerate() {
        let b = betas[i];
        let target = y - g[i];
        if b > 0.0 && b < upper {
            free_sum += target;
            free += 1;
        } else if (b == 0.0) == (y > 0.0) {
            // y f ≥ 1 with y = +1, or y f ≤ 1 at the bound with y = −1.
            lo = lo.max(target);
        } else {
            hi = hi.min(target);
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}

/// Solves `m x = rhs` by LU, retrying once with diagonal jitter.
fn solve_dense(m: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if let Some(x) = m.clone().lu().solve(rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(1.0, f64::max);
    let mut jittered = m;
    for i in 0..n {
        jittered[(i, i)] += JITTER * scale;
    }
    jittered
        .lu()
        .solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(format!("{n}x{n} expansion system")))
}

/// Supervised SVM on labeled data.
pub fn train_svm(
    features: &DMatrix<f64>,
    labels: &[f64],
    kernel: KernelSpec,
    gamma_ambient: f64,
) -> Result<TrainedModel> {
    LapSvm::new(kernel, gamma_ambient, 0.0).fit(features, labels, None, None)
}

/// Laplacian SVM over labeled plus unlabeled points.
pub fn train_lapsvm(
    labeled: &DMatrix<f64>,
    labels: &[f64],
    unlabeled: &DMatrix<f64>,
    kernel: KernelSpec,
    gamma_ambient: f64,
    gamma_intrinsic: f64,
    laplacian: &GraphLaplacian,
) -> Result<TrainedModel> {
    LapSvm::new(kernel, gamma_ambient, gamma_intrinsic).fit(labeled, labels, Some(unlabeled), Some(laplacian))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, laplacian, GraphConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64, n: usize, gap: f64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let centre = if j == 0 { y[i] * gap } else { 0.0 };
            centre + rng.random_range(-0.5..0.5)
        });
        (x, y)
    }

    fn hinge_oracle(model: &TrainedModel, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            total += (1.0 - yi * model.decision_score(&row).unwrap()).max(0.0);
        }
        total / y.len() as f64
    }

    #[test]
    fn separable_blobs_fit_exactly() {
        let (x, y) = blobs(1, 40, 2.0);
        let model = train_svm(&x, &y, KernelSpec::Linear, 1e-3).unwrap();
        assert_eq!(model.predict(&x).unwrap(), y);
        assert!(model.kkt_residual <= 1e-6);
    }

    #[test]
    fn objective_matches_independent_recomputation() {
        let (x, y) = blobs(2, 30, 0.4);
        let model = train_svm(&x, &y, KernelSpec::Rbf { gamma: 0.5 }, 0.01).unwrap();
        let mut norm = 0.0;
        for i in 0..30 {
            for j in 0..30 {
                let d2: f64 = (0..2).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
                norm += model.alphas[i] * model.alphas[j] * (-0.5 * d2).exp();
            }
        }
        let oracle = hinge_oracle(&model, &x, &y) + 0.01 * norm;
        assert!((oracle - model.objective).abs() <= 1e-8 * oracle.max(1.0), "{oracle} vs {}", model.objective);
    }

    #[test]
    fn zero_intrinsic_weight_leaves_unlabeled_coefficients_zero() {
        let (x, y) = blobs(3, 10, 1.0);
        let (u, _) = blobs(4, 20, 1.0);
        let mut all = DMatrix::zeros(30, 2);
        all.rows_mut(0, 10).copy_from(&x);
        all.rows_mut(10, 20).copy_from(&u);
        let lap = laplacian(&build_graph(&all, &GraphConfig::default()).unwrap());
        let model = train_lapsvm(&x, &y, &u, KernelSpec::Linear, 0.1, 0.0, &lap).unwrap();
        assert!(model.alphas.rows(10, 20).iter().all(|&a| a == 0.0));
        let plain = train_svm(&x, &y, KernelSpec::Linear, 0.1).unwrap();
        let (a, b) = (model.decision_scores(&u).unwrap(), plain.decision_scores(&u).unwrap());
        assert!((a - b).amax() <= 1e-9);
    }

    #[test]
    fn graph_term_spreads_weight_to_unlabeled_points() {
        let (x, y) = blobs(5, 6, 1.0);
        let (u, _) = blobs(6, 24, 1.0);
        let mut all = DMatrix::zeros(30, 2);
        all.rows_mut(0, 6).copy_from(&x);
        all.rows_mut(6, 24).copy_from(&u);
        let lap = laplacian(&build_graph(&all, &GraphConfig::default()).unwrap());
        let model = train_lapsvm(&x, &y, &u, KernelSpec::Rbf { gamma: 1.0 }, 0.01, 1.0, &lap).unwrap();
        assert!(model.alphas.rows(6, 24).iter().any(|a| a.abs() > 1e-9));
        assert!(model.kkt_residual <= 1e-6);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let (x, y) = blobs(7, 8, 1.0);
        assert!(matches!(train_svm(&x, &[1.0; 8], KernelSpec::Linear, 0.1), Err(Error::Contract(_))));
        assert!(matches!(train_svm(&x, &y, KernelSpec::Linear, 0.0), Err(Error::Config(_))));
        let err = LapSvm::new(KernelSpec::Linear, 0.1, 1.0).fit(&x, &y, None, None);
        assert!(matches!(err, Err(Error::Contract(_))));
        let wrong = GraphLaplacian::empty(3);
        let err = LapSvm::new(KernelSpec::Linear, 0.1, 1.0).fit(&x, &y, None, Some(&wrong));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let (x, y) = blobs(8, 12, 1.0);
        let model = train_svm(&x, &y, KernelSpec::Polynomial { degree: 2, offset: 1.0 }, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert_eq!(TrainedModel::load(&path).unwrap(), model);
        assert!(model.decision_score(&[1.0]).is_err());
    }
}
