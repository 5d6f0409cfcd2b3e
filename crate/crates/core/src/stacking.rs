//! Stacked generalization across modalities.
//!
//! Layer-one sub-models produce one decision score per modality. Scores are
//! z-scored per modality so no modality dominates through its range, and a
//! linear-kernel SVM is trained on the normalized scores. Meta-training
//! scores are always out-of-fold.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::learner::{LapSvm, TrainedModel};
use crate::qp::SolverOptions;

/// Anything producing a real-valued decision score for one sample of one
/// modality.
pub trait SubModel {
    fn score(&self, x: &[f64]) -> Result<f64>;
}

impl SubModel for TrainedModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.decision_score(x)
    }
}

impl<T: SubModel + ?Sized> SubModel for &T {
    fn score(&self, x: &[f64]) -> Result<f64> {
        (**self).score(x)
    }
}

/// Samples × modalities matrix of layer-one scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub values: DMatrix<f64>,
    pub modality_names: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(values: DMatrix<f64>, modality_names: Vec<String>) -> Result<Self> {
        if values.ncols() != modality_names.len() {
            return Err(Error::Contract(format!(
                "{} score columns for {} modalities",
                values.ncols(),
                modality_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite sub-model score".into()));
        }
        Ok(Self {
            values,
            modality_names,
        })
    }
}

/// A sub-model trained with one fold held out, plus the rows it saw.
#[derive(Debug, Clone)]
pub struct FoldModel<M> {
    pub held_out_fold: usize,
    pub trained_rows: Vec<usize>,
    pub model: M,
}

/// Out-of-fold meta-training scores.
#[derive(Debug, Clone, PartialEq)]
pub struct OofScores {
    /// Data row of each score row (folds concatenated in order).
    pub rows: Vec<usize>,
    pub fold_of: Vec<usize>,
    pub scores: ScoreMatrix,
}

/// Scores every row of every fold with the model of its own modality that
/// held that fold out.
///
/// `fold_models[m]` lists the fold models of modality `m`; `features[m]` has
/// one row per data sample.
pub fn collect_oof_scores<M: SubModel>(
    fold_models: &[Vec<FoldModel<M>>],
    folds: &[Vec<usize>],
    features: &[&DMatrix<f64>],
    modality_names: &[String],
) -> Result<OofScores> {
    if fold_models.len() != features.len() || features.len() != modality_names.len() {
        return Err(Error::Contract(
            "fold models, feature matrices and modality names disagree in count".into(),
        ));
    }
    let rows: Vec<usize> = folds.iter().flatten().copied().collect();
    let fold_of: Vec<usize> = folds
        .iter()
        .enumerate()
        .flat_map(|(f, rows)| std::iter::repeat_n(f, rows.len()))
        .collect();
    let mut values = DMatrix::zeros(rows.len(), features.len());
    for (m, (models, data)) in fold_models.iter().zip(features).enumerate() {
        for (fold, fold_rows) in folds.iter().enumerate() {
            let fm = models
                .iter()
                .find(|fm| fm.held_out_fold == fold)
                .ok_or_else(|| {
                    Error::Contract(format!(
                        "modality {:?} has no model holding out fold {fold}",
                        modality_names[m]
                    ))
                })?;
            for &row in fold_rows {
                if fm.trained_rows.contains(&row) {
                    return Err(Error::Contract(format!(
                        "row {row} would be scored by a model trained on it"
                    )));
                }
            }
        }
        for (r, (&row, &fold)) in rows.iter().zip(&fold_of).enumerate() {
            let fm = models.iter().find(|fm| fm.held_out_fold == fold).unwrap();
            let x: Vec<f64> = data.row(row).iter().copied().collect();
            values[(r, m)] = fm.model.score(&x)?;
        }
    }
    Ok(OofScores {
        rows,
        fold_of,
        scores: ScoreMatrix::new(values, modality_names.to_vec())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub mean: f64,
    pub std: f64,
    /// Constant column; normalizes to 0.
    pub degenerate: bool,
}

impl ScoreNormalizer {
    pub fn apply(&self, s: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (s - self.mean) / self.std
        }
    }
}

/// Population mean and std per column.
pub fn fit_normalizers(scores: &ScoreMatrix) -> Vec<ScoreNormalizer> {
    let n = scores.values.nrows() as f64;
    scores
        .values
        .column_iter()
        .map(|col| {
            let mean = col.sum() / n;
            let std = (col.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
            let degenerate = !(std > 1e-12 * mean.abs().max(1.0));
            ScoreNormalizer {
                mean,
                std: if degenerate { 1.0 } else { std },
                degenerate,
            }
        })
        .collect()
}

/// Normalizes with the given normalizers, fitting them first when `None`.
pub fn normalize_scores(
    scores: &ScoreMatrix,
    normalizers: Option<&[ScoreNormalizer]>,
) -> Result<(ScoreMatrix, Vec<ScoreNormalizer>)> {
    let normalizers = match normalizers {
        Some(n) => n.to_vec(),
        None => fit_normalizers(scores),
    };
    if normalizers.len() != scores.values.ncols() {
        return Err(Error::Contract(format!(
            "{} normalizers for {} score columns",
            normalizers.len(),
            scores.values.ncols()
        )));
    }
    let mut values = scores.values.clone();
    for (j, mut col) in values.column_iter_mut().enumerate() {
        col.apply(|s| *s = normalizers[j].apply(*s));
    }
    Ok((
        ScoreMatrix {
            values,
            modality_names: scores.modality_names.clone(),
        },
        normalizers,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub modality_names: Vec<String>,
    pub normalizers: Vec<ScoreNormalizer>,
    pub meta: TrainedModel,
}

pub fn train_stacker(
    oof_scores: &ScoreMatrix,
    labels: &[f64],
    gamma_ambient: f64,
    solver: &SolverOptions,
) -> Result<StackedModel> {
    let (normalized, normalizers) = normalize_scores(oof_scores, None)?;
    if normalizers.iter().all(|n| n.degenerate) {
        return Err(Error::Training(
            "every modality produced constant meta-training scores".into(),
        ));
    }
    let meta = LapSvm::new(KernelSpec::Linear, gamma_ambient, 0.0)
        .with_solver(*solver)
        .fit(&normalized.values, labels, None, None)?;
    Ok(StackedModel {
        modality_names: oof_scores.modality_names.clone(),
        normalizers,
        meta,
    })
}

impl StackedModel {
    /// Meta weight per modality, in normalized-score units.
    pub fn weights(&self) -> DVector<f64> {
        self.meta.linear_weights().expect("meta model uses a linear kernel")
    }

    /// Meta decision from raw layer-one scores.
    pub fn score_from_subscores(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.normalizers.len() {
            return Err(Error::Contract(format!(
                "{} sub-scores for {} modalities",
                raw.len(),
                self.normalizers.len()
            )));
        }
        let z: Vec<f64> = raw
            .iter()
            .zip(&self.normalizers)
            .map(|(s, n)| n.apply(*s))
            .collect();
        self.meta.decision_score(&z)
    }

    pub fn save(&self, path: &Path, sub_model_files: &[PathBuf]) -> Result<()> {
        let bundle = StackBundle {
            stack: self.clone(),
            sub_models: sub_model_files.to_vec(),
        };
        let json = serde_json::to_string(&bundle).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<PathBuf>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: StackBundle =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        Ok((bundle.stack, bundle.sub_models))
    }
}

#[derive(Serialize, Deserialize)]
struct StackBundle {
    stack: StackedModel,
    /// Sub-model files, one per modality in column order.
    sub_models: Vec<PathBuf>,
}

/// Scores `x` (one feature vector per modality) through the sub-models and
/// the meta model; the label is the sign of the score (0 maps to +1).
pub fn predict_stacked<M: SubModel>(
    model: &StackedModel,
    sub_models: &[M],
    x: &[Option<&[f64]>],
) -> Result<(f64, f64)> {
    if sub_models.len() != model.modality_names.len() || x.len() != model.modality_names.len() {
        return Err(Error::Contract(format!(
            "stack over {} modalities got {} sub-models and {} inputs",
            model.modality_names.len(),
            sub_models.len(),
            x.len()
        )));
    }
    let mut raw = Vec::with_capacity(x.len());
    for ((sub, xm), name) in sub_models.iter().zip(x).zip(&model.modality_names) {
        let xm = xm.ok_or_else(|| Error::Contract(format!("missing modality {name:?}")))?;
        raw.push(sub.score(xm)?);
    }
    let score = model.score_from_subscores(&raw)?;
    Ok((score, if score >= 0.0 { 1.0 } else { -1.0 }))
}
