//! Feature matrices, clinical records, survival labels and split plans.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.0;

/// Converts a survival threshold in years to whole days.
pub fn years_to_days(years: f64) -> u32 {
    (years * DAYS_PER_YEAR).round() as u32
}

/// Samples × features matrix for a single data modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMatrix {
    pub modality_name: String,
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

impl ModalityMatrix {
    pub fn new(
        modality_name: impl Into<String>,
        sample_ids: Vec<String>,
        feature_ids: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if values.nrows() != sample_ids.len() || values.ncols() != feature_ids.len() {
            return Err(Error::Integrity(format!(
                "matrix shape {}x{} does not match {} sample ids and {} feature ids",
                values.nrows(),
                values.ncols(),
                sample_ids.len(),
                feature_ids.len()
            )));
        }
        if let Some(dup) = first_duplicate(&sample_ids) {
            return Err(Error::Integrity(format!("duplicate sample id {dup:?}")));
        }
        if let Some(dup) = first_duplicate(&feature_ids) {
            return Err(Error::Integrity(format!("duplicate feature id {dup:?}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity("non-finite value in feature matrix".into()));
        }
        Ok(Self {
            modality_name: modality_name.into(),
            sample_ids,
            feature_ids,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Returns a copy with rows reordered to follow `ids`.
    pub fn reorder_rows(&self, ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Integrity(format!(
                        "sample {id:?} missing from modality {:?}",
                        self.modality_name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self.values.select_rows(rows.iter());
        Ok(Self {
            modality_name: self.modality_name.clone(),
            sample_ids: ids.to_vec(),
            feature_ids: self.feature_ids.clone(),
            values,
        })
    }

    /// Writes the matrix in the comma-separated exchange format.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = Vec::with_capacity(self.n_features() + 1);
        header.push("sample_id".to_string());
        header.extend(self.feature_ids.iter().cloned());
        out.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (i, id) in self.sample_ids.iter().enumerate() {
            let mut row = Vec::with_capacity(self.n_features() + 1);
            row.push(id.clone());
            row.extend(self.values.row(i).iter().map(|v| v.to_string()));
            out.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.iter().find(|id| !seen.insert(id.as_str())).map(|s| s.as_str())
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Format {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn open(path: &Path) -> Result<impl Read> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads a feature matrix: header `sample_id,<feature ids...>`, one row per
/// sample, no missing cells.
pub fn load_feature_matrix(path: &Path, modality_name: &str) -> Result<ModalityMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 1,
            message: "header needs a sample id column and at least one feature".into(),
        });
    }
    let feature_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n_features = feature_ids.len();

    let mut sample_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != n_features + 1 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "expected {} values, found {}",
                    n_features,
                    record.len().saturating_sub(1)
                ),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Integrity(format!(
                "{}: line {line}: duplicate sample id {id:?}",
                path.display()
            )));
        }
        for cell in record.iter().skip(1) {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                value: cell.to_string(),
                expected: "a real number",
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    value: cell.to_string(),
                    expected: "a finite real number",
                });
            }
            data.push(value);
        }
        sample_ids.push(id);
    }
    let values = DMatrix::from_row_slice(sample_ids.len(), n_features, &data);
    ModalityMatrix::new(modality_name, sample_ids, feature_ids, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitalStatus {
    Deceased,
    Alive,
}

/// One patient's survival record. Days are counted from diagnosis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinicalRecord {
    pub sample_id: String,
    pub status: SurvivalStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvivalStatus {
    Deceased { survival_days: u32 },
    Alive { last_followup_days: u32 },
}

impl ClinicalRecord {
    pub fn deceased(sample_id: impl Into<String>, survival_days: u32) -> Self {
        Self {
            sample_id: sample_id.into(),
            status: SurvivalStatus::Deceased { survival_days },
        }
    }

    pub fn alive(sample_id: impl Into<String>, last_followup_days: u32) -> Self {
        Self {
            sample_id: sample_id.into(),
            status: SurvivalStatus::Alive { last_followup_days },
        }
    }

    pub fn vital_status(&self) -> VitalStatus {
        match self.status {
            SurvivalStatus::Deceased { .. } => VitalStatus::Deceased,
            SurvivalStatus::Alive { .. } => VitalStatus::Alive,
        }
    }
}

/// Reads clinical records with header
/// `sample_id,vital_status,survival_days,last_followup_days`.
pub fn load_clinical(path: &Path) -> Result<Vec<ClinicalRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = ["sample_id", "vital_status", "survival_days", "last_followup_days"];
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }

    let parse_days = |cell: &str, line: u64| -> Result<Option<u32>> {
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse().map(Some).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            value: cell.to_string(),
            expected: "a non-negative integer day count",
        })
    };

    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let survival = parse_days(&record[2], line)?;
        let followup = parse_days(&record[3], line)?;
        let status = match (record[1].to_ascii_lowercase().as_str(), survival, followup) {
            ("deceased" | "dead", Some(days), None) => SurvivalStatus::Deceased {
                survival_days: days,
            },
            ("alive" | "living", None, Some(days)) => SurvivalStatus::Alive {
                last_followup_days: days,
            },
            ("deceased" | "dead" | "alive" | "living", _, _) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line,
                    message: "exactly one of survival_days (deceased) or last_followup_days (alive) must be set".into(),
                })
            }
            (other, _, _) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    value: other.to_string(),
                    expected: "a vital status (deceased or alive)",
                })
            }
        };
        records.push(ClinicalRecord {
            sample_id: record[0].to_string(),
            status,
        });
    }
    Ok(records)
}

pub fn write_clinical(path: &Path, records: &[ClinicalRecord]) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    out.write_record(["sample_id", "vital_status", "survival_days", "last_followup_days"])
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        let (status, survival, followup) = match r.status {
            SurvivalStatus::Deceased { survival_days } => {
                ("deceased", survival_days.to_string(), String::new())
            }
            SurvivalStatus::Alive { last_followup_days } => {
                ("alive", String::new(), last_followup_days.to_string())
            }
        };
        out.write_record([r.sample_id.as_str(), status, &survival, &followup])
            .map_err(|e| csv_error(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

impl Label {
    /// `+1` / `-1` for labeled samples.
    pub fn sign(self) -> Option<f64> {
        match self {
            Label::Positive => Some(1.0),
            Label::Negative => Some(-1.0),
            Label::Unlabeled => None,
        }
    }
}

/// Per-sample ternary labels, in clinical record order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub labels: Vec<(String, Label)>,
    pub threshold_days: u32,
}

impl LabelAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<Label> {
        self.labels
            .iter()
            .find(|(id, _)| id == sample_id)
            .map(|(_, l)| *l)
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|(_, l)| *l == label).count()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.labels.iter().map(|(id, _)| id.clone()).collect()
    }
}

/// Thresholds survival into positive (lived at least `threshold_days`),
/// negative (died earlier) and unlabeled (censored before the threshold).
pub fn derive_labels(records: &[ClinicalRecord], threshold_days: u32) -> Result<LabelAssignment> {
    if records.is_empty() {
        return Err(Error::Contract("no clinical records".into()));
    }
    if threshold_days == 0 {
        return Err(Error::Config("survival threshold must be positive".into()));
    }
    let mut seen = HashSet::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(Error::Integrity(format!(
                "duplicate clinical sample id {:?}",
                r.sample_id
            )));
        }
        let label = match r.status {
            SurvivalStatus::Deceased { survival_days } if survival_days < threshold_days => {
                Label::Negative
            }
            SurvivalStatus::Deceased { .. } => Label::Positive,
            SurvivalStatus::Alive { last_followup_days } if last_followup_days >= threshold_days => {
                Label::Positive
            }
            SurvivalStatus::Alive { .. } => Label::Unlabeled,
        };
        labels.push((r.sample_id.clone(), label));
    }
    Ok(LabelAssignment {
        labels,
        threshold_days,
    })
}

/// Validation holdout plus cross-validation folds over the labeled samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub validation_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
    pub unlabeled_ids: Vec<String>,
}

impl SplitPlan {
    /// Labeled ids from every fold except `held_out`.
    pub fn training_ids(&self, held_out: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_out)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Class-stratified validation holdout and fold assignment, deterministic in
/// `seed`.
pub fn make_split(
    assignment: &LabelAssignment,
    seed: u64,
    validation_fraction: f64,
    n_folds: usize,
) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {validation_fraction} must lie in [0, 1)"
        )));
    }
    if n_folds < 2 {
        return Err(Error::Config("at least two folds are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut classes: Vec<Vec<String>> = [Label::Positive, Label::Negative]
        .iter()
        .map(|&c| {
            assignment
                .labels
                .iter()
                .filter(|(_, l)| *l == c)
                .map(|(id, _)| id.clone())
                .collect()
        })
        .collect();
    for class in &mut classes {
        class.shuffle(&mut rng);
    }

    let labeled: usize = classes.iter().map(Vec::len).sum();
    let n_validation = (validation_fraction * labeled as f64).round() as usize;
    let quotas = largest_remainder(
        &classes.iter().map(Vec::len).collect::<Vec<_>>(),
        n_validation,
    );

    let mut validation_ids = Vec::with_capacity(n_validation);
    let mut pool = Vec::with_capacity(labeled - n_validation);
    for (class, quota) in classes.iter().zip(&quotas) {
        if class.len() - quota < n_folds {
            return Err(Error::Config(format!(
                "a class has {} labeled samples after the validation holdout; {} folds need at least {}",
                class.len() - quota,
                n_folds,
                n_folds
            )));
        }
        validation_ids.extend(class[..*quota].iter().cloned());
        pool.extend(class[*quota..].iter().cloned());
    }

    // Dealing the class-ordered pool round-robin keeps both the fold sizes
    // and the per-class counts within one of each other.
    let mut folds = vec![Vec::new(); n_folds];
    for (i, id) in pool.into_iter().enumerate() {
        folds[i % n_folds].push(id);
    }

    let unlabeled_ids = assignment
        .labels
        .iter()
        .filter(|(_, l)| *l == Label::Unlabeled)
        .map(|(id, _)| id.clone())
        .collect();

    Ok(SplitPlan {
        seed,
        validation_ids,
        folds,
        unlabeled_ids,
    })
}

/// Splits `total` proportionally to `sizes`, rounding by largest remainder
/// (ties to the earlier entry).
fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * total as f64 / sum as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut remaining = total - quotas.iter().sum::<usize>();
    for &i in order.iter().cycle().take(sizes.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}
