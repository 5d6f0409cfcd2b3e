//! Repeated cross-validated experiments comparing supervised SVM, Laplacian
//! SVM, the labeled-only Laplacian SVM ablation, and their stacked
//! multi-modal combinations.
//!
//! Per repetition `r` (seed `base_seed + r`) the labeled samples are split
//! into a validation holdout and `n_folds` folds. Each fold serves once as
//! the test set; for every rotation and modality the pipeline
//! (standardize → discretize → mRMR → graph → learner) is grid-searched on
//! the remaining folds against the validation set, refit with the chosen
//! point and scored on the test fold. Test-fold labels are only read by
//! [`accuracy`].

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_split, LabelAssignment, ModalityMatrix};
use crate::error::{Error, Result};
use crate::graph::{build_graph, laplacian, GraphConfig, GraphLaplacian};
use crate::kernel::KernelSpec;
use crate::learner::{LapSvm, TrainedModel};
use crate::mrmr::mrmr_select;
use crate::preprocess::{discretize, Standardizer};
use crate::qp::SolverOptions;
use crate::stacking::{collect_oof_scores, predict_stacked, train_stacker, FoldModel, StackedModel, SubModel};
use crate::stats::{mean, std_dev, wilcoxon_signed_rank};

/// Share of failed repetitions above which a run is aborted.
pub const MAX_FAILED_FRACTION: f64 = 0.10;

pub const COMBINED: &str = "combined";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Svm,
    Lapsvm,
    LapsvmLabeledOnly,
    StackedSvm,
    StackedLapsvm,
}

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::Svm,
        MethodId::Lapsvm,
        MethodId::LapsvmLabeledOnly,
        MethodId::StackedSvm,
        MethodId::StackedLapsvm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Svm => "svm",
            MethodId::Lapsvm => "lapsvm",
            MethodId::LapsvmLabeledOnly => "lapsvm_labeled_only",
            MethodId::StackedSvm => "stacked_svm",
            MethodId::StackedLapsvm => "stacked_lapsvm",
        }
    }

    pub fn is_stacked(self) -> bool {
        matches!(self, MethodId::StackedSvm | MethodId::StackedLapsvm)
    }

    /// Layer-one learner of a stacked method; the method itself otherwise.
    pub fn base(self) -> MethodId {
        match self {
            MethodId::StackedSvm => MethodId::Svm,
            MethodId::StackedLapsvm => MethodId::Lapsvm,
            m => m,
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        self.base() == MethodId::Lapsvm
    }

    pub fn uses_graph(self) -> bool {
        matches!(self.base(), MethodId::Lapsvm | MethodId::LapsvmLabeledOnly)
    }

    /// Column of the accuracy table the method belongs to.
    pub fn setting(self) -> &'static str {
        match self.base() {
            MethodId::Svm => "supervised",
            _ => "semi-supervised",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub gamma_ambient: Vec<f64>,
    /// Values for the graph-based methods; the supervised SVM always uses 0.
    pub gamma_intrinsic: Vec<f64>,
    pub feature_counts: Vec<usize>,
    /// Heat-kernel bandwidths to search; empty keeps the graph default.
    pub bandwidths: Vec<f64>,
    /// Regularization values searched for the stacking meta-learner.
    pub meta_gamma_ambient: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            gamma_ambient: vec![1e-4, 1e-2, 1.0, 1e2],
            gamma_intrinsic: vec![1e-4, 1e-2, 1.0, 1e2],
            feature_counts: vec![50, 100, 200],
            bandwidths: Vec::new(),
            meta_gamma_ambient: vec![1e-4, 1e-2, 1.0, 1e2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub feature_count: usize,
    pub gamma_ambient: f64,
    pub gamma_intrinsic: f64,
    pub bandwidth: Option<f64>,
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("grid.{name} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("gamma_ambient", self.gamma_ambient.len())?;
        nonempty("gamma_intrinsic", self.gamma_intrinsic.len())?;
        nonempty("feature_counts", self.feature_counts.len())?;
        nonempty("meta_gamma_ambient", self.meta_gamma_ambient.len())?;
        if self.gamma_ambient.iter().chain(&self.meta_gamma_ambient).any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Config("gamma_ambient values must be positive".into()));
        }
        if self.gamma_intrinsic.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config("gamma_intrinsic values must be non-negative".into()));
        }
        if self.feature_counts.contains(&0) {
            return Err(Error::Config("feature_counts must be positive".into()));
        }
        if self.bandwidths.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("bandwidths must be positive".into()));
        }
        Ok(())
    }

    /// Grid points for `method`, ordered by the tie-break preference:
    /// feature count, then `γ_I`, then `γ_A`, then bandwidth.
    pub fn points(&self, method: MethodId) -> Vec<GridPoint> {
        let mut counts = self.feature_counts.clone();
        counts.sort_unstable();
        counts.dedup();
        let gamma_i: Vec<f64> = if method.uses_graph() {
            sorted_unique(&self.gamma_intrinsic)
        } else {
            vec![0.0]
        };
        let gamma_a = sorted_unique(&self.gamma_ambient);
        let bandwidths: Vec<Option<f64>> = if method.uses_graph() && !self.bandwidths.is_empty() {
            sorted_unique(&self.bandwidths).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let mut points = Vec::new();
        for &feature_count in &counts {
            for &gi in &gamma_i {
                for &ga in &gamma_a {
                    for &bw in &bandwidths {
                        points.push(GridPoint {
                            feature_count,
                            gamma_ambient: ga,
                            gamma_intrinsic: gi,
                            bandwidth: bw,
                        });
                    }
                }
            }
        }
        points
    }
}

fn sorted_unique(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridChoice {
    pub point: GridPoint,
    pub validation_accuracy: f64,
}

/// Picks the grid point with the highest validation accuracy. `points` must
/// already be in tie-break order; points asking for more features than
/// `available_features` are skipped with a warning.
pub fn grid_search<F>(points: &[GridPoint], available_features: usize, mut evaluate: F) -> Result<GridChoice>
where
    F: FnMut(&GridPoint) -> Result<f64>,
{
    if points.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut best: Option<GridChoice> = None;
    let mut skipped = 0;
    for point in points {
        if point.feature_count > available_features {
            skipped += 1;
            continue;
        }
        let acc = evaluate(point)?;
        if best.is_none_or(|b| acc > b.validation_accuracy) {
            best = Some(GridChoice {
                point: *point,
                validation_accuracy: acc,
            });
        }
    }
    if skipped > 0 {
        log::warn!(
            "skipped {skipped} grid point(s) requesting more than {available_features} features"
        );
    }
    best.ok_or_else(|| {
        Error::Config(format!(
            "every grid point requests more than the {available_features} available features"
        ))
    })
}

/// Fraction of matching ±1 labels.
pub fn accuracy(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Two-sided paired Wilcoxon signed-rank p-value.
pub fn paired_test(accuracies_a: &[f64], accuracies_b: &[f64]) -> Result<f64> {
    Ok(wilcoxon_signed_rank(accuracies_a, accuracies_b)?.p_value)
}

/// Stage settings shared by every fit in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub kernel: KernelSpec,
    pub graph: GraphConfig,
    pub relevance_weight: f64,
    pub discretize_cutoff: f64,
    pub solver: SolverOptions,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            graph: GraphConfig::default(),
            relevance_weight: 0.5,
            discretize_cutoff: 1.5,
            solver: SolverOptions::default(),
        }
    }
}

/// Standardization, feature subset and learner for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityPipeline {
    pub standardizer: Standardizer,
    pub selected: Vec<usize>,
    pub model: TrainedModel,
    /// Nodes in the training graph (0 for the supervised SVM).
    pub graph_nodes: usize,
}

impl ModalityPipeline {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.transform_row(x);
        self.selected.iter().map(|&j| z[j]).collect()
    }

    /// Decision scores of raw feature rows.
    pub fn score_rows(&self, data: &DMatrix<f64>, rows: &[usize]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let z = self.standardizer.transform(&data.select_rows(rows.iter()));
        let x = z.select_columns(self.selected.iter());
        Ok(self.model.decision_scores(&x)?.iter().copied().collect())
    }

    pub fn predict_rows(&self, data: &DMatrix<f64>, rows: &[usize]) -> Result<Vec<f64>> {
        Ok(self
            .score_rows(data, rows)?
            .into_iter()
            .map(|s| if s >= 0.0 { 1.0 } else { -1.0 })
            .collect())
    }
}

impl SubModel for ModalityPipeline {
    fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.standardizer.means.len() {
            return Err(Error::Contract(format!(
                "pipeline expects {} raw features, got {}",
                self.standardizer.means.len(),
                x.len()
            )));
        }
        self.model.decision_score(&self.project(x))
    }
}

/// Training material for one modality and one set of training rows, reused
/// across grid points.
pub struct PreparedTraining<'a> {
    settings: &'a PipelineSettings,
    method: MethodId,
    standardizer: Standardizer,
    /// mRMR order over the labeled training rows.
    pub ranking: Vec<usize>,
    /// Standardized features: labeled training rows first, then unlabeled.
    z: DMatrix<f64>,
    labels: Vec<f64>,
    n_labeled: usize,
    n_features: usize,
    graph_cache: HashMap<(usize, Option<u64>), GraphLaplacian>,
}

impl<'a> PreparedTraining<'a> {
    /// Preprocessing and the mRMR ranking use the labeled `train_rows` only;
    /// `unlabeled_rows` join the graph and the expansion for `lapsvm`.
    pub fn new(
        data: &DMatrix<f64>,
        train_rows: &[usize],
        labels: &[f64],
        unlabeled_rows: &[usize],
        method: MethodId,
        max_features: usize,
        settings: &'a PipelineSettings,
    ) -> Result<Self> {
        let unlabeled: &[usize] = if method.uses_unlabeled() { unlabeled_rows } else { &[] };
        let all_rows: Vec<usize> = train_rows.iter().chain(unlabeled).copied().collect();
        // Fitted on labeled rows only, so every method sees the same features.
        let standardizer = Standardizer::fit_rows(data, train_rows);
        let z = standardizer.transform(&data.select_rows(all_rows.iter()));
        let n_labeled = train_rows.len();
        let levels = discretize(&z.rows(0, n_labeled).into_owned(), settings.discretize_cutoff);
        let classes: Vec<u8> = labels.iter().map(|&y| u8::from(y > 0.0)).collect();
        let k = max_features.min(data.ncols());
        let ranking = mrmr_select(&levels, &classes, k, settings.relevance_weight)?.selected;
        Ok(Self {
            settings,
            method,
            standardizer,
            ranking,
            z,
            labels: labels.to_vec(),
            n_labeled,
            n_features: data.ncols(),
            graph_cache: HashMap::new(),
        })
    }

    pub fn available_features(&self) -> usize {
        self.ranking.len()
    }

    pub fn fit(&mut self, point: &GridPoint) -> Result<ModalityPipeline> {
        let k = point.feature_count;
        if k > self.ranking.len() {
            return Err(Error::Config(format!(
                "{k} features requested but only {} ranked",
                self.ranking.len()
            )));
        }
        debug_assert!(self.ranking.len() <= self.n_features);
        let selected = self.ranking[..k].to_vec();
        let x = self.z.select_columns(selected.iter());
        let l = self.n_labeled;
        let labeled = x.rows(0, l).into_owned();
        let unlabeled = x.rows(l, x.nrows() - l).into_owned();

        let learner = LapSvm::new(self.settings.kernel, point.gamma_ambient, point.gamma_intrinsic)
            .with_solver(self.settings.solver);
        let (model, graph_nodes) = match self.method.base() {
            MethodId::Svm => {
                let svm = LapSvm::new(self.settings.kernel, point.gamma_ambient, 0.0).with_solver(self.settings.solver);
                (svm.fit(&labeled, &self.labels, None, None)?, 0)
            }
            base => {
                let key = (k, point.bandwidth.map(f64::to_bits));
                if !self.graph_cache.contains_key(&key) {
                    let mut config = self.settings.graph;
                    if point.bandwidth.is_some() {
                        config.bandwidth = point.bandwidth;
                    }
                    let nodes = if base == MethodId::Lapsvm { &x } else { &labeled };
                    let lap = laplacian(&build_graph(nodes, &config)?);
                    self.graph_cache.insert(key, lap);
                }
                let lap = &self.graph_cache[&key];
                let unlabeled = (base == MethodId::Lapsvm).then_some(&unlabeled);
                (learner.fit(&labeled, &self.labels, unlabeled, Some(lap))?, lap.n())
            }
        };
        Ok(ModalityPipeline {
            standardizer: self.standardizer.clone(),
            selected,
            model,
            graph_nodes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub repetitions: usize,
    pub base_seed: u64,
    pub validation_fraction: f64,
    pub n_folds: usize,
    pub methods: Vec<MethodId>,
    pub grid: HyperGrid,
    pub settings: PipelineSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            repetitions: 100,
            base_seed: 0,
            validation_fraction: 0.15,
            n_folds: 5,
            methods: MethodId::ALL.to_vec(),
            grid: HyperGrid::default(),
            settings: PipelineSettings::default(),
        }
    }
}

/// Modalities aligned row-for-row with the label assignment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub modalities: Vec<ModalityMatrix>,
    pub assignment: LabelAssignment,
}

impl ExperimentData {
    /// Reorders every modality to the assignment's sample order.
    pub fn new(modalities: Vec<ModalityMatrix>, assignment: LabelAssignment) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        let ids = assignment.sample_ids();
        let modalities = modalities
            .iter()
            .map(|m| m.reorder_rows(&ids))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            modalities,
            assignment,
        })
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.modality_name.clone()).collect()
    }

    fn row_labels(&self) -> Vec<f64> {
        self.assignment
            .labels
            .iter()
            .map(|(_, l)| l.sign().unwrap_or(0.0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChosenParams {
    pub gamma_ambient: f64,
    pub gamma_intrinsic: Option<f64>,
    pub feature_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub repetition: usize,
    pub modality: String,
    pub method: MethodId,
    /// `None` when the repetition failed.
    pub accuracy: Option<f64>,
    pub chosen: Option<ChosenParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub modality: String,
    pub method: MethodId,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub modality: String,
    pub method_a: MethodId,
    pub method_b: MethodId,
    pub n: usize,
    /// `None` with fewer than six paired repetitions.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub repetitions: usize,
    pub cells: Vec<Cell>,
    pub failed_repetitions: Vec<usize>,
    pub summary: Vec<SummaryRow>,
    pub p_values: Vec<PValueRow>,
}

fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ExperimentReport {
    pub fn accuracies(&self, modality: &str, method: MethodId) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.modality == modality && c.method == method)
            .filter_map(|c| c.accuracy)
            .collect()
    }

    pub fn summary_for(&self, modality: &str, method: MethodId) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.modality == modality && r.method == method)
    }

    pub fn write_raw_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "repetition,modality,method,accuracy,chosen_gamma_a,chosen_gamma_i,chosen_k")?;
        for c in &self.cells {
            let accuracy = c.accuracy.map(|a| a.to_string()).unwrap_or_else(|| "NA".into());
            let (ga, gi, k) = match c.chosen {
                Some(p) => (p.gamma_ambient.to_string(), fmt_opt(p.gamma_intrinsic), fmt_opt(p.feature_count)),
                None => Default::default(),
            };
            writeln!(out, "{},{},{},{accuracy},{ga},{gi},{k}", c.repetition, c.modality, c.method)?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "modality,method,setting,mean_accuracy,std_accuracy,repetitions")?;
        for r in &self.summary {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.modality,
                r.method,
                r.method.setting(),
                r.mean,
                r.std,
                r.n
            )?;
        }
        Ok(())
    }

    pub fn write_p_values_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "modality,method_a,method_b,n,p_value")?;
        for r in &self.p_values {
            let p = r.p_value.map(|p| p.to_string()).unwrap_or_else(|| "NA".into());
            writeln!(out, "{},{},{},{},{p}", r.modality, r.method_a, r.method_b, r.n)?;
        }
        Ok(())
    }

    /// Writes `raw_cells.csv`, `summary.csv` and `p_values.csv` under `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
            let path = dir.join(name);
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
        };
        write(RAW_CELLS_FILE, &|b| self.write_raw_csv(b))?;
        write(SUMMARY_FILE, &|b| self.write_summary_csv(b))?;
        write(P_VALUES_FILE, &|b| self.write_p_values_csv(b))
    }
}

pub const RAW_CELLS_FILE: &str = "raw_cells.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const P_VALUES_FILE: &str = "p_values.csv";

/// Every (modality, method) cell one repetition produces, in report order.
fn cell_layout(config: &ExperimentConfig, modality_names: &[String]) -> Vec<(String, MethodId)> {
    let mut methods = config.methods.clone();
    methods.sort_unstable();
    methods.dedup();
    let mut layout = Vec::new();
    for name in modality_names {
        for &m in methods.iter().filter(|m| !m.is_stacked()) {
            layout.push((name.clone(), m));
        }
    }
    for &m in methods.iter().filter(|m| m.is_stacked()) {
        layout.push((COMBINED.to_string(), m));
    }
    layout
}

struct RotationOutcome {
    accuracy: HashMap<(usize, MethodId), f64>,
    chosen: HashMap<(usize, MethodId), GridPoint>,
    stacked_accuracy: HashMap<MethodId, f64>,
    stacked_gamma: HashMap<MethodId, f64>,
}

/// Runs one repetition and returns its cells.
pub fn run_repetition(
    config: &ExperimentConfig,
    data: &ExperimentData,
    repetition: usize,
) -> Result<Vec<Cell>> {
    let seed = config.base_seed.wrapping_add(repetition as u64);
    let split = make_split(&data.assignment, seed, config.validation_fraction, config.n_folds)?;
    let index: HashMap<&str, usize> = data
        .assignment
        .labels
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let rows_of = |ids: &[String]| -> Vec<usize> { ids.iter().map(|id| index[id.as_str()]).collect() };
    let folds: Vec<Vec<usize>> = split.folds.iter().map(|f| rows_of(f)).collect();
    let validation = rows_of(&split.validation_ids);
    let unlabeled = rows_of(&split.unlabeled_ids);
    let y = data.row_labels();

    let mut outcomes = Vec::with_capacity(folds.len());
    for test_fold in 0..folds.len() {
        outcomes.push(run_rotation(config, data, &y, &folds, test_fold, &validation, &unlabeled)?);
    }

    let names = data.modality_names();
    let mut cells = Vec::new();
    for (modality, method) in cell_layout(config, &names) {
        let cell = if method.is_stacked() {
            let accs: Vec<f64> = outcomes.iter().map(|o| o.stacked_accuracy[&method]).collect();
            let gammas: Vec<f64> = outcomes.iter().map(|o| o.stacked_gamma[&method]).collect();
            Cell {
                repetition,
                modality,
                method,
                accuracy: Some(mean(&accs)),
                chosen: Some(ChosenParams {
                    gamma_ambient: modal_value(&gammas, |a, b| a == b),
                    gamma_intrinsic: None,
                    feature_count: None,
                }),
            }
        } else {
            let m = names.iter().position(|n| *n == modality).unwrap();
            let accs: Vec<f64> = outcomes.iter().map(|o| o.accuracy[&(m, method)]).collect();
            let points: Vec<GridPoint> = outcomes.iter().map(|o| o.chosen[&(m, method)]).collect();
            let p = modal_value(&points, |a, b| a == b);
            Cell {
                repetition,
                modality,
                method,
                accuracy: Some(mean(&accs)),
                chosen: Some(ChosenParams {
                    gamma_ambient: p.gamma_ambient,
                    gamma_intrinsic: Some(p.gamma_intrinsic),
                    feature_count: Some(p.feature_count),
                }),
            }
        };
        cells.push(cell);
    }
    Ok(cells)
}

/// Most frequent value; ties go to the earliest occurrence.
fn modal_value<T: Copy>(values: &[T], eq: impl Fn(&T, &T) -> bool) -> T {
    let mut best = values[0];
    let mut best_count = 0;
    for v in values {
        let count = values.iter().filter(|w| eq(v, w)).count();
        if count > best_count {
            best = *v;
            best_count = count;
        }
    }
    best
}

fn run_rotation(
    config: &ExperimentConfig,
    data: &ExperimentData,
    y: &[f64],
    folds: &[Vec<usize>],
    test_fold: usize,
    validation: &[usize],
    unlabeled: &[usize],
) -> Result<RotationOutcome> {
    let settings = &config.settings;
    let train_folds: Vec<usize> = (0..folds.len()).filter(|&f| f != test_fold).collect();
    let train_rows: Vec<usize> = train_folds.iter().flat_map(|&f| folds[f].iter().copied()).collect();
    let test_rows = &folds[test_fold];
    let labels_of = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&r| y[r]).collect() };
    let train_labels = labels_of(&train_rows);
    let val_labels = labels_of(validation);
    let max_k = config.grid.feature_counts.iter().copied().max().unwrap_or(0);

    let mut base_methods: Vec<MethodId> = config.methods.iter().map(|m| m.base()).collect();
    base_methods.sort_unstable();
    base_methods.dedup();

    let mut outcome = RotationOutcome {
        accuracy: HashMap::new(),
        chosen: HashMap::new(),
        stacked_accuracy: HashMap::new(),
        stacked_gamma: HashMap::new(),
    };
    let mut pipelines: HashMap<(usize, MethodId), ModalityPipeline> = HashMap::new();

    for (m, modality) in data.modalities.iter().enumerate() {
        let values = &modality.values;
        for &method in &base_methods {
            let mut prepared = PreparedTraining::new(
                values,
                &train_rows,
                &train_labels,
                unlabeled,
                method,
                max_k,
                settings,
            )?;
            let points = config.grid.points(method);
            let available = prepared.available_features();
            let choice = grid_search(&points, available, |point| {
                let pipeline = prepared.fit(point)?;
                accuracy(&pipeline.predict_rows(values, validation)?, &val_labels)
            })?;
            let pipeline = prepared.fit(&choice.point)?;
            let test_acc = accuracy(&pipeline.predict_rows(values, test_rows)?, &labels_of(test_rows))?;
            outcome.accuracy.insert((m, method), test_acc);
            outcome.chosen.insert((m, method), choice.point);
            pipelines.insert((m, method), pipeline);
        }
    }

    for &stacked in config.methods.iter().filter(|m| m.is_stacked()) {
        if outcome.stacked_accuracy.contains_key(&stacked) {
            continue;
        }
        let base = stacked.base();
        let inner_folds: Vec<Vec<usize>> = train_folds.iter().map(|&f| folds[f].clone()).collect();
        let mut fold_models = Vec::with_capacity(data.modalities.len());
        for (m, modality) in data.modalities.iter().enumerate() {
            let point = outcome.chosen[&(m, base)];
            let mut per_fold = Vec::with_capacity(inner_folds.len());
            for g in 0..inner_folds.len() {
                let rows: Vec<usize> = inner_folds
                    .iter()
                    .enumerate()
                    .filter(|(h, _)| *h != g)
                    .flat_map(|(_, r)| r.iter().copied())
                    .collect();
                let mut prepared = PreparedTraining::new(
                    &modality.values,
                    &rows,
                    &labels_of(&rows),
                    unlabeled,
                    base,
                    point.feature_count,
                    settings,
                )?;
                let pipeline = prepared.fit(&point)?;
                per_fold.push(FoldModel {
                    held_out_fold: g,
                    trained_rows: rows,
                    model: pipeline,
                });
            }
            fold_models.push(per_fold);
        }
        let features: Vec<&DMatrix<f64>> = data.modalities.iter().map(|m| &m.values).collect();
        let names = data.modality_names();
        let oof = collect_oof_scores(&fold_models, &inner_folds, &features, &names)?;
        let oof_labels = labels_of(&oof.rows);

        let subs: Vec<&ModalityPipeline> = (0..data.modalities.len()).map(|m| &pipelines[&(m, base)]).collect();
        let stacked_predictions = |stack: &StackedModel, rows: &[usize]| -> Result<Vec<f64>> {
            rows.iter()
                .map(|&r| {
                    let xs: Vec<Vec<f64>> = data
                        .modalities
                        .iter()
                        .map(|m| m.values.row(r).iter().copied().collect())
                        .collect();
                    let inputs: Vec<Option<&[f64]>> = xs.iter().map(|x| Some(x.as_slice())).collect();
                    predict_stacked(stack, &subs, &inputs).map(|(_, label)| label)
                })
                .collect()
        };

        let mut best: Option<(f64, StackedModel)> = None;
        let mut best_acc = f64::NEG_INFINITY;
        for &gamma in &sorted_unique(&config.grid.meta_gamma_ambient) {
            let stack = train_stacker(&oof.scores, &oof_labels, gamma, &settings.solver)?;
            let acc = accuracy(&stacked_predictions(&stack, validation)?, &val_labels)?;
            if acc > best_acc {
                best_acc = acc;
                best = Some((gamma, stack));
            }
        }
        let (gamma, stack) = best.expect("meta grid validated nonempty");
        let test_acc = accuracy(&stacked_predictions(&stack, test_rows)?, &labels_of(test_rows))?;
        outcome.stacked_accuracy.insert(stacked, test_acc);
        outcome.stacked_gamma.insert(stacked, gamma);
    }

    // Only requested layer-one methods are reported.
    outcome.accuracy.retain(|(_, m), _| config.methods.contains(m));
    Ok(outcome)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.settings.graph.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be at least 1".into()));
        }
        if !(self.settings.relevance_weight > 0.0 && self.settings.relevance_weight <= 1.0) {
            return Err(Error::Config("relevance_weight must lie in (0, 1]".into()));
        }
        if !(self.settings.discretize_cutoff > 0.0) {
            return Err(Error::Config("discretize_cutoff must be positive".into()));
        }
        self.settings.kernel.validate()?;
        self.grid.validate()
    }
}

/// Runs every repetition (concurrently when `threads` allows) and assembles
/// the report. Results do not depend on the thread count.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &ExperimentData,
    threads: Option<usize>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let run_all = || -> Vec<Result<Vec<Cell>>> {
        (0..config.repetitions)
            .into_par_iter()
            .map(|r| run_repetition(config, data, r))
            .collect()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Experiment(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    let names = data.modality_names();
    let layout = cell_layout(config, &names);
    let mut cells = Vec::with_capacity(layout.len() * config.repetitions);
    let mut failed = Vec::new();
    let mut first_error = None;
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(c) => cells.extend(c),
            Err(e) => {
                log::warn!("repetition {r} failed: {e}");
                failed.push(r);
                first_error.get_or_insert(e);
                cells.extend(layout.iter().map(|(modality, method)| Cell {
                    repetition: r,
                    modality: modality.clone(),
                    method: *method,
                    accuracy: None,
                    chosen: None,
                }));
            }
        }
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * config.repetitions as f64 {
        let e = first_error.unwrap();
        if e.is_config() {
            return Err(e);
        }
        return Err(Error::Experiment(format!(
            "{} of {} repetitions failed; first error: {e}",
            failed.len(),
            config.repetitions
        )));
    }

    let summary = layout
        .iter()
        .map(|(modality, method)| {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| &c.modality == modality && c.method == *method)
                .filter_map(|c| c.accuracy)
                .collect();
            SummaryRow {
                modality: modality.clone(),
                method: *method,
                mean: if accs.is_empty() { f64::NAN } else { mean(&accs) },
                std: std_dev(&accs),
                n: accs.len(),
            }
        })
        .collect();

    let mut report = ExperimentReport {
        repetitions: config.repetitions,
        cells,
        failed_repetitions: failed,
        summary,
        p_values: Vec::new(),
    };
    report.p_values = comparisons(config, &names)
        .into_iter()
        .map(|(modality, a, b)| p_value_row(&report, &modality, a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(report)
}

fn comparisons(config: &ExperimentConfig, names: &[String]) -> Vec<(String, MethodId, MethodId)> {
    let has = |m| config.methods.contains(&m);
    let pairs = [
        (MethodId::Svm, MethodId::Lapsvm),
        (MethodId::Lapsvm, MethodId::LapsvmLabeledOnly),
        (MethodId::Svm, MethodId::LapsvmLabeledOnly),
    ];
    let mut out = Vec::new();
    for name in names {
        for (a, b) in pairs {
            if has(a) && has(b) {
                out.push((name.clone(), a, b));
            }
        }
    }
    if has(MethodId::StackedSvm) && has(MethodId::StackedLapsvm) {
        out.push((COMBINED.to_string(), MethodId::StackedSvm, MethodId::StackedLapsvm));
    }
    out
}

fn p_value_row(report: &ExperimentReport, modality: &str, a: MethodId, b: MethodId) -> Result<PValueRow> {
    let lookup = |m: MethodId| -> HashMap<usize, f64> {
        report
            .cells
            .iter()
            .filter(|c| c.modality == modality && c.method == m)
            .filter_map(|c| c.accuracy.map(|acc| (c.repetition, acc)))
            .collect()
    };
    let (ma, mb) = (lookup(a), lookup(b));
    let mut reps: Vec<usize> = ma.keys().filter(|r| mb.contains_key(r)).copied().collect();
    reps.sort_unstable();
    let xa: Vec<f64> = reps.iter().map(|r| ma[r]).collect();
    let xb: Vec<f64> = reps.iter().map(|r| mb[r]).collect();
    let p_value = if reps.len() >= 6 { Some(paired_test(&xa, &xb)?) } else { None };
    Ok(PValueRow {
        modality: modality.to_string(),
        method_a: a,
        method_b: b,
        n: reps.len(),
        p_value,
    })
}

/// Labels of the given sample rows as ±1; unlabeled rows are rejected.
pub fn signed_labels(assignment: &LabelAssignment, rows: &[usize]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            let (id, label) = &assignment.labels[r];
            label
                .sign()
                .ok_or_else(|| Error::Contract(format!("sample {id:?} is unlabeled")))
        })
        .collect()
}
