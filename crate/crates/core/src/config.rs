//! TOML run configuration.
//!
//! ```toml
//! [data]
//! clinical = "clinical.csv"
//! survival_threshold_years = 3.0
//!
//! [data.modalities]
//! gene = "gene.csv"
//! isoform = "isoform.csv"
//!
//! [experiment]
//! repetitions = 100
//! methods = ["svm", "lapsvm", "lapsvm_labeled_only", "stacked_svm", "stacked_lapsvm"]
//!
//! [kernel]
//! kind = "polynomial"
//! degree = 3
//! ```
//!
//! Only `[data]` is required. Relative paths resolve against the directory
//! containing the config file. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{ExperimentConfig, HyperGrid, MethodId, PipelineSettings};
use crate::graph::{AffinityForm, GraphConfig};
use crate::kernel::KernelSpec;
use crate::qp::SolverOptions;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub clinical: PathBuf,
    /// Modality name and feature-matrix path, sorted by name.
    pub modalities: Vec<(String, PathBuf)>,
    pub survival_threshold_years: f64,
    pub experiment: ExperimentConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    data: DataSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    experiment: Option<ExperimentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph: Option<GraphSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mrmr: Option<MrmrSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<OutputSection>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    clinical: PathBuf,
    survival_threshold_years: f64,
    modalities: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    repetitions: Option<usize>,
    base_seed: Option<u64>,
    validation_fraction: Option<f64>,
    n_folds: Option<usize>,
    methods: Option<Vec<MethodId>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    gamma_ambient: Option<Vec<f64>>,
    gamma_intrinsic: Option<Vec<f64>>,
    feature_counts: Option<Vec<usize>>,
    bandwidths: Option<Vec<f64>>,
    meta_gamma_ambient: Option<Vec<f64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSection {
    k_neighbors: Option<usize>,
    affinity: Option<AffinityForm>,
    bandwidth: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSection {
    kind: Option<String>,
    degree: Option<u32>,
    offset: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MrmrSection {
    relevance_weight: Option<f64>,
    discretize_cutoff: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    tolerance: Option<f64>,
    max_iterations: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Reads, parses and validates a config file, including the existence of
/// every referenced input path.
pub fn parse_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let config = parse_config_str(&text, base)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
    for p in std::iter::once(&config.clinical).chain(config.modalities.iter().map(|(_, p)| p)) {
        if !p.is_file() {
            return Err(Error::Config(format!(
                "{}: input file {} does not exist",
                path.display(),
                p.display()
            )));
        }
    }
    Ok(config)
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Parses config text; relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<PipelineConfig> {
    let raw: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };

    let data = raw.data;
    if !(data.survival_threshold_years > 0.0 && data.survival_threshold_years.is_finite()) {
        return Err(Error::Config(format!(
            "survival_threshold_years must be positive, got {}",
            data.survival_threshold_years
        )));
    }
    if data.modalities.is_empty() {
        return Err(Error::Config("data.modalities must name at least one modality".into()));
    }
    if data.modalities.contains_key(crate::evaluation::COMBINED) {
        return Err(Error::Config("modality name \"combined\" is reserved".into()));
    }

    let defaults = ExperimentConfig::default();
    let exp = raw.experiment.unwrap_or_default();
    let g = raw.grid.unwrap_or_default();
    let grid = HyperGrid {
        gamma_ambient: g.gamma_ambient.unwrap_or(defaults.grid.gamma_ambient),
        gamma_intrinsic: g.gamma_intrinsic.unwrap_or(defaults.grid.gamma_intrinsic),
        feature_counts: g.feature_counts.unwrap_or(defaults.grid.feature_counts),
        bandwidths: g.bandwidths.unwrap_or(defaults.grid.bandwidths),
        meta_gamma_ambient: g.meta_gamma_ambient.unwrap_or(defaults.grid.meta_gamma_ambient),
    };
    let gs = raw.graph.unwrap_or_default();
    let graph = GraphConfig {
        k_neighbors: gs.k_neighbors.unwrap_or(defaults.settings.graph.k_neighbors),
        form: gs.affinity.unwrap_or(defaults.settings.graph.form),
        bandwidth: gs.bandwidth.or(defaults.settings.graph.bandwidth),
    };
    let kernel = kernel_from_section(raw.kernel.unwrap_or_default())?;
    let m = raw.mrmr.unwrap_or_default();
    let s = raw.solver.unwrap_or_default();
    let settings = PipelineSettings {
        kernel,
        graph,
        relevance_weight: m.relevance_weight.unwrap_or(defaults.settings.relevance_weight),
        discretize_cutoff: m.discretize_cutoff.unwrap_or(defaults.settings.discretize_cutoff),
        solver: SolverOptions {
            tolerance: s.tolerance.unwrap_or(defaults.settings.solver.tolerance),
            max_iterations: s.max_iterations.unwrap_or(defaults.settings.solver.max_iterations),
        },
    };
    let experiment = ExperimentConfig {
        repetitions: exp.repetitions.unwrap_or(defaults.repetitions),
        base_seed: exp.base_seed.unwrap_or(defaults.base_seed),
        validation_fraction: exp.validation_fraction.unwrap_or(defaults.validation_fraction),
        n_folds: exp.n_folds.unwrap_or(defaults.n_folds),
        methods: exp.methods.unwrap_or(defaults.methods),
        grid,
        settings,
    };
    experiment.validate()?;
    if let Some(bw) = graph.bandwidth {
        if !(bw > 0.0 && bw.is_finite()) {
            return Err(Error::Config(format!("graph bandwidth must be positive, got {bw}")));
        }
    }
    if !(experiment.validation_fraction > 0.0 && experiment.validation_fraction < 1.0) {
        return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
    }
    if experiment.n_folds < 2 {
        return Err(Error::Config("n_folds must be at least 2".into()));
    }
    if !(settings.solver.tolerance > 0.0) || settings.solver.max_iterations == 0 {
        return Err(Error::Config("solver tolerance and max_iterations must be positive".into()));
    }

    let output_dir = raw
        .output
        .and_then(|o| o.dir)
        .unwrap_or_else(|| PathBuf::from("results"));
    Ok(PipelineConfig {
        clinical: resolve(&data.clinical),
        modalities: data.modalities.iter().map(|(k, p)| (k.clone(), resolve(p))).collect(),
        survival_threshold_years: data.survival_threshold_years,
        experiment,
        output_dir: resolve(&output_dir),
    })
}

fn kernel_from_section(k: KernelSection) -> Result<KernelSpec> {
    let kind = k.kind.as_deref().unwrap_or("polynomial");
    let spec = match kind {
        "polynomial" => {
            if k.gamma.is_some() {
                return Err(Error::Config("kernel.gamma applies to the rbf kernel only".into()));
            }
            KernelSpec::Polynomial {
                degree: k.degree.unwrap_or(3),
                offset: k.offset.unwrap_or(1.0),
            }
        }
        "rbf" => {
            if k.degree.is_some() || k.offset.is_some() {
                return Err(Error::Config("kernel.degree/offset apply to the polynomial kernel only".into()));
            }
            KernelSpec::Rbf {
                gamma: k.gamma.ok_or_else(|| Error::Config("rbf kernel requires kernel.gamma".into()))?,
            }
        }
        "linear" => {
            if k.degree.is_some() || k.offset.is_some() || k.gamma.is_some() {
                return Err(Error::Config("linear kernel takes no parameters".into()));
            }
            KernelSpec::Linear
        }
        other => {
            return Err(Error::Config(format!(
                "unknown kernel kind {other:?}, expected polynomial, rbf or linear"
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

impl PipelineConfig {
    /// Serializes the config with every default made explicit and all paths
    /// absolute, so the text re-parses to an identical config from any
    /// directory.
    pub fn to_toml(&self) -> Result<String> {
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let e = &self.experiment;
        let s = &e.settings;
        let kernel = match s.kernel {
            KernelSpec::Linear => KernelSection {
                kind: Some("linear".into()),
                ..Default::default()
            },
            KernelSpec::Polynomial { degree, offset } => KernelSection {
                kind: Some("polynomial".into()),
                degree: Some(degree),
                offset: Some(offset),
                gamma: None,
            },
            KernelSpec::Rbf { gamma } => KernelSection {
                kind: Some("rbf".into()),
                gamma: Some(gamma),
                ..Default::default()
            },
        };
        let file = ConfigFile {
            data: DataSection {
                clinical: abs(&self.clinical),
                survival_threshold_years: self.survival_threshold_years,
                modalities: self.modalities.iter().map(|(k, p)| (k.clone(), abs(p))).collect(),
            },
            experiment: Some(ExperimentSection {
                repetitions: Some(e.repetitions),
                base_seed: Some(e.base_seed),
                validation_fraction: Some(e.validation_fraction),
                n_folds: Some(e.n_folds),
                methods: Some(e.methods.clone()),
            }),
            grid: Some(GridSection {
                gamma_ambient: Some(e.grid.gamma_ambient.clone()),
                gamma_intrinsic: Some(e.grid.gamma_intrinsic.clone()),
                feature_counts: Some(e.grid.feature_counts.clone()),
                bandwidths: Some(e.grid.bandwidths.clone()),
                meta_gamma_ambient: Some(e.grid.meta_gamma_ambient.clone()),
            }),
            graph: Some(GraphSection {
                k_neighbors: Some(s.graph.k_neighbors),
                affinity: Some(s.graph.form),
                bandwidth: s.graph.bandwidth,
            }),
            kernel: Some(kernel),
            mrmr: Some(MrmrSection {
                relevance_weight: Some(s.relevance_weight),
                discretize_cutoff: Some(s.discretize_cutoff),
            }),
            solver: Some(SolverSection {
                tolerance: Some(s.solver.tolerance),
                max_iterations: Some(s.solver.max_iterations),
            }),
            output: Some(OutputSection {
                dir: Some(abs(&self.output_dir)),
            }),
        };
        toml::to_string(&file).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
clinical = "clinical.csv"
survival_threshold_years = 3.0

[data.modalities]
gene = "gene.csv"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(c.clinical, PathBuf::from("/data/clinical.csv"));
        assert_eq!(c.modalities, vec![("gene".to_string(), PathBuf::from("/data/gene.csv"))]);
        let e = &c.experiment;
        assert_eq!(e.settings.graph.k_neighbors, 5);
        assert_eq!(e.settings.kernel, KernelSpec::Polynomial { degree: 3, offset: 1.0 });
        assert_eq!(e.validation_fraction, 0.15);
        assert_eq!(e.n_folds, 5);
        assert_eq!(e.repetitions, 100);
        assert_eq!(e.methods.len(), 5);
    }

    #[test]
    fn zero_neighbors_rejected() {
        let text = format!("{MINIMAL}\n[graph]\nk_neighbors = 0\n");
        let err = parse_config_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("k_neighbors"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{MINIMAL}\n[grid]\ngamma_z = [1.0]\n");
        let err = parse_config_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("gamma_z"), "{err}");
        assert!(err.is_config());
    }

    #[test]
    fn type_mismatch_and_missing_key() {
        let text = MINIMAL.replace("3.0", "\"three\"");
        let err = parse_config_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("survival_threshold_years"), "{err}");
        let text = MINIMAL.replace("clinical = \"clinical.csv\"", "");
        let err = parse_config_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("clinical"), "{err}");
    }

    #[test]
    fn unknown_method_rejected() {
        let text = format!("{MINIMAL}\n[experiment]\nmethods = [\"tsvm\"]\n");
        assert!(parse_config_str(&text, Path::new(".")).is_err());
    }

    #[test]
    fn rbf_kernel_requires_gamma() {
        let text = format!("{MINIMAL}\n[kernel]\nkind = \"rbf\"\n");
        assert!(parse_config_str(&text, Path::new(".")).is_err());
        let text = format!("{MINIMAL}\n[kernel]\nkind = \"rbf\"\ngamma = 0.5\n");
        let c = parse_config_str(&text, Path::new(".")).unwrap();
        assert_eq!(c.experiment.settings.kernel, KernelSpec::Rbf { gamma: 0.5 });
    }

    #[test]
    fn echo_round_trips() {
        let text = format!(
            "{MINIMAL}\n[graph]\nbandwidth = 0.7\naffinity = \"plain\"\n[kernel]\nkind = \"rbf\"\ngamma = 2.0\n"
        );
        let c = parse_config_str(&text, Path::new("/data")).unwrap();
        let echoed = c.to_toml().unwrap();
        let again = parse_config_str(&echoed, Path::new("/elsewhere")).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn missing_file_names_path() {
        let err = parse_config(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("/nonexistent/run.toml"), "{err}");
    }
}
