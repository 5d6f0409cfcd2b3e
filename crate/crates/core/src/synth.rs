//! Synthetic datasets used for smoke runs and acceptance experiments.
//!
//! * `two_moons`: two interleaved half circles, two labeled points, a pool of
//!   unlabeled points and a held-out test set.
//! * `multimodal_manifold`: three modalities sharing a latent class; each
//!   places a sample on its own noisy two-moons manifold, so every modality
//!   alone is only weakly informative.
//! * `null_noise`: Gaussian features with labels drawn independently.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{write_clinical, years_to_days, ClinicalRecord, Label, ModalityMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    TwoMoons,
    MultimodalManifold,
    NullNoise,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::TwoMoons, Preset::MultimodalManifold, Preset::NullNoise];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::TwoMoons => "two_moons",
            Preset::MultimodalManifold => "multimodal_manifold",
            Preset::NullNoise => "null_noise",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset {s:?}, expected two_moons, multimodal_manifold or null_noise"
                ))
            })
    }
}

const THRESHOLD_YEARS: f64 = 3.0;

/// Position of the lower moon relative to the upper one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoonShape {
    pub x_shift: f64,
    pub y_shift: f64,
}

impl MoonShape {
    /// The textbook layout.
    pub const CLASSIC: MoonShape = MoonShape { x_shift: 1.0, y_shift: 0.5 };
}

/// A point on one of the two moons; `class` is ±1.
fn moon_point(rng: &mut impl Rng, class: f64, shape: MoonShape) -> [f64; 2] {
    let t = rng.random_range(0.0..std::f64::consts::PI);
    if class > 0.0 {
        [t.cos(), t.sin()]
    } else {
        [shape.x_shift - t.cos(), shape.y_shift - t.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoMoonsOptions {
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub noise: f64,
    pub shape: MoonShape,
}

impl Default for TwoMoonsOptions {
    fn default() -> Self {
        Self {
            n_unlabeled: 200,
            n_test: 200,
            noise: 0.05,
            shape: MoonShape { x_shift: 0.8, y_shift: 0.6 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoMoons {
    /// One point per moon.
    pub labeled: DMatrix<f64>,
    pub labeled_y: Vec<f64>,
    pub unlabeled: DMatrix<f64>,
    /// Ground truth of the unlabeled pool, for transductive scoring.
    pub unlabeled_y: Vec<f64>,
    pub test: DMatrix<f64>,
    pub test_y: Vec<f64>,
}

pub fn two_moons(seed: u64, options: &TwoMoonsOptions) -> TwoMoons {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, options.noise).expect("noise must be finite and non-negative");
    let mut sample = |n: usize, classes: Option<&[f64]>| {
        let y: Vec<f64> = (0..n)
            .map(|i| match classes {
                Some(c) => c[i],
                None => if i % 2 == 0 { 1.0 } else { -1.0 },
            })
            .collect();
        let mut x = DMatrix::zeros(n, 2);
        for (i, &c) in y.iter().enumerate() {
            let p = moon_point(&mut rng, c, options.shape);
            x[(i, 0)] = p[0] + noise.sample(&mut rng);
            x[(i, 1)] = p[1] + noise.sample(&mut rng);
        }
        (x, y)
    };
    let (labeled, labeled_y) = sample(2, Some(&[1.0, -1.0]));
    let (unlabeled, unlabeled_y) = sample(options.n_unlabeled, None);
    let (test, test_y) = sample(options.n_test, None);
    TwoMoons {
        labeled,
        labeled_y,
        unlabeled,
        unlabeled_y,
        test,
        test_y,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalOptions {
    pub n_samples: usize,
    /// Features per modality, including the informative ones.
    pub n_features: usize,
    /// Noisy copies of each latent coordinate per modality.
    pub informative_copies: usize,
    pub unlabeled_fraction: f64,
    /// Latent noise standard deviation, one entry per modality.
    pub modality_noise: Vec<f64>,
    /// Extra noise on each informative copy.
    pub copy_noise: f64,
}

impl Default for MultimodalOptions {
    fn default() -> Self {
        Self {
            n_samples: 160,
            n_features: 30,
            informative_copies: 4,
            unlabeled_fraction: 0.7,
            modality_noise: vec![0.10, 0.15, 0.25],
            copy_noise: 0.10,
        }
    }
}

/// Feature matrices, clinical records and the ground-truth class of every
/// sample (including the ones whose label is hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub modalities: Vec<ModalityMatrix>,
    pub clinical: Vec<ClinicalRecord>,
    pub threshold_years: f64,
    /// `(sample_id, class ±1, label visible)`.
    pub truth: Vec<(String, f64, bool)>,
}

impl SyntheticDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in &self.modalities {
            m.write_csv(&dir.join(format!("{}.csv", m.modality_name)))?;
        }
        write_clinical(&dir.join("clinical.csv"), &self.clinical)?;
        let path = dir.join("truth.csv");
        let mut text = String::from("sample_id,class,labeled\n");
        for (id, class, visible) in &self.truth {
            text.push_str(&format!("{id},{class},{visible}\n"));
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn sample_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(3);
    (0..n).map(|i| format!("S{i:0width$}")).collect()
}

/// Clinical record realizing `label` under the synthetic threshold.
fn clinical_record(rng: &mut impl Rng, id: &str, label: Label) -> ClinicalRecord {
    let threshold = years_to_days(THRESHOLD_YEARS);
    match label {
        Label::Positive => {
            let days = threshold + rng.random_range(0..2 * threshold);
            if rng.random_bool(0.5) {
                ClinicalRecord::alive(id, days)
            } else {
                ClinicalRecord::deceased(id, days)
            }
        }
        Label::Negative => ClinicalRecord::deceased(id, rng.random_range(30..threshold)),
        Label::Unlabeled => ClinicalRecord::alive(id, rng.random_range(30..threshold)),
    }
}

/// Hides the labels of `round(fraction · n)` randomly chosen samples.
fn visibility(rng: &mut impl Rng, n: usize, fraction: f64) -> Vec<bool> {
    let hidden = (fraction * n as f64).round() as usize;
    let mut visible: Vec<bool> = (0..n).map(|i| i >= hidden).collect();
    visible.shuffle(rng);
    visible
}

pub fn multimodal_manifold(seed: u64, options: &MultimodalOptions) -> Result<SyntheticDataset> {
    let n = options.n_samples;
    let p = options.n_features;
    let copies = options.informative_copies;
    if 2 * copies > p || copies == 0 {
        return Err(Error::Config(format!(
            "{p} features cannot hold {copies} copies of two latent coordinates"
        )));
    }
    if !(0.0..1.0).contains(&options.unlabeled_fraction) || options.modality_noise.is_empty() {
        return Err(Error::Config("invalid multimodal_manifold options".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let classes: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let visible = visibility(&mut rng, n, options.unlabeled_fraction);
    let ids = sample_ids(n);

    let mut modalities = Vec::with_capacity(options.modality_noise.len());
    for (m, &sigma) in options.modality_noise.iter().enumerate() {
        // Informative columns land at random positions among the noise.
        let mut columns: Vec<usize> = (0..p).collect();
        columns.shuffle(&mut rng);
        let mut values = DMatrix::from_fn(n, p, |_, _| std_normal.sample(&mut rng));
        for i in 0..n {
            // Each modality places the sample on its own moon of the shared class.
            let latent = moon_point(&mut rng, classes[i], MoonShape::CLASSIC);
            let observed = [
                latent[0] + sigma * std_normal.sample(&mut rng),
                latent[1] + sigma * std_normal.sample(&mut rng),
            ];
            for c in 0..copies {
                for (d, &coord) in observed.iter().enumerate() {
                    let col = columns[2 * c + d];
                    values[(i, col)] = coord + options.copy_noise * std_normal.sample(&mut rng);
                }
            }
        }
        let name = format!("modality{}", m + 1);
        let features = (0..p).map(|j| format!("m{}_f{j:02}", m + 1)).collect();
        modalities.push(ModalityMatrix::new(name, ids.clone(), features, values)?);
    }

    let clinical = (0..n)
        .map(|i| {
            let label = match (visible[i], classes[i] > 0.0) {
                (false, _) => Label::Unlabeled,
                (true, true) => Label::Positive,
                (true, false) => Label::Negative,
            };
            clinical_record(&mut rng, &ids[i], label)
        })
        .collect();
    let truth = (0..n).map(|i| (ids[i].clone(), classes[i], visible[i])).collect();
    Ok(SyntheticDataset {
        modalities,
        clinical,
        threshold_years: THRESHOLD_YEARS,
        truth,
    })
}

/// Standard normal features; every sample labeled, classes drawn by fair coin
/// independently of the features.
pub fn null_noise(seed: u64, n_samples: usize, n_features: usize) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let ids = sample_ids(n_samples);
    let values = DMatrix::from_fn(n_samples, n_features, |_, _| std_normal.sample(&mut rng));
    let features = (0..n_features).map(|j| format!("f{j:02}")).collect();
    let modality = ModalityMatrix::new("noise", ids.clone(), features, values)?;
    let classes: Vec<f64> = (0..n_samples)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let clinical = ids
        .iter()
        .zip(&classes)
        .map(|(id, &c)| {
            let label = if c > 0.0 { Label::Positive } else { Label::Negative };
            clinical_record(&mut rng, id, label)
        })
        .collect();
    let truth = ids.iter().zip(&classes).map(|(id, &c)| (id.clone(), c, true)).collect();
    Ok(SyntheticDataset {
        modalities: vec![modality],
        clinical,
        threshold_years: THRESHOLD_YEARS,
        truth,
    })
}

/// Run configuration written next to each generated dataset.
fn preset_config(preset: Preset, modalities: &[String]) -> String {
    let mut text = format!(
        "[data]\nclinical = \"clinical.csv\"\nsurvival_threshold_years = {THRESHOLD_YEARS:?}\n\n[data.modalities]\n"
    );
    for m in modalities {
        text.push_str(&format!("{m} = \"{m}.csv\"\n"));
    }
    let rest = match preset {
        Preset::TwoMoons => {
            r#"
[experiment]
repetitions = 3
methods = ["svm", "lapsvm", "lapsvm_labeled_only"]

[grid]
gamma_ambient = [0.001]
gamma_intrinsic = [30.0]
feature_counts = [2]

[kernel]
kind = "rbf"
gamma = 4.0

[output]
dir = "results"
"#
        }
        Preset::MultimodalManifold => {
            r#"
[experiment]
repetitions = 10

[grid]
gamma_ambient = [0.0001, 0.01]
gamma_intrinsic = [0.001, 0.01, 0.1]
feature_counts = [2, 4, 8]
meta_gamma_ambient = [0.0001, 0.01]

[kernel]
kind = "rbf"
gamma = 0.5

[output]
dir = "results"
"#
        }
        Preset::NullNoise => {
            r#"
[experiment]
repetitions = 10
methods = ["svm", "lapsvm"]

[grid]
gamma_ambient = [0.01, 1.0]
gamma_intrinsic = [0.01, 1.0]
feature_counts = [5, 10]

[kernel]
kind = "linear"

[output]
dir = "results"
"#
        }
    };
    text.push_str(rest);
    text
}

pub const PRESET_CONFIG_FILE: &str = "config.toml";

/// Writes the preset's feature matrices, `clinical.csv`, `truth.csv` and a
/// ready-to-run `config.toml` into `out_dir`.
pub fn generate_synthetic(preset: Preset, seed: u64, out_dir: &Path) -> Result<()> {
    let dataset = match preset {
        Preset::TwoMoons => two_moons_dataset(seed)?,
        Preset::MultimodalManifold => multimodal_manifold(seed, &MultimodalOptions::default())?,
        Preset::NullNoise => null_noise(seed, 120, 20)?,
    };
    dataset.write(out_dir)?;
    let names: Vec<String> = dataset.modalities.iter().map(|m| m.modality_name.clone()).collect();
    let path = out_dir.join(PRESET_CONFIG_FILE);
    std::fs::write(&path, preset_config(preset, &names)).map_err(|e| Error::io(&path, e))
}

/// Two-moons rows as a single-modality dataset: the two labeled points and
/// the test rows carry labels, the unlabeled pool does not.
pub fn two_moons_dataset(seed: u64) -> Result<SyntheticDataset> {
    let moons = two_moons(seed, &TwoMoonsOptions::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let parts: [(&DMatrix<f64>, &[f64], bool, &str); 3] = [
        (&moons.labeled, &moons.labeled_y, true, "L"),
        (&moons.unlabeled, &moons.unlabeled_y, false, "U"),
        (&moons.test, &moons.test_y, true, "T"),
    ];
    let n: usize = parts.iter().map(|p| p.0.nrows()).sum();
    let mut values = DMatrix::zeros(n, 2);
    let mut ids = Vec::with_capacity(n);
    let mut clinical = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut row = 0;
    for (x, y, visible, prefix) in parts {
        for i in 0..x.nrows() {
            values.row_mut(row).copy_from(&x.row(i));
            let id = format!("{prefix}{i:03}");
            let label = match (visible, y[i] > 0.0) {
                (false, _) => Label::Unlabeled,
                (true, true) => Label::Positive,
                (true, false) => Label::Negative,
            };
            clinical.push(clinical_record(&mut rng, &id, label));
            truth.push((id.clone(), y[i], visible));
            ids.push(id);
            row += 1;
        }
    }
    let modality = ModalityMatrix::new("moons", ids, vec!["x".into(), "y".into()], values)?;
    Ok(SyntheticDataset {
        modalities: vec![modality],
        clinical,
        threshold_years: THRESHOLD_YEARS,
        truth,
    })
}
