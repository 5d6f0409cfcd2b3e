//! Reference computations shared by the integration and acceptance tests.
//! Everything here is written from the textbook definitions and does not call
//! into the library's numerical code.
#![allow(dead_code)]

use std::collections::HashMap;

use manifold_ssl::graph::{build_graph, laplacian, GraphConfig};
use manifold_ssl::kernel::KernelSpec;
use manifold_ssl::learner::{train_lapsvm, train_svm, TrainedModel};
use manifold_ssl::synth::{two_moons, TwoMoonsOptions};
use nalgebra::{DMatrix, DVector};

/// `½ Σ_ij w_ij (f_i − f_j)²`.
pub fn smoothness(w: &DMatrix<f64>, f: &DVector<f64>) -> f64 {
    let n = f.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += w[(i, j)] * (f[i] - f[j]).powi(2);
        }
    }
    0.5 * s
}

/// Mutual information in bits by summing over the empirical joint table.
pub fn mi_direct(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let mut joint: HashMap<(u8, u8), f64> = HashMap::new();
    let mut px: HashMap<u8, f64> = HashMap::new();
    let mut py: HashMap<u8, f64> = HashMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_default() += 1.0 / n;
        *px.entry(a).or_default() += 1.0 / n;
        *py.entry(b).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(a, b), &p)| p * (p / (px[&a] * py[&b])).log2()).sum()
}

pub fn entropy_direct(x: &[u8]) -> f64 {
    let n = x.len() as f64;
    let mut p: HashMap<u8, f64> = HashMap::new();
    for &a in x {
        *p.entry(a).or_default() += 1.0 / n;
    }
    p.values().map(|p| -p * p.log2()).sum()
}

/// Greedy mRMR written out directly: first the most relevant feature, then
/// repeatedly the one maximizing `w·rel − (1−w)·mean redundancy`, lowest
/// index on ties.
pub fn greedy_mrmr(columns: &[Vec<u8>], labels: &[u8], k: usize, w: f64) -> Vec<usize> {
    let rel: Vec<f64> = columns.iter().map(|c| mi_direct(c, labels)).collect();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..columns.len() {
            if chosen.contains(&j) {
                continue;
            }
            let score = if chosen.is_empty() {
                w * rel[j]
            } else {
                let red: f64 = chosen.iter().map(|&s| mi_direct(&columns[j], &columns[s])).sum::<f64>() / chosen.len() as f64;
                w * rel[j] - (1.0 - w) * red
            };
            // Scores that agree to rounding count as ties.
            if best.is_none_or(|(_, b)| score > b + 1e-12) {
                best = Some((j, score));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Mean relevance minus mean pairwise redundancy of a subset.
pub fn subset_objective(columns: &[Vec<u8>], labels: &[u8], subset: &[usize]) -> f64 {
    let rel = subset.iter().map(|&j| mi_direct(&columns[j], labels)).sum::<f64>() / subset.len() as f64;
    let mut red = 0.0;
    let mut pairs = 0.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            red += mi_direct(&columns[i], &columns[j]);
            pairs += 1.0;
        }
    }
    rel - if pairs > 0.0 { red / pairs } else { 0.0 }
}

pub fn kernel_value(spec: &KernelSpec, x: &[f64], z: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
    match *spec {
        KernelSpec::Linear => dot,
        KernelSpec::Polynomial { degree, offset } => (dot + offset).powi(degree as i32),
        KernelSpec::Rbf { gamma } => {
            let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
            (-gamma * d2).exp()
        }
    }
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Decision values of an expansion at the rows of `points`.
pub fn expansion_values(spec: &KernelSpec, anchors: &DMatrix<f64>, alphas: &DVector<f64>, bias: f64, points: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(points.nrows(), |p, _| {
        let x = row(points, p);
        bias + (0..anchors.nrows()).map(|i| alphas[i] * kernel_value(spec, &row(anchors, i), &x)).sum::<f64>()
    })
}

/// `(1/l) Σ hinge + γ_A αᵀKα + γ_I fᵀLf` evaluated from scratch, with `L`
/// given densely over the model's anchors.
pub fn primal_oracle(model: &TrainedModel, alphas: &DVector<f64>, bias: f64, labels: &[f64], lap: Option<&DMatrix<f64>>) -> f64 {
    let n = model.anchors.nrows();
    let k = DMatrix::from_fn(n, n, |i, j| kernel_value(&model.kernel, &row(&model.anchors, i), &row(&model.anchors, j)));
    let f = &k * alphas;
    let l = labels.len();
    let hinge: f64 = (0..l).map(|i| (1.0 - labels[i] * (f[i] + bias)).max(0.0)).sum::<f64>() / l as f64;
    let intrinsic = match lap {
        Some(lap) if model.gamma_intrinsic > 0.0 => model.gamma_intrinsic * f.dot(&(lap * &f)),
        _ => 0.0,
    };
    hinge + model.gamma_ambient * alphas.dot(&f) + intrinsic
}

pub fn agreement(scores: &DVector<f64>, truth: &[f64]) -> f64 {
    let hits = scores
        .iter()
        .zip(truth)
        .filter(|(s, t)| (if **s >= 0.0 { 1.0 } else { -1.0 }) == **t)
        .count();
    hits as f64 / truth.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const MOONS_KERNEL: KernelSpec = KernelSpec::Rbf { gamma: 4.0 };
pub const MOONS_GAMMA_A: f64 = 1e-3;
pub const MOONS_GAMMA_I: f64 = 30.0;

/// Transductive accuracies on the unlabeled pool for one two-moons draw.
pub struct MoonsOutcome {
    pub svm: f64,
    pub lapsvm: f64,
    pub lapsvm_labeled_only: f64,
    pub models: Vec<TrainedModel>,
}

pub fn moons_trial(seed: u64) -> MoonsOutcome {
    let m = two_moons(seed, &TwoMoonsOptions::default());
    let u = m.unlabeled.nrows();
    let mut all = DMatrix::zeros(2 + u, 2);
    all.rows_mut(0, 2).copy_from(&m.labeled);
    all.rows_mut(2, u).copy_from(&m.unlabeled);
    let lap = laplacian(&build_graph(&all, &GraphConfig::default()).unwrap());
    let lap_small = laplacian(&build_graph(&m.labeled, &GraphConfig::default()).unwrap());

    let svm = train_svm(&m.labeled, &m.labeled_y, MOONS_KERNEL, MOONS_GAMMA_A).unwrap();
    let lap_model = train_lapsvm(&m.labeled, &m.labeled_y, &m.unlabeled, MOONS_KERNEL, MOONS_GAMMA_A, MOONS_GAMMA_I, &lap).unwrap();
    let empty = DMatrix::zeros(0, 2);
    let lap_l = train_lapsvm(&m.labeled, &m.labeled_y, &empty, MOONS_KERNEL, MOONS_GAMMA_A, MOONS_GAMMA_I, &lap_small).unwrap();

    let acc = |model: &TrainedModel| agreement(&model.decision_scores(&m.unlabeled).unwrap(), &m.unlabeled_y);
    MoonsOutcome {
        svm: acc(&svm),
        lapsvm: acc(&lap_model),
        lapsvm_labeled_only: acc(&lap_l),
        models: vec![svm, lap_model, lap_l],
    }
}

/// Generates a preset into a fresh directory and parses its config.
pub fn preset_setup(preset: manifold_ssl::synth::Preset, seed: u64) -> (tempfile::TempDir, manifold_ssl::config::PipelineConfig) {
    let dir = tempfile::tempdir().unwrap();
    manifold_ssl::synth::generate_synthetic(preset, seed, dir.path()).unwrap();
    let config = manifold_ssl::config::parse_config(&dir.path().join(manifold_ssl::synth::PRESET_CONFIG_FILE)).unwrap();
    (dir, config)
}

pub fn load_data(config: &manifold_ssl::config::PipelineConfig) -> manifold_ssl::evaluation::ExperimentData {
    use manifold_ssl::dataset::{derive_labels, load_clinical, load_feature_matrix, years_to_days};
    let records = load_clinical(&config.clinical).unwrap();
    let assignment = derive_labels(&records, years_to_days(config.survival_threshold_years)).unwrap();
    let modalities = config.modalities.iter().map(|(name, path)| load_feature_matrix(path, name).unwrap()).collect();
    manifold_ssl::evaluation::ExperimentData::new(modalities, assignment).unwrap()
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Four informative features at random strengths, three noisy copies of
/// informative ones and three pure-noise features, z-scored and discretized.
pub fn mrmr_instance(seed: u64) -> (manifold_ssl::preprocess::DiscreteMatrix, Vec<u8>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 200;
    let c: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let mut x = DMatrix::zeros(n, 10);
    for j in 0..4 {
        let s = rng.random_range(0.3..1.0);
        for i in 0..n {
            x[(i, j)] = s * c[i] + rng.random_range(-1.7..1.7);
        }
    }
    for j in 4..7 {
        let src = rng.random_range(0..4);
        for i in 0..n {
            x[(i, j)] = x[(i, src)] + 0.3 * rng.random_range(-1.7..1.7);
        }
    }
    for j in 7..10 {
        for i in 0..n {
            x[(i, j)] = rng.random_range(-1.7..1.7);
        }
    }
    let labels = c.iter().map(|&v| u8::from(v > 0.0)).collect();
    (manifold_ssl::preprocess::discretize(&manifold_ssl::preprocess::zscore(&x).values, 0.5), labels)
}
