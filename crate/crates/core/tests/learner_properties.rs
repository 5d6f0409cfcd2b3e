mod common;

use manifold_ssl::graph::{build_graph, laplacian, GraphConfig};
use manifold_ssl::kernel::KernelSpec;
use manifold_ssl::learner::{train_lapsvm, train_svm};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64, l: usize, u: usize) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..l).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let x = DMatrix::from_fn(l, 2, |i, j| if j == 0 { 0.7 * y[i] } else { 0.0 } + rng.random_range(-1.0..1.0));
    let un = DMatrix::from_fn(u, 2, |_, _| rng.random_range(-1.5..1.5));
    (x, y, un)
}

fn stacked(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    m.rows_mut(0, a.nrows()).copy_from(a);
    m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    m
}

#[test]
fn one_dimensional_hard_margin() {
    let x = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
    let model = train_svm(&x, &[-1.0, 1.0], KernelSpec::Linear, 1e-4).unwrap();
    let probe = DMatrix::from_column_slice(4, 1, &[0.5, -0.5, 1.0, -1.0]);
    let s = model.decision_scores(&probe).unwrap();
    assert!(s[0] > 0.0 && s[1] < 0.0);
    assert!((s[2] - 1.0).abs() < 1e-6 && (s[3] + 1.0).abs() < 1e-6);
}

#[test]
fn support_anchors_sit_on_or_outside_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<f64> = (0..30).map(|i| if i < 15 { 1.0 } else { -1.0 }).collect();
    let x = DMatrix::from_fn(30, 2, |i, _| 3.0 * y[i] + rng.random_range(-1.0..1.0));
    let model = train_svm(&x, &y, KernelSpec::Linear, 1e-4).unwrap();
    let s = model.decision_scores(&x).unwrap();
    for i in 0..30 {
        assert!(y[i] * s[i] >= 1.0 - 1e-6, "{i}: {}", y[i] * s[i]);
    }
}

#[test]
fn flipping_labels_negates_scores() {
    let (x, y, u) = problem(4, 12, 30);
    let lap = laplacian(&build_graph(&stacked(&x, &u), &GraphConfig::default()).unwrap());
    let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
    let kernel = KernelSpec::Rbf { gamma: 1.0 };
    let a = train_lapsvm(&x, &y, &u, kernel, 0.01, 0.1, &lap).unwrap();
    let b = train_lapsvm(&x, &flipped, &u, kernel, 0.01, 0.1, &lap).unwrap();
    let (sa, sb) = (a.decision_scores(&u).unwrap(), b.decision_scores(&u).unwrap());
    assert!((sa + sb).amax() <= 1e-6);
}

#[test]
fn larger_intrinsic_weight_gives_smoother_solution() {
    for seed in 0..3 {
        let (x, y, u) = problem(10 + seed, 10, 40);
        let all = stacked(&x, &u);
        let lap = laplacian(&build_graph(&all, &GraphConfig::default()).unwrap());
        let dense = lap.to_dense();
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let mut last = f64::INFINITY;
        for gi in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let m = train_lapsvm(&x, &y, &u, kernel, 0.01, gi, &lap).unwrap();
            let f = m.decision_scores(&all).unwrap();
            let penalty = f.dot(&(&dense * &f));
            assert!(penalty <= last * (1.0 + 1e-6) + 1e-9, "γ_I {gi}: {penalty} > {last}");
            last = penalty;
        }
    }
}

#[test]
fn random_perturbations_never_lower_the_objective() {
    let (x, y, u) = problem(21, 14, 30);
    let lap = laplacian(&build_graph(&stacked(&x, &u), &GraphConfig::default()).unwrap());
    let dense = lap.to_dense();
    let model = train_lapsvm(&x, &y, &u, KernelSpec::Rbf { gamma: 0.5 }, 0.01, 0.1, &lap).unwrap();
    let base = common::primal_oracle(&model, &model.alphas, model.bias, &y, Some(&dense));
    assert!((base - model.objective).abs() <= 1e-8 * base.max(1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for t in 0..50 {
        let scale = 10f64.powi(-(t % 4) - 1);
        let da = DVector::from_fn(model.alphas.len(), |_, _| scale * rng.random_range(-1.0..1.0));
        let db = scale * rng.random_range(-1.0..1.0);
        let obj = common::primal_oracle(&model, &(&model.alphas + da), model.bias + db, &y, Some(&dense));
        assert!(obj >= base - 1e-6 * base.max(1.0), "{obj} < {base}");
    }
}

#[test]
fn scores_are_continuous_in_the_input() {
    let (x, y, _) = problem(30, 20, 0);
    let model = train_svm(&x, &y, KernelSpec::Rbf { gamma: 2.0 }, 0.01).unwrap();
    let a = model.decision_score(&[0.3, -0.2]).unwrap();
    let b = model.decision_score(&[0.3 + 1e-8, -0.2]).unwrap();
    assert!((a - b).abs() <= 1e-4);
}
