mod common;

use manifold_ssl::graph::{build_graph, laplacian, pairwise_distances, GraphConfig};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
}

/// Two clouds far apart so the 3-NN graph splits into two components.
fn clustered(rng: &mut ChaCha8Rng, per: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * per, 2, |i, _| if i < per { 0.0 } else { 100.0 } + rng.random_range(0.0..1.0))
}

#[test]
fn quadratic_form_matches_edge_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.random_range(6..40);
        let x = random_points(&mut rng, n, 3);
        let g = build_graph(&x, &GraphConfig::default()).unwrap();
        let lap = laplacian(&g);
        let f = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let q = lap.quadratic_form(&f);
        let oracle = common::smoothness(&g.to_dense(), &f);
        assert!((q - oracle).abs() <= 1e-9 * q.max(1.0));
    }
}

#[test]
fn weights_symmetric_with_zero_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_points(&mut rng, 30, 4);
    let w = build_graph(&x, &GraphConfig::default()).unwrap().to_dense();
    assert_eq!(w, w.transpose());
    assert!((0..30).all(|i| w[(i, i)] == 0.0));
    assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn degrees_between_k_and_n_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [1, 3, 5] {
        let x = random_points(&mut rng, 25, 2);
        let g = build_graph(&x, &GraphConfig { k_neighbors: k, ..Default::default() }).unwrap();
        for row in &g.neighbors {
            assert!(row.len() >= k && row.len() <= 24);
        }
    }
}

#[test]
fn zero_eigenvalues_count_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (x, expected) in [(clustered(&mut rng, 8), 2), (random_points(&mut rng, 16, 2), 1)] {
        let g = build_graph(&x, &GraphConfig { k_neighbors: 3, ..Default::default() }).unwrap();
        let eig = SymmetricEigen::new(laplacian(&g).to_dense()).eigenvalues;
        let zeros = eig.iter().filter(|v| v.abs() <= 1e-8).count();
        assert_eq!(zeros, expected);
        assert_eq!(g.connected_components(), expected);
    }
}

#[test]
fn distances_satisfy_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_points(&mut rng, 12, 3);
    let d = pairwise_distances(&x);
    for i in 0..12 {
        for j in 0..12 {
            for k in 0..12 {
                assert!(d[(i, k)] <= d[(i, j)] + d[(j, k)] + 1e-12);
            }
        }
    }
}
