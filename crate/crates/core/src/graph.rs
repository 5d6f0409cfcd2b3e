//! Heat-kernel k-nearest-neighbor affinity graphs and their Laplacians.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityForm {
    /// `exp(-d² / (2 t²))`
    #[default]
    Squared,
    /// `exp(-d / t)`
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k_neighbors: usize,
    pub form: AffinityForm,
    /// Fixed heat-kernel bandwidth; `None` uses the median k-NN edge length.
    pub bandwidth: Option<f64>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            form: AffinityForm::Squared,
            bandwidth: None,
        }
    }
}

/// Euclidean distances between the rows of `points`.
pub fn pairwise_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Dense heat-kernel affinities with a zero diagonal.
pub fn heat_affinity(distances: &DMatrix<f64>, bandwidth: f64, form: AffinityForm) -> Result<DMatrix<f64>> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut w = match form {
        AffinityForm::Squared => {
            let scale = 2.0 * bandwidth * bandwidth;
            distances.map(|d| (-d * d / scale).exp())
        }
        AffinityForm::Plain => distances.map(|d| (-d / bandwidth).exp()),
    };
    w.fill_diagonal(0.0);
    Ok(w)
}

/// Indices of the `k` largest entries of `row`, excluding `i` itself; ties go
/// to the lower index.
fn top_k(row: impl Iterator<Item = f64>, i: usize, k: usize, largest: bool) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = row.enumerate().filter(|(j, _)| *j != i).collect();
    cand.sort_by(|a, b| {
        let ord = a.1.partial_cmp(&b.1).expect("finite affinities");
        let ord = if largest { ord.reverse() } else { ord };
        ord.then(a.0.cmp(&b.0))
    });
    cand.truncate(k);
    cand.into_iter().map(|(j, _)| j).collect()
}

/// Symmetric neighbor relation: `(i, j)` is kept when either endpoint lists
/// the other among its `k` nearest (by largest affinity, or by smallest
/// distance when `largest` is false).
fn knn_mask(m: &DMatrix<f64>, k: usize, largest: bool) -> Vec<Vec<bool>> {
    let n = m.nrows();
    let mut keep = vec![vec![false; n]; n];
    for i in 0..n {
        for j in top_k(m.row(i).iter().copied(), i, k, largest) {
            keep[i][j] = true;
            keep[j][i] = true;
        }
    }
    keep
}

/// Sparse symmetric affinity graph over all training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityGraph {
    /// Adjacency lists sorted by neighbor index; weights are symmetric.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub degree: Vec<f64>,
    pub bandwidth: f64,
}

impl AffinityGraph {
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.neighbors[i]
            .binary_search_by_key(&j, |&(n, _)| n)
            .map(|p| self.neighbors[i][p].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut w = DMatrix::zeros(n, n);
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, v) in row {
                w[(i, j)] = v;
            }
        }
        w
    }

    /// Writes `i,j,weight` lines for each undirected edge with `i < j`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,weight")?;
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, w) in row.iter().filter(|(j, _)| *j > i) {
                writeln!(out, "{i},{j},{w}")?;
            }
        }
        Ok(())
    }

    /// Connected components by breadth-first search over positive edges.
    pub fn connected_components(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &(u, w) in &self.neighbors[v] {
                    if w > 0.0 && !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        components
    }
}

/// Keeps `w_ij` iff `j` is among the `k` strongest neighbors of `i` or vice
/// versa.
pub fn knn_sparsify(w: &DMatrix<f64>, k: usize, bandwidth: f64) -> Result<AffinityGraph> {
    if k == 0 {
        return Err(Error::Config("k_neighbors must be at least 1".into()));
    }
    if !w.is_square() {
        return Err(Error::Contract("affinity matrix must be square".into()));
    }
    let keep = knn_mask(w, k, true);
    Ok(assemble(w, &keep, bandwidth))
}

fn assemble(w: &DMatrix<f64>, keep: &[Vec<bool>], bandwidth: f64) -> AffinityGraph {
    let n = w.nrows();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && keep[i][j] {
                // Average guards against asymmetric input rounding.
                neighbors[i].push((j, 0.5 * (w[(i, j)] + w[(j, i)])));
            }
        }
    }
    let degree = neighbors
        .iter()
        .map(|row| row.iter().map(|&(_, v)| v).sum())
        .collect();
    AffinityGraph {
        neighbors,
        degree,
        bandwidth,
    }
}

/// Median length of the undirected k-NN edges; falls back to the smallest
/// positive distance when most neighbors coincide, and to 1 when all points
/// are identical.
pub fn median_knn_distance(distances: &DMatrix<f64>, k: usize) -> f64 {
    let n = distances.nrows();
    let keep = knn_mask(distances, k, false);
    let mut lengths = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if keep[i][j] {
                lengths.push(distances[(i, j)]);
            }
        }
    }
    if lengths.is_empty() {
        return 1.0;
    }
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = lengths.len();
    let median = if m % 2 == 1 {
        lengths[m / 2]
    } else {
        0.5 * (lengths[m / 2 - 1] + lengths[m / 2])
    };
    if median > 0.0 {
        median
    } else {
        lengths.iter().copied().find(|&d| d > 0.0).unwrap_or(1.0)
    }
}

/// Distances, bandwidth, heat affinities and k-NN filtering in one step.
pub fn build_graph(points: &DMatrix<f64>, config: &GraphConfig) -> Result<AffinityGraph> {
    if points.nrows() == 0 {
        return Err(Error::Contract("cannot build a graph over zero points".into()));
    }
    let d = pairwise_distances(points);
    let bandwidth = match config.bandwidth {
        Some(b) => b,
        None => median_knn_distance(&d, config.k_neighbors.max(1)),
    };
    let w = heat_affinity(&d, bandwidth, config.form)?;
    knn_sparsify(&w, config.k_neighbors, bandwidth)
}

/// Unnormalized graph Laplacian `L = D − W` in sparse row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLaplacian {
    /// Row-wise `(column, value)` entries including the diagonal.
    rows: Vec<Vec<(usize, f64)>>,
}

pub fn laplacian(graph: &AffinityGraph) -> GraphLaplacian {
    let rows = graph
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut row: Vec<(usize, f64)> = nbrs.iter().map(|&(j, w)| (j, -w)).collect();
            let pos = row.partition_point(|&(j, _)| j < i);
            row.insert(pos, (i, graph.degree[i]));
            row
        })
        .collect();
    GraphLaplacian { rows }
}

impl GraphLaplacian {
    /// All-zero Laplacian of a graph without edges.
    pub fn empty(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| vec![(i, 0.0)]).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                l[(i, j)] = v;
            }
        }
        l
    }

    pub fn mul_vec(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(j, v)| v * f[j]).sum::<f64>()),
        )
    }

    /// `L · M` for a dense `M` with `n` rows.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.n());
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                for c in 0..m.ncols() {
                    out[(i, c)] += v * m[(j, c)];
                }
            }
        }
        out
    }

    /// `fᵀ L f`.
    pub fn quadratic_form(&self, f: &DVector<f64>) -> f64 {
        f.dot(&self.mul_vec(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn distances() {
        let p = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
        let d = pairwise_distances(&p);
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(0, 2)], 0.0);
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn triangle_inequality() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-2.0..2.0));
        let d = pairwise_distances(&p);
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    assert!(d[(i, k)] <= d[(i, j)] + d[(j, k)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn affinity_values() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        for form in [AffinityForm::Squared, AffinityForm::Plain] {
            let w = heat_affinity(&d, 1.0, form).unwrap();
            assert_eq!(w[(0, 1)], 1.0);
            assert_eq!(w[(0, 0)], 0.0);
        }
        let t = 0.7;
        let d = DMatrix::from_row_slice(2, 2, &[0.0, t * 2f64.sqrt(), t * 2f64.sqrt(), 0.0]);
        let w = heat_affinity(&d, t, AffinityForm::Squared).unwrap();
        assert_abs_diff_eq!(w[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(w[(0, 1)], 0.3679, epsilon = 1e-4);
        assert!(heat_affinity(&d, 0.0, AffinityForm::Squared).is_err());
    }

    #[test]
    fn one_nearest_neighbor_on_a_line() {
        let p = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        let d = pairwise_distances(&p);
        let w = heat_affinity(&d, 1.0, AffinityForm::Squared).unwrap();
        let g = knn_sparsify(&w, 1, 1.0).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert!(g.weight(0, 1) > 0.0 && g.weight(1, 2) > 0.0);
        assert_eq!(g.weight(0, 2), 0.0);
        assert_eq!(g.weight(0, 1), w[(0, 1)]);
    }

    #[test]
    fn large_k_keeps_everything() {
        let p = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 3.0, 7.0]);
        let w = heat_affinity(&pairwise_distances(&p), 2.0, AffinityForm::Squared).unwrap();
        let g = knn_sparsify(&w, 3, 2.0).unwrap();
        assert_eq!(g.to_dense(), w);
        assert!(knn_sparsify(&w, 0, 2.0).is_err());
    }

    #[test]
    fn two_node_laplacian() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let l = laplacian(&knn_sparsify(&w, 1, 1.0).unwrap());
        assert_eq!(l.to_dense(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let f = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(l.quadratic_form(&f), 4.0);
    }

    #[test]
    fn median_bandwidth_on_line() {
        // 1-NN edges are {0-1, 1-2}: lengths 1 and 2.
        let p = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(median_knn_distance(&pairwise_distances(&p), 1), 1.5);
        let same = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        assert_eq!(median_knn_distance(&pairwise_distances(&same), 1), 1.0);
    }

    #[test]
    fn edge_list_dump() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let g = knn_sparsify(&w, 1, 1.0).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,weight\n0,1,0.5\n");
    }

    #[test]
    fn degrees_bounded_by_k_and_n() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p = DMatrix::from_fn(25, 2, |_, _| rng.random_range(0.0..1.0));
        let g = build_graph(&p, &GraphConfig::default()).unwrap();
        for row in &g.neighbors {
            assert!(row.len() >= 5 && row.len() <= 24);
        }
    }
}
