//! Minimum-redundancy maximum-relevance feature selection.
//!
//! Relevance of a feature is its mutual information with the class labels;
//! redundancy is its average mutual information with the features already
//! chosen. Selection is greedy: the first pick maximizes relevance, every
//! later pick maximizes
//!
//! ```text
//! w * MI(f; labels) - (1 - w) * mean_{s in S} MI(f; s)
//! ```
//!
//! with ties resolved toward the lowest feature index.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::preprocess::DiscreteMatrix;

/// Plug-in mutual information estimate in bits.
pub fn mutual_information(x: &[u8], y: &[u8]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "mutual information of sequences with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Contract("mutual information of empty sequences".into()));
    }
    Ok(mi_unchecked(x, y))
}

fn mi_unchecked(x: &[u8], y: &[u8]) -> f64 {
    let nx = *x.iter().max().unwrap() as usize + 1;
    let ny = *y.iter().max().unwrap() as usize + 1;
    let mut joint = vec![0u32; nx * ny];
    for (&a, &b) in x.iter().zip(y) {
        joint[a as usize * ny + b as usize] += 1;
    }
    let mut px = vec![0u32; nx];
    let mut py = vec![0u32; ny];
    for a in 0..nx {
        for b in 0..ny {
            let c = joint[a * ny + b];
            px[a] += c;
            py[b] += c;
        }
    }
    let n = x.len() as f64;
    let mut mi = 0.0;
    for a in 0..nx {
        for b in 0..ny {
            let c = joint[a * ny + b];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            // p(a,b) log(p(a,b) / (p(a) p(b))) with counts: c/n log(c n / (ca cb))
            mi += c / n * (c * n / (px[a] as f64 * py[b] as f64)).log2();
        }
    }
    mi.max(0.0)
}

/// Empirical entropy in bits.
pub fn entropy(x: &[u8]) -> f64 {
    let mut counts = [0u32; 256];
    for &v in x {
        counts[v as usize] += 1;
    }
    let n = x.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrmrSelection {
    /// Feature indices in pick order.
    pub selected: Vec<usize>,
    /// Objective value of each pick.
    pub scores: Vec<f64>,
    pub relevance_weight: f64,
}

/// Greedy mRMR over discretized features. `labels` holds one class code per
/// row of `features`.
pub fn mrmr_select(
    features: &DiscreteMatrix,
    labels: &[u8],
    k: usize,
    relevance_weight: f64,
) -> Result<MrmrSelection> {
    let p = features.ncols();
    if k == 0 || k > p {
        return Err(Error::Config(format!(
            "cannot select {k} features out of {p}"
        )));
    }
    if labels.len() != features.nrows() {
        return Err(Error::Contract(format!(
            "{} labels for {} rows",
            labels.len(),
            features.nrows()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Contract("no labeled samples".into()));
    }
    if !(relevance_weight > 0.0 && relevance_weight <= 1.0) {
        return Err(Error::Config(format!(
            "relevance weight {relevance_weight} outside (0, 1]"
        )));
    }

    let relevance: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| mi_unchecked(features.column(j), labels))
        .collect();
    let mut redundancy_sum = vec![0.0; p];
    let mut chosen = vec![false; p];
    let mut selected = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);

    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if chosen[j] {
                continue;
            }
            let score = if step == 0 {
                relevance_weight * relevance[j]
            } else {
                relevance_weight * relevance[j]
                    - (1.0 - relevance_weight) * redundancy_sum[j] / step as f64
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let (pick, score) = best.expect("k <= p leaves a candidate");
        chosen[pick] = true;
        selected.push(pick);
        scores.push(score);

        if step + 1 < k {
            let picked = features.column(pick);
            let increments: Vec<(usize, f64)> = (0..p)
                .into_par_iter()
                .filter(|&j| !chosen[j])
                .map(|j| (j, mi_unchecked(features.column(j), picked)))
                .collect();
            for (j, mi) in increments {
                redundancy_sum[j] += mi;
            }
        }
    }

    Ok(MrmrSelection {
        selected,
        scores,
        relevance_weight,
    })
}
