//! Summary statistics and the paired Wilcoxon signed-rank test.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest number of non-zero differences evaluated with the exact null
/// distribution; above it the tie-corrected normal approximation is used.
pub const EXACT_MAX_N: usize = 25;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n − 1` denominator); 0 for fewer than two
/// values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub exact: bool,
    /// All differences were zero.
    pub degenerate: bool,
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 6 {
        return Err(Error::Contract(format!(
            "paired test needs at least 6 pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            n: 0,
            exact: true,
            degenerate: true,
        });
    }

    // Average ranks of |d|, doubled so tied ranks stay integral.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut doubled_rank = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && diffs[order[end]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        // ranks start+1 ..= end, average (start + 1 + end) / 2
        let r2 = (start + 1 + end) as u64;
        for &idx in &order[start..end] {
            doubled_rank[idx] = r2;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    let w_plus2: u64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| doubled_rank[i]).sum();
    let w_plus = w_plus2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let p = exact_two_sided(&doubled_rank, w_plus2);
        return Ok(WilcoxonResult {
            p_value: p,
            w_plus,
            n,
            exact: true,
            degenerate: false,
        });
    }

    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (w_plus - mu) / var.sqrt();
        erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(WilcoxonResult {
        p_value: p,
        w_plus,
        n,
        exact: false,
        degenerate: false,
    })
}

/// Exact permutation distribution of the (doubled) positive rank sum under
/// random signs.
fn exact_two_sided(doubled_rank: &[u64], observed: u64) -> f64 {
    let total: u64 = doubled_rank.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_rank {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(doubled_rank.len() as i32);
    let lower: f64 = counts[..=observed as usize].iter().sum::<f64>() / all;
    let upper: f64 = counts[observed as usize..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}
