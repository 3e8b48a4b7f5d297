//! Attention diagnostics: entropy, logit drift, context sensitivity and rank
//! correlation between layer profiles.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_forward, PositionIndex};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Xoshiro256StarStar;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-query Shannon entropy (nats) and its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub per_token: Vec<f64>,
    pub mean: f64,
}

/// Shannon entropy of every row of a row-stochastic matrix, `0 ln 0 = 0`.
pub fn attention_entropy(weights: &Matrix) -> Result<EntropySummary> {
    if weights.rows() == 0 {
        return Err(Error::InvalidInput("entropy of an empty weight matrix".into()));
    }
    let mut per_token = Vec::with_capacity(weights.rows());
    for (i, row) in weights.iter_rows().enumerate() {
        if row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput(format!("row {i} has a negative or NaN weight")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!("row {i} sums to {sum}")));
        }
        per_token.push(-row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>());
    }
    let mean = per_token.iter().sum::<f64>() / per_token.len() as f64;
    Ok(EntropySummary { per_token, mean })
}

/// `||probe - orig||_F / ||orig||_F`.
pub fn attention_logits_difference(w_probe: &Matrix, w_orig: &Matrix) -> Result<f64> {
    let diff = w_probe.sub(w_orig)?;
    let denom = w_orig.frobenius_norm();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::InvalidInput(format!("original logits have norm {denom}")));
    }
    Ok(diff.frobenius_norm() / denom)
}

/// `|h_probe - h_orig| / |h_orig|`.
pub fn context_sensitivity_score(h_probe: f64, h_orig: f64) -> Result<f64> {
    if h_orig == 0.0 || !h_orig.is_finite() {
        return Err(Error::InvalidInput(format!("reference entropy is {h_orig}")));
    }
    Ok((h_probe - h_orig).abs() / h_orig.abs())
}

/// One-based ranks; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("need at least two values".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in rank input".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidInput("constant sequence has no rank variance".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean attention entropy for `num_queries` queries against `num_keys` keys,
/// with query and key coordinates drawn standard normal from `seed` and the
/// usual `1/sqrt(dim)` temperature; no positions, no mask.
pub fn synthetic_attention_entropy(seed: u64, num_queries: usize, num_keys: usize, dim: usize) -> Result<f64> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let q = Matrix::from_vec(num_queries, dim, rng.normal_vec(num_queries * dim, 1.0))?;
    let k = Matrix::from_vec(num_keys, dim, rng.normal_vec(num_keys * dim, 1.0))?;
    let v = Matrix::zeros(num_keys, 2);
    let freqs = vec![1.0; dim / 2];
    let pq = PositionIndex::new(vec![0; num_queries]);
    let pk = PositionIndex::new(vec![0; num_keys]);
    let rec = attention_forward(&q, &k, &v, &pq, &pk, 1, None, &freqs, None)?;
    Ok(attention_entropy(&rec.weights)?.mean)
}
