use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::matmul_nt;
use crate::autodiff::Tensor;

use super::{l2_normalize_rows, DiagError};

/// Weighted kNN vote: each of the `k` most cosine-similar training rows
/// votes for its label with weight `exp(sim / temperature)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 20, temperature: 0.07 }
    }
}

/// Fraction of queries whose vote matches `query_labels`. Rows are
/// ℓ2-normalized here, so already-normalized inputs are fine too. `k` is
/// clamped to the training set size; vote ties go to the smaller label.
pub fn knn_monitor(
    train_feats: &Tensor,
    train_labels: &[usize],
    query_feats: &Tensor,
    query_labels: &[usize],
    cfg: KnnConfig,
) -> Result<f64, DiagError> {
    if train_feats.rank() != 2 || query_feats.rank() != 2 {
        return Err(DiagError::Shape("features must be [n, d]".into()));
    }
    let (n, d) = (train_feats.shape()[0], train_feats.shape()[1]);
    let q = query_feats.shape()[0];
    if n == 0 || q == 0 || cfg.k == 0 {
        return Err(DiagError::Empty);
    }
    if query_feats.shape()[1] != d || train_labels.len() != n || query_labels.len() != q {
        return Err(DiagError::Shape(format!(
            "train {:?} / {} labels, query {:?} / {} labels",
            train_feats.shape(),
            train_labels.len(),
            query_feats.shape(),
            query_labels.len()
        )));
    }
    let classes = train_labels.iter().chain(query_labels).copied().max().unwrap_or(0) + 1;
    let k = cfg.k.min(n);
    let (tn, qn) = (l2_normalize_rows(train_feats), l2_normalize_rows(query_feats));
    let sims = matmul_nt(qn.data(), tn.data(), q, d, n);
    let mut correct = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut votes = vec![0.0; classes];
    for (row, &truth) in sims.chunks(n).zip(query_labels) {
        order.clear();
        order.extend(0..n);
        order.select_nth_unstable_by(k - 1, |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        votes.iter_mut().for_each(|v| *v = 0.0);
        // subtracting the top similarity keeps exp() in range without
        // changing the argmax
        let top = order[..k].iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        for &j in &order[..k] {
            votes[train_labels[j]] += ((row[j] - top) / cfg.temperature).exp();
        }
        let mut best = 0;
        for c in 1..classes {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        if best == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / q as f64)
}
