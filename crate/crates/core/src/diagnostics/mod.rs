//! Collapse detection and representation-quality monitors.

mod knn;
mod probe;
mod verdict;

use serde::{Deserialize, Deserializer, Serialize};

pub use knn::{knn_monitor, KnnConfig};
pub use probe::{linear_probe, ProbeConfig};
pub use verdict::{collapse_verdict, CollapseVerdict, VerdictConfig, VerdictEvidence, VerdictStatus};

use crate::autodiff::{AutodiffError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DiagError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("empty feature set")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("need at least {need} recorded steps, got {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One line of `metrics.jsonl`. Non-finite losses serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub loss: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub output_std: f64,
    pub knn_acc: Option<f64>,
    pub wallclock_ms: f64,
}

fn nullable_f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl MetricsRecord {
    /// Equality ignoring `wallclock_ms`; NaN equals NaN.
    pub fn same_values(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        self.step == other.step
            && self.epoch == other.epoch
            && eq(self.lr, other.lr)
            && eq(self.loss, other.loss)
            && eq(self.output_std, other.output_std)
            && match (self.knn_acc, other.knn_acc) {
                (Some(a), Some(b)) => eq(a, b),
                (None, None) => true,
                _ => false,
            }
    }
}

/// Rows of `x` divided by `max(‖row‖, 1e-12)`.
pub fn l2_normalize_rows(x: &Tensor) -> Tensor {
    let d = x.last_dim().max(1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Mean over channels of the per-channel (unbiased) standard deviation of
/// the ℓ2-normalized rows of `z[n, d]`.
pub fn normalized_output_std(z: &Tensor) -> Result<f64, DiagError> {
    if z.rank() != 2 {
        return Err(DiagError::Shape(format!("expected [n, d], got {:?}", z.shape())));
    }
    let (n, d) = (z.shape()[0], z.shape()[1]);
    if n < 2 {
        return Err(DiagError::TooFewRows { need: 2, got: n });
    }
    let zn = l2_normalize_rows(z);
    let mut mean = vec![0.0; d];
    for row in zn.data().chunks(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = vec![0.0; d];
    for row in zn.data().chunks(d) {
        for ((s, v), m) in ss.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    Ok(ss.iter().map(|s| (s / (n - 1) as f64).sqrt()).sum::<f64>() / d as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_have_zero_std() {
        let z = Tensor::from_rows(&vec![vec![0.3, -1.0, 2.0]; 5]).unwrap();
        assert_eq!(normalized_output_std(&z).unwrap(), 0.0);
    }

    #[test]
    fn single_row_is_an_error() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(normalized_output_std(&z), Err(DiagError::TooFewRows { .. })));
    }

    #[test]
    fn two_opposite_rows() {
        // normalized rows ±e1: channel 0 has std √2, channel 1 has 0
        let z = Tensor::from_rows(&[vec![2.0, 0.0], vec![-5.0, 0.0]]).unwrap();
        let s = normalized_output_std(&z).unwrap();
        assert!((s - std::f64::consts::SQRT_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn record_json_round_trip_with_nan() {
        let r = MetricsRecord { step: 3, epoch: 0, lr: 0.1, loss: f64::NAN, output_std: 0.2, knn_acc: None, wallclock_ms: 1.0 };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"loss\":null"));
        let back: MetricsRecord = serde_json::from_str(&s).unwrap();
        assert!(back.same_values(&r));
    }
}
