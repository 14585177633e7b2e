use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Tensor};
use crate::data::{stream_rng, Stream};

use super::DiagError;

/// Softmax-regression probe trained with minibatch SGD + momentum on
/// standardized features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 0.1, momentum: 0.9, weight_decay: 0.0, batch_size: 64, seed: 0 }
    }
}

/// Held-out accuracy of a linear classifier on frozen features.
pub fn linear_probe(
    train_feats: &Tensor,
    train_labels: &[usize],
    test_feats: &Tensor,
    test_labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64, DiagError> {
    if train_feats.rank() != 2 || test_feats.rank() != 2 || train_feats.shape()[1] != test_feats.shape()[1] {
        return Err(DiagError::Shape(format!("{:?} vs {:?}", train_feats.shape(), test_feats.shape())));
    }
    let (n, d) = (train_feats.shape()[0], train_feats.shape()[1]);
    if n == 0 || test_feats.shape()[0] == 0 {
        return Err(DiagError::Empty);
    }
    if train_labels.len() != n || test_labels.len() != test_feats.shape()[0] {
        return Err(DiagError::Shape("label count does not match feature rows".into()));
    }
    let classes = train_labels.iter().chain(test_labels).copied().max().unwrap_or(0) + 1;
    let mut seen = vec![false; classes];
    train_labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(DiagError::DegenerateLabels("training labels contain fewer than two classes".into()));
    }

    let (mean, inv_std) = column_stats(train_feats);
    let train = standardize(train_feats, &mean, &inv_std);
    let test = standardize(test_feats, &mean, &inv_std);

    let mut w = Tensor::zeros(&[classes, d]);
    let mut b = Tensor::zeros(&[classes]);
    let mut bufs = [vec![0.0; classes * d], vec![0.0; classes]];
    let mut rng = stream_rng(cfg.seed, Stream::Probe, &[]);
    let mut order: Vec<usize> = (0..n).collect();
    let bs = cfg.batch_size.clamp(1, n);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(bs) {
            let mut onehot = Tensor::zeros(&[idx.len(), classes]);
            for (r, &i) in idx.iter().enumerate() {
                onehot.data_mut()[r * classes + train_labels[i]] = 1.0;
            }
            let mut tape = Tape::new();
            let x = tape.constant(train.gather_rows(idx))?;
            let y = tape.constant(onehot)?;
            let wv = tape.param(ParamId(0), w.clone())?;
            let bv = tape.param(ParamId(1), b.clone())?;
            let logits = tape.affine(x, wv, Some(bv))?;
            let ls = tape.log_softmax(logits)?;
            let picked = tape.mul(y, ls)?;
            let s = tape.sum(picked)?;
            let loss = tape.scale(s, -1.0 / idx.len() as f64)?;
            let grads = tape.backward(loss)?;
            for (k, (p, buf)) in [&mut w, &mut b].into_iter().zip(bufs.iter_mut()).enumerate() {
                let g = grads.get(ParamId(k)).expect("probe params reach the loss");
                for ((v, gi), m) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
                    *m = cfg.momentum * *m + gi + cfg.weight_decay * *v;
                    *v -= cfg.lr * *m;
                }
            }
        }
    }

    let mut correct = 0;
    for (r, &truth) in test_labels.iter().enumerate() {
        let x = test.row(r);
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..classes {
            let s = b.data()[c] + w.row(c).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if s > best.1 {
                best = (c, s);
            }
        }
        if best.0 == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_labels.len() as f64)
}

fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for row in x.data().chunks(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for row in x.data().chunks(d) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    // constant columns become all-zero
    let inv = var.iter().map(|s| (s / n as f64).sqrt()).map(|s| if s > 1e-12 { 1.0 / s } else { 0.0 }).collect();
    (mean, inv)
}

fn standardize(x: &Tensor, mean: &[f64], inv_std: &[f64]) -> Tensor {
    let d = mean.len();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_features_predict_majority_class() {
        let x = Tensor::full(&[10, 3], 0.7);
        let y = [0, 0, 0, 0, 0, 0, 1, 1, 2, 2];
        let acc = linear_probe(&x, &y, &x, &y, &ProbeConfig::default()).unwrap();
        assert_eq!(acc, 0.6);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Tensor::full(&[4, 2], 1.0);
        assert!(matches!(
            linear_probe(&x, &[1, 1, 1, 1], &x, &[1, 1, 1, 1], &ProbeConfig::default()),
            Err(DiagError::DegenerateLabels(_))
        ));
    }
}
