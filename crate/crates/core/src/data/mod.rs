//! Datasets and per-sample view generation.

mod augment;
mod cifar;
mod rng;
mod synthetic;

use std::path::PathBuf;

pub use augment::{augment, AugmentationConfig, JitterStrengths};
pub use cifar::{
    load_cifar10_dir, parse_cifar10, serialize_cifar10, CIFAR_CLASSES, CIFAR_PIXELS, CIFAR_RECORD, CIFAR_SIDE, TEST_FILE,
    TRAIN_FILES,
};
pub use rng::{derive_seed, stream_rng, RngPath, Stream};
pub use synthetic::{
    make_synthetic, make_synthetic_split, read_vector_dataset, write_vector_dataset, SyntheticSpec, SYNTHETIC_MAGIC,
    SYNTHETIC_VERSION,
};

use crate::autodiff::Tensor;

/// Environment variable naming the directory that holds dataset files.
pub const DATA_ROOT_ENV: &str = "SIMSIAM_DATA_ROOT";

pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("stream of {len} bytes is not a whole number of {record}-byte records")]
    Truncated { len: usize, record: usize },
    #[error("record {record} has label byte {label}, expected 0..=9")]
    BadLabel { record: usize, label: u8 },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid data config: {0}")]
    InvalidConfig(String),
    #[error("payload of shape {0:?} is neither a vector nor a [C, H, W] image")]
    UnsupportedPayload(Vec<usize>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    /// `[C, H, W]` image in `[0, 1]` or a `[dim]` feature vector.
    pub payload: Tensor,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels with unlabeled samples mapped to `usize::MAX`.
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.unwrap_or(usize::MAX)).collect()
    }

    /// Un-augmented payloads as a model input batch (see [`to_model_layout`]).
    pub fn inputs(&self) -> Result<Tensor, DataError> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx, None, 0, 0, 0)
    }

    /// Stacks the samples at `indices`, each augmented with
    /// `RngPath(seed, sample.id, epoch, view)` when `cfg` is given.
    pub fn batch(
        &self,
        indices: &[usize],
        cfg: Option<&AugmentationConfig>,
        seed: u64,
        epoch: u64,
        view: u64,
    ) -> Result<Tensor, DataError> {
        let views = indices
            .iter()
            .map(|&i| {
                let s = &self.samples[i];
                match cfg {
                    Some(c) => augment(s, c, RngPath::new(seed, s.id, epoch, view)),
                    None => Ok(s.payload.clone()),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let stacked = Tensor::stack(&views).map_err(|e| DataError::Format(e.to_string()))?;
        Ok(to_model_layout(stacked))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for s in &self.samples {
            if !s.payload.all_finite() {
                return Err(DataError::Format(format!("sample {} has a non-finite payload", s.id)));
            }
            if s.label.is_some_and(|l| l >= self.num_classes) {
                return Err(DataError::Format(format!("sample {} label out of range", s.id)));
            }
        }
        Ok(())
    }
}

/// `[N, C, H, W]` → `[N, H, W, C]`; other ranks pass through.
pub fn to_model_layout(x: Tensor) -> Tensor {
    if x.rank() != 4 {
        return x;
    }
    let s = x.shape().to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[((b * h + y) * w + xx) * c + ch] = src[((b * c + ch) * h + y) * w + xx];
                }
            }
        }
    }
    Tensor::new(vec![n, h, w, c], out).expect("same element count")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nchw_to_nhwc() {
        let x = Tensor::new(vec![1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = to_model_layout(x);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn views_use_distinct_paths() {
        let ds = make_synthetic(2, 8, 4, 5.0, 3).unwrap();
        let cfg = AugmentationConfig::simsiam();
        let idx = [0, 1, 2];
        let a = ds.batch(&idx, Some(&cfg), 1, 0, 0).unwrap();
        let b = ds.batch(&idx, Some(&cfg), 1, 0, 1).unwrap();
        assert_eq!(a.shape(), &[3, 8]);
        assert_ne!(a, b);
        assert_eq!(a, ds.batch(&idx, Some(&cfg), 1, 0, 0).unwrap());
    }
}
