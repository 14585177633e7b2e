//! CIFAR-10 binary records: 1 label byte followed by 3072 pixel bytes, planar
//! R, G, B, each plane 32×32 row-major. Pixels are scaled to `[0, 1]` by /255.

use std::path::Path;

use crate::autodiff::Tensor;

use super::{DataError, Dataset, Sample};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Parses a stream of records. Sample ids start at `first_id`.
pub fn parse_cifar10(bytes: &[u8], first_id: u64) -> Result<Vec<Sample>, DataError> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(DataError::Truncated { len: bytes.len(), record: CIFAR_RECORD });
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if label as usize >= CIFAR_CLASSES {
                return Err(DataError::BadLabel { record: i, label });
            }
            let pixels = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(Sample {
                id: first_id + i as u64,
                payload: Tensor::new(vec![3, CIFAR_SIDE, CIFAR_SIDE], pixels).expect("fixed record size"),
                label: Some(label as usize),
            })
        })
        .collect()
}

/// Inverse of [`parse_cifar10`] for payloads on the /255 grid.
pub fn serialize_cifar10(samples: &[Sample]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(samples.len() * CIFAR_RECORD);
    for s in samples {
        if s.payload.shape() != [3, CIFAR_SIDE, CIFAR_SIDE] {
            return Err(DataError::Format(format!("sample {} is not a 3x32x32 image", s.id)));
        }
        let label = s.label.filter(|&l| l < CIFAR_CLASSES).ok_or_else(|| {
            DataError::Format(format!("sample {} needs a label below {}", s.id, CIFAR_CLASSES))
        })?;
        out.push(label as u8);
        out.extend(s.payload.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

/// Reads the five training batches (or the test batch) from `root`, keeping
/// at most `limit` samples.
pub fn load_cifar10_dir(root: &Path, train: bool, limit: Option<usize>) -> Result<Dataset, DataError> {
    let files: Vec<&str> = if train { TRAIN_FILES.to_vec() } else { vec![TEST_FILE] };
    let mut samples = Vec::new();
    for f in files {
        if limit.is_some_and(|l| samples.len() >= l) {
            break;
        }
        let bytes = std::fs::read(root.join(f))?;
        samples.extend(parse_cifar10(&bytes, samples.len() as u64)?);
    }
    if let Some(l) = limit {
        samples.truncate(l);
    }
    Ok(Dataset { samples, num_classes: CIFAR_CLASSES })
}
