//! Gaussian-cluster vector data and its on-disk container.
//!
//! Each class `k` is `N(c_k, I)`. Centers are `(separation / √2) · Q e_k` for
//! a seeded random orthogonal `Q`, so every pair of centers sits exactly
//! `separation` noise standard deviations apart. When `dim < num_classes` the
//! centers are random unit directions scaled the same way instead.
//!
//! Container layout (little-endian):
//!
//! ```text
//! magic b"SSSYN\0\0\0" | version u32 = 1 | n u64 | dim u64 | num_classes u64
//! n × ( id u64 | label i64 (−1 = none) | dim × f64 )
//! ```

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::rng::{stream_rng, Stream};
use super::{DataError, Dataset, Sample};

pub const SYNTHETIC_MAGIC: &[u8; 8] = b"SSSYN\0\0\0";
pub const SYNTHETIC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Distance between class centers in units of the noise std.
    pub separation: f64,
    pub seed: u64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn centers(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(spec.seed, Stream::Synthetic, &[u64::MAX]);
    let (k, d) = (spec.num_classes, spec.dim);
    let scale = spec.separation / std::f64::consts::SQRT_2;
    // Gram-Schmidt over Gaussian draws gives orthonormal directions when
    // there is room for them.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        if d >= k {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    basis.into_iter().map(|v| v.into_iter().map(|x| x * scale).collect()).collect()
}

/// Draws one split of the cluster dataset. Centers depend on `spec.seed`
/// only, so different splits share them.
pub fn make_synthetic_split(spec: &SyntheticSpec, split: u64) -> Result<Dataset, DataError> {
    if !(spec.separation >= 0.0) || spec.num_classes == 0 || spec.dim == 0 {
        return Err(DataError::InvalidConfig(format!("invalid synthetic spec {spec:?}")));
    }
    let cs = centers(spec);
    let mut rng = stream_rng(spec.seed, Stream::Synthetic, &[split]);
    let mut rows = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (label, c) in cs.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let x: Vec<f64> = c.iter().map(|m| m + gaussian(&mut rng)).collect();
            rows.push((label, x));
        }
    }
    rows.shuffle(&mut rng);
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (label, x))| Sample { id: i as u64, payload: Tensor::vector(x), label: Some(label) })
        .collect();
    Ok(Dataset { samples, num_classes: spec.num_classes })
}

/// `num_classes` Gaussian clusters with `samples_per_class` points each.
pub fn make_synthetic(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    make_synthetic_split(&SyntheticSpec { num_classes, dim, samples_per_class, separation, seed }, 0)
}

pub fn write_vector_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<(), DataError> {
    let dim = ds.samples.first().map_or(0, |s| s.payload.numel());
    if ds.samples.iter().any(|s| s.payload.rank() != 1 || s.payload.numel() != dim) {
        return Err(DataError::Format("vector container needs equal-length rank-1 payloads".into()));
    }
    w.write_all(SYNTHETIC_MAGIC)?;
    w.write_all(&SYNTHETIC_VERSION.to_le_bytes())?;
    for v in [ds.samples.len() as u64, dim as u64, ds.num_classes as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in &ds.samples {
        w.write_all(&s.id.to_le_bytes())?;
        w.write_all(&s.label.map_or(-1i64, |l| l as i64).to_le_bytes())?;
        for v in s.payload.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_vector_dataset<R: Read>(mut r: R) -> Result<Dataset, DataError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SYNTHETIC_MAGIC {
        return Err(DataError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != SYNTHETIC_VERSION {
        return Err(DataError::Format("unsupported version".into()));
    }
    let mut b8 = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64, DataError> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let n = next_u64(&mut r)? as usize;
    let dim = next_u64(&mut r)? as usize;
    let num_classes = next_u64(&mut r)? as usize;
    let mut samples = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let id = next_u64(&mut r)?;
        let label = next_u64(&mut r)? as i64;
        let label = if label < 0 { None } else { Some(label as usize) };
        if label.is_some_and(|l| l >= num_classes) {
            return Err(DataError::Format(format!("label of sample {id} out of range")));
        }
        let mut x = Vec::with_capacity(dim);
        for _ in 0..dim {
            x.push(f64::from_bits(next_u64(&mut r)?));
        }
        samples.push(Sample { id, payload: Tensor::vector(x), label });
    }
    Ok(Dataset { samples, num_classes })
}
