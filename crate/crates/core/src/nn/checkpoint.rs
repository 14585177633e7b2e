//! Model checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"SSCKPT\0\0"
//! version      u32       1
//! header_len   u64
//! header       JSON      { "spec": ModelSpec, "predictor_mode": ..,
//!                          "params": [{ "name", "shape", "trainable" }],
//!                          "buffers": [{ "name", "len" }] }
//! payload      f64 LE    every parameter in header order, then every buffer
//! ```
//!
//! Buffers are BN running statistics named `bn<i>.running_mean` /
//! `bn<i>.running_var` in model order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelSpec, PredictorMode, SimSiamModel};
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    predictor_mode: PredictorMode,
    params: Vec<ParamEntry>,
    buffers: Vec<BufferEntry>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct BufferEntry {
    name: String,
    len: usize,
}

fn header_of(model: &SimSiamModel) -> Header {
    let params = model
        .store
        .iter()
        .map(|(_, p)| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), trainable: p.trainable })
        .collect();
    let mut buffers = Vec::new();
    for (i, bn) in model.batch_norms().into_iter().enumerate() {
        buffers.push(BufferEntry { name: format!("bn{i}.running_mean"), len: bn.running_mean.len() });
        buffers.push(BufferEntry { name: format!("bn{i}.running_var"), len: bn.running_var.len() });
    }
    Header { spec: model.spec().clone(), predictor_mode: model.predictor_mode(), params, buffers }
}

pub fn write_checkpoint<W: Write>(model: &SimSiamModel, mut w: W) -> Result<(), NnError> {
    let header = serde_json::to_vec(&header_of(model)).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(model.store.num_scalars() * 8);
    for (_, p) in model.store.iter() {
        p.value.data().iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
    }
    for bn in model.batch_norms() {
        for v in bn.running_mean.iter().chain(&bn.running_var) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SimSiamModel, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| NnError::Checkpoint("header too large".into()))?;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;

    let mut model = SimSiamModel::build(header.spec.clone(), header.predictor_mode)?;
    let expect = header_of(&model);
    if expect.params != header.params || expect.buffers != header.buffers {
        return Err(NnError::Checkpoint("parameter table does not match the stored spec".into()));
    }
    let mut next = || -> Result<f64, NnError> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    for (_, p) in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v = next()?;
        }
    }
    for bn in model.batch_norms_mut() {
        for v in bn.running_mean.iter_mut().chain(bn.running_var.iter_mut()) {
            *v = next()?;
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SimSiamModel, path: &Path) -> Result<(), NnError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SimSiamModel, NnError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use crate::nn::Mode;

    #[test]
    fn round_trip_preserves_params_and_buffers() {
        let mut m = SimSiamModel::new(ModelSpec::toy(5, 10, 8), PredictorMode::FrozenRandom, 4).unwrap();
        // move running stats away from their defaults
        let mut t = Tape::new();
        let bind = m.store.bind(&mut t).unwrap();
        let x = t.constant(Tensor::new(vec![4, 5], (0..20).map(|i| i as f64 * 0.3).collect()).unwrap()).unwrap();
        m.encode(&mut t, &bind, x, Mode::Train).unwrap();

        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.spec(), m.spec());
        assert_eq!(back.predictor_mode(), PredictorMode::FrozenRandom);
        assert_eq!(back.store.max_abs_diff(&m.store), Some(0.0));
        for (a, b) in back.batch_norms().iter().zip(m.batch_norms()) {
            assert_eq!(a.running_mean, b.running_mean);
            assert_eq!(a.running_var, b.running_var);
        }
        assert!(back.store.iter().all(|(id, p)| p.trainable == m.store.get(id).trainable));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = SimSiamModel::new(ModelSpec::toy(3, 4, 4), PredictorMode::Learned, 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(NnError::Checkpoint(_))));
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(NnError::Io(_))));
    }
}
