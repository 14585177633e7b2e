//! Per-image target vectors η.
//!
//! Snapshot layout (little-endian):
//!
//! ```text
//! magic b"ETABANK1" | n u64 | dim u64 | mode u8 (0 direct, 1 moving average)
//! | momentum f64 | normalize u8 | n × ( id u64 | dim × f64 )
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::HypothesisError;

pub const BANK_MAGIC: &[u8; 8] = b"ETABANK1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaUpdate {
    /// `η ← v`
    Direct,
    /// `η ← m·η + (1 − m)·v`
    MovingAverage { momentum: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtaBank {
    dim: usize,
    update: EtaUpdate,
    normalize: bool,
    index: HashMap<u64, usize>,
    ids: Vec<u64>,
    values: Vec<f64>,
}

impl EtaBank {
    /// Zero-initialized bank with one entry per id. Fails instead of
    /// allocating more than `max_bytes`.
    pub fn new(ids: &[u64], dim: usize, update: EtaUpdate, normalize: bool, max_bytes: usize) -> Result<Self, HypothesisError> {
        if let EtaUpdate::MovingAverage { momentum } = update {
            if !(0.0..=1.0).contains(&momentum) {
                return Err(HypothesisError::InvalidConfig(format!("momentum {momentum} outside [0, 1]")));
            }
        }
        let bytes = ids.len().saturating_mul(dim).saturating_mul(8);
        if bytes > max_bytes {
            return Err(HypothesisError::BankTooLarge { bytes, limit: max_bytes });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(HypothesisError::InvalidConfig(format!("duplicate image id {id}")));
            }
        }
        Ok(Self { dim, update, normalize, index, ids: ids.to_vec(), values: vec![0.0; ids.len() * dim] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn update_mode(&self) -> EtaUpdate {
        self.update
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    fn slot(&self, id: u64) -> Result<usize, HypothesisError> {
        self.index.get(&id).copied().ok_or(HypothesisError::UnknownId(id))
    }

    pub fn get(&self, id: u64) -> Result<&[f64], HypothesisError> {
        let i = self.slot(id)?;
        Ok(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// Overwrites an entry, bypassing the update rule.
    pub fn set(&mut self, id: u64, v: &[f64]) -> Result<(), HypothesisError> {
        self.check_dim(v)?;
        let i = self.slot(id)?;
        self.values[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        Ok(())
    }

    /// Stored rows for `ids`, stacked as `[ids.len(), dim]`.
    pub fn gather(&self, ids: &[u64]) -> Result<Tensor, HypothesisError> {
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            out.extend_from_slice(self.get(id)?);
        }
        Ok(Tensor::new(vec![ids.len(), self.dim], out).expect("bank rows have dim entries"))
    }

    /// Loss targets for `ids`: stored rows, ℓ2-normalized if the bank
    /// normalizes.
    pub fn targets(&self, ids: &[u64]) -> Result<Tensor, HypothesisError> {
        let t = self.gather(ids)?;
        Ok(if self.normalize { crate::diagnostics::l2_normalize_rows(&t) } else { t })
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), HypothesisError> {
        if v.len() != self.dim {
            return Err(HypothesisError::InvalidConfig(format!("representation of length {} for a {}-dim bank", v.len(), self.dim)));
        }
        Ok(())
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), HypothesisError> {
        w.write_all(BANK_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        let (mode, m) = match self.update {
            EtaUpdate::Direct => (0u8, 0.0),
            EtaUpdate::MovingAverage { momentum } => (1u8, momentum),
        };
        w.write_all(&[mode])?;
        w.write_all(&m.to_le_bytes())?;
        w.write_all(&[self.normalize as u8])?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(&id.to_le_bytes())?;
            for v in &self.values[i * self.dim..(i + 1) * self.dim] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R, max_bytes: usize) -> Result<Self, HypothesisError> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        if &b8 != BANK_MAGIC {
            return Err(HypothesisError::Snapshot("bad magic".into()));
        }
        let mut u64_at = |r: &mut R| -> Result<u64, HypothesisError> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = u64_at(&mut r)? as usize;
        let dim = u64_at(&mut r)? as usize;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let mode = b1[0];
        let m = f64::from_bits(u64_at(&mut r)?);
        r.read_exact(&mut b1)?;
        let normalize = b1[0] != 0;
        let update = match mode {
            0 => EtaUpdate::Direct,
            1 => EtaUpdate::MovingAverage { momentum: m },
            x => return Err(HypothesisError::Snapshot(format!("unknown update mode {x}"))),
        };
        if n.saturating_mul(dim).saturating_mul(8) > max_bytes {
            return Err(HypothesisError::BankTooLarge { bytes: n.saturating_mul(dim).saturating_mul(8), limit: max_bytes });
        }
        let mut ids = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * dim);
        for _ in 0..n {
            ids.push(u64_at(&mut r)?);
            for _ in 0..dim {
                values.push(f64::from_bits(u64_at(&mut r)?));
            }
        }
        let mut bank = Self::new(&ids, dim, update, normalize, max_bytes)?;
        bank.values = values;
        Ok(bank)
    }
}

/// Applies the bank's update rule to entry `id` with the raw
/// representation `rep`.
pub fn eta_update(bank: &mut EtaBank, id: u64, rep: &[f64]) -> Result<(), HypothesisError> {
    bank.check_dim(rep)?;
    let i = bank.slot(id)?;
    let dim = bank.dim;
    let eta = &mut bank.values[i * dim..(i + 1) * dim];
    match bank.update {
        EtaUpdate::Direct => eta.copy_from_slice(rep),
        EtaUpdate::MovingAverage { momentum: m } => eta.iter_mut().zip(rep).for_each(|(e, v)| *e = m * *e + (1.0 - m) * v),
    }
    Ok(())
}
