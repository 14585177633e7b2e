//! Alternating optimization over network weights θ and per-image targets η.
//!
//! θ is trained against fixed targets; η is re-solved from the current θ
//! between blocks of SGD steps. In the pure formulation there is no
//! predictor (`predictor_mode = identity`); with one, the substep matches
//! `h(F(x))` to η. With `k = 1` and direct assignment the update coincides
//! with an asymmetric Siamese step that uses the same two views.
//!
//! The bank always stores and averages raw encoder outputs. `normalize_eta`
//! (default `true`) normalizes targets when they are read for the loss; the
//! cosine loss normalizes both sides anyway, so the flag only changes the
//! squared-error loss. Whether the original moving-average experiment
//! normalized η is not known.

mod alternate;
mod bank;

use serde::{Deserialize, Serialize};

pub use alternate::{
    alternating_train, encoder_output, eta_solve, init_bank_from_model, substep_graph, substep_loss, theta_substep,
};
pub use bank::{eta_update, EtaBank, EtaUpdate, BANK_MAGIC};

use crate::autodiff::AutodiffError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum HypothesisError {
    #[error("no eta entry for image id {0}")]
    UnknownId(u64),
    #[error("eta bank of {bytes} bytes exceeds the {limit}-byte limit")]
    BankTooLarge { bytes: usize, limit: usize },
    #[error("invalid alternation config: {0}")]
    InvalidConfig(String),
    #[error("bank snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltLoss {
    /// Squared distance of ℓ2-normalized vectors, reported on the
    /// negative-cosine scale.
    #[default]
    Cosine,
    /// Squared distance of raw outputs.
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlternationConfig {
    /// SGD steps on θ per η solve.
    pub inner_steps: usize,
    pub loss: AltLoss,
    pub update: EtaUpdate,
    pub normalize_eta: bool,
    /// Start from η = 0 instead of the random network's outputs.
    pub zero_init: bool,
    pub max_bank_bytes: usize,
}

impl Default for AlternationConfig {
    fn default() -> Self {
        Self {
            inner_steps: 1,
            loss: AltLoss::Cosine,
            update: EtaUpdate::Direct,
            normalize_eta: true,
            zero_init: false,
            max_bank_bytes: 1 << 30,
        }
    }
}

impl AlternationConfig {
    pub fn validate(&self) -> Result<(), HypothesisError> {
        if self.inner_steps == 0 {
            return Err(HypothesisError::InvalidConfig("inner_steps must be at least 1".into()));
        }
        if let EtaUpdate::MovingAverage { momentum } = self.update {
            if !(0.0..=1.0).contains(&momentum) {
                return Err(HypothesisError::InvalidConfig(format!("momentum {momentum} outside [0, 1]")));
            }
        }
        Ok(())
    }
}
