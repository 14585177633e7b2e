//! Stop-gradient Siamese representation learning (SimSiam) at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation with a
//!   first-class stop-gradient node.
//! * [`nn`]: layers, MLP heads and the Siamese model.
//! * [`training`]: losses, SGD, learning-rate schedule and the train loop.
//! * [`diagnostics`]: collapse statistics plus kNN and linear-probe evaluation.
//! * [`hypothesis`]: the alternating (EM-like) formulation with an explicit
//!   per-image target bank.
//! * [`data`]: CIFAR-10 and synthetic datasets with view augmentation.
//! * [`cli`]: experiment configs and the preset runner.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod hypothesis;
pub mod nn;
pub mod training;
