//! Layers, MLP heads and the Siamese encoder/predictor model.

mod checkpoint;
mod layers;
mod mlp;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{BatchNorm, Conv, Layer, Linear, Mode, Sequential, BN_EPS, BN_MOMENTUM};
pub use mlp::{build_prediction_mlp, build_projection_mlp, Mlp, MlpSpec};
pub use model::{
    BackboneSpec, EncoderSpec, FeatureSource, InitScheme, ModelSpec, PredictorMode, SiameseOutputs, SimSiamModel,
    FIXED_INIT_STD,
};
pub use params::{Bindings, Param, ParamGroup, ParamRole, ParamStore};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
