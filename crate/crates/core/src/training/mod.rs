//! Losses, SGD, the lr schedule and the Siamese training loop.

mod loss;
mod optim;
mod trainer;

pub(crate) use trainer::Recorder;

pub use loss::{cross_entropy_similarity, negative_cosine, pair_loss, simsiam_loss, LossConfig, Similarity, Symmetry, NORM_EPS};
pub use optim::{lr_at, predictor_lr_at, sgd_step, GroupLr, LrPolicy, OptimizerConfig, OptimizerState};
pub use trainer::{
    run_experiment, train_step, KnnInputs, KnnSets, MonitorConfig, RunOutcome, Schedule, StepOutput, TrainConfig,
    TrainError,
};
