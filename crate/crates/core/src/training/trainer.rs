use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{stream_rng, AugmentationConfig, DataError, Dataset, Stream};
use crate::diagnostics::{knn_monitor, normalized_output_std, DiagError, KnnConfig, MetricsRecord};
use crate::nn::{FeatureSource, Mode, SimSiamModel};

use super::loss::{simsiam_loss, LossConfig};
use super::optim::{sgd_step, GroupLr, OptimizerConfig, OptimizerState};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite value at step {step}: {source}")]
    NonFinite { step: u64, source: AutodiffError },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diag(#[from] DiagError),
}

/// When and how the kNN monitor runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorConfig {
    /// Run the kNN monitor every this many steps (0: final step only).
    pub knn_every: u64,
    /// Emit a metrics record every this many steps.
    pub log_every: u64,
    pub knn: KnnConfig,
    pub features: FeatureSource,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { knn_every: 0, log_every: 1, knn: KnnConfig::default(), features: FeatureSource::Backbone }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    pub monitor: MonitorConfig,
    pub seed: u64,
    /// Stops the run early; the lr schedule still spans `epochs`.
    pub max_steps: Option<u64>,
}

/// Labeled sets for the kNN monitor: a memory bank and held-out queries,
/// both embedded without augmentation.
#[derive(Clone, Copy, Debug)]
pub struct KnnSets<'a> {
    pub bank: &'a Dataset,
    pub queries: &'a Dataset,
}

pub struct KnnInputs {
    bank_x: Tensor,
    bank_y: Vec<usize>,
    query_x: Tensor,
    query_y: Vec<usize>,
}

impl KnnInputs {
    pub fn new(sets: KnnSets<'_>) -> Result<Self, DataError> {
        Ok(Self {
            bank_x: sets.bank.inputs()?,
            bank_y: sets.bank.labels(),
            query_x: sets.queries.inputs()?,
            query_y: sets.queries.labels(),
        })
    }

    pub fn accuracy(&self, model: &mut SimSiamModel, cfg: &MonitorConfig) -> Result<f64, TrainError> {
        let bank = model.embed(&self.bank_x, cfg.features, 256)?;
        let query = model.embed(&self.query_x, cfg.features, 256)?;
        Ok(knn_monitor(&bank, &self.bank_y, &query, &self.query_y, cfg.knn)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    /// Normalized output std of the first view's `z`.
    pub output_std: f64,
}

/// Forward both branches for every view pair, backward, one SGD update.
pub fn train_step(
    model: &mut SimSiamModel,
    pairs: &[(Tensor, Tensor)],
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    state: &mut OptimizerState,
    lr: GroupLr,
) -> Result<StepOutput, AutodiffError> {
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape)?;
    let mut outs = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let x1 = tape.constant(a.clone())?;
        let x2 = tape.constant(b.clone())?;
        outs.push(model.forward_simsiam(&mut tape, &bind, x1, x2, Mode::Train)?);
    }
    let loss = simsiam_loss(&mut tape, &outs, loss_cfg)?;
    let output_std = normalized_output_std(tape.value(outs[0].z1)).map_err(|e| AutodiffError::InvalidArgument(e.to_string()))?;
    let grads = tape.backward(loss)?;
    sgd_step(&mut model.store, &grads, state, lr, opt.momentum, opt.weight_decay);
    Ok(StepOutput { loss: tape.value(loss).item(), output_std })
}

/// Step/epoch bookkeeping shared by the trainers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub steps_per_epoch: u64,
    /// Length the lr schedule is laid out over.
    pub total_steps: u64,
    /// Steps actually executed.
    pub run_steps: u64,
}

impl Schedule {
    pub fn new(n: usize, opt: &OptimizerConfig, max_steps: Option<u64>) -> Result<Self, TrainError> {
        if opt.batch_size > n {
            return Err(TrainError::InvalidConfig(format!("batch size {} exceeds dataset size {n}", opt.batch_size)));
        }
        let steps_per_epoch = (n / opt.batch_size) as u64;
        let total_steps = steps_per_epoch * opt.epochs as u64;
        Ok(Self { steps_per_epoch, total_steps, run_steps: max_steps.map_or(total_steps, |m| m.min(total_steps)) })
    }

    /// Batch indices for every step of `epoch`; the last partial batch is
    /// dropped.
    pub fn epoch_batches(&self, n: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch]));
        order.chunks_exact(batch).map(|c| c.to_vec()).collect()
    }

    /// `(epoch, batch indices)` for each of the `run_steps` steps.
    pub fn batches(&self, n: usize, batch: usize, seed: u64) -> impl Iterator<Item = (u64, Vec<usize>)> + '_ {
        let epochs = self.total_steps.checked_div(self.steps_per_epoch).unwrap_or(0);
        (0..epochs)
            .flat_map(move |e| self.epoch_batches(n, batch, seed, e).into_iter().map(move |b| (e, b)))
            .take(self.run_steps as usize)
    }
}

/// Result of a training run; `abort` is set when a non-finite value stopped
/// it early.
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub abort: Option<String>,
    pub final_knn: Option<f64>,
}

/// Emits metrics records: logging cadence, kNN monitor, abort records.
pub(crate) struct Recorder<'a> {
    start: Instant,
    records: Vec<MetricsRecord>,
    knn: Option<KnnInputs>,
    monitor: MonitorConfig,
    run_steps: u64,
    final_knn: Option<f64>,
    sink: &'a mut dyn FnMut(&MetricsRecord),
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(
        knn: Option<KnnSets<'_>>,
        monitor: MonitorConfig,
        run_steps: u64,
        sink: &'a mut dyn FnMut(&MetricsRecord),
    ) -> Result<Self, TrainError> {
        Ok(Self {
            start: Instant::now(),
            records: Vec::new(),
            knn: knn.map(KnnInputs::new).transpose()?,
            monitor,
            run_steps,
            final_knn: None,
            sink,
        })
    }

    fn push(&mut self, r: MetricsRecord) {
        (self.sink)(&r);
        self.records.push(r);
    }

    fn elapsed_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }

    pub(crate) fn step(&mut self, model: &mut SimSiamModel, step: u64, epoch: u64, lr: f64, out: StepOutput) -> Result<(), TrainError> {
        let last = step + 1 == self.run_steps;
        let every = self.monitor.knn_every;
        let knn_acc = match &self.knn {
            Some(k) if last || (every > 0 && (step + 1).is_multiple_of(every)) => Some(k.accuracy(model, &self.monitor)?),
            _ => None,
        };
        if last {
            self.final_knn = knn_acc;
        }
        if knn_acc.is_some() || last || step.is_multiple_of(self.monitor.log_every.max(1)) {
            let wallclock_ms = self.elapsed_ms();
            self.push(MetricsRecord { step, epoch, lr, loss: out.loss, output_std: out.output_std, knn_acc, wallclock_ms });
        }
        Ok(())
    }

    /// Records a non-finite failure and closes the run.
    pub(crate) fn abort(mut self, step: u64, epoch: u64, lr: f64, err: AutodiffError) -> RunOutcome {
        let wallclock_ms = self.elapsed_ms();
        self.push(MetricsRecord { step, epoch, lr, loss: f64::NAN, output_std: f64::NAN, knn_acc: None, wallclock_ms });
        let msg = TrainError::NonFinite { step, source: err }.to_string();
        RunOutcome { records: self.records, abort: Some(msg), final_knn: None }
    }

    pub(crate) fn finish(self) -> RunOutcome {
        RunOutcome { records: self.records, abort: None, final_knn: self.final_knn }
    }
}

/// The Siamese training loop. `sink` sees every record as it is produced.
pub fn run_experiment(
    model: &mut SimSiamModel,
    train: &Dataset,
    knn: Option<KnnSets<'_>>,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<RunOutcome, TrainError> {
    cfg.optimizer.validate().map_err(TrainError::InvalidConfig)?;
    cfg.augmentation.validate()?;
    if model.predictor_mode() != cfg.loss.predictor_mode {
        return Err(TrainError::InvalidConfig("model predictor mode differs from loss.predictor_mode".into()));
    }
    let sched = Schedule::new(train.len(), &cfg.optimizer, cfg.max_steps)?;
    let mut rec = Recorder::new(knn, cfg.monitor, sched.run_steps, sink)?;
    let mut state = OptimizerState::default();
    let pairs = cfg.loss.symmetry.pairs() as u64;
    for (step, (epoch, idx)) in sched.batches(train.len(), cfg.optimizer.batch_size, cfg.seed).enumerate() {
        let step = step as u64;
        let lr = GroupLr::at(step, &cfg.optimizer, sched.total_steps);
        let views = (0..pairs)
            .map(|p| {
                let a = train.batch(&idx, Some(&cfg.augmentation), cfg.seed, epoch, 2 * p)?;
                let b = train.batch(&idx, Some(&cfg.augmentation), cfg.seed, epoch, 2 * p + 1)?;
                Ok((a, b))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        match train_step(model, &views, &cfg.loss, &cfg.optimizer, &mut state, lr) {
            Ok(out) => rec.step(model, step, epoch, lr.encoder, out)?,
            Err(e @ AutodiffError::NonFinite { .. }) => return Ok(rec.abort(step, epoch, lr.encoder, e)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rec.finish())
}
