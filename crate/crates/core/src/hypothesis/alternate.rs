use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::{DataError, Dataset};
use crate::diagnostics::{normalized_output_std, MetricsRecord};
use crate::nn::{Bindings, Mode, SimSiamModel};
use crate::training::{
    negative_cosine, sgd_step, GroupLr, KnnSets, OptimizerConfig, OptimizerState, Recorder, RunOutcome, Schedule,
    StepOutput, TrainConfig, TrainError,
};

use super::bank::{eta_update, EtaBank};
use super::{AltLoss, AlternationConfig, HypothesisError};

/// Mean of `f` over the augmentation draws: the η that minimizes the
/// expected squared distance for fixed parameters. One draw gives the
/// single-sample assignment.
pub fn eta_solve<E>(mut f: impl FnMut(&Tensor) -> Result<Tensor, E>, draws: &[Tensor]) -> Result<Tensor, HypothesisError>
where
    HypothesisError: From<E>,
{
    let (first, rest) = draws.split_first().ok_or_else(|| HypothesisError::InvalidConfig("eta_solve needs at least one draw".into()))?;
    let mut acc = f(first)?;
    for x in rest {
        let y = f(x)?;
        if y.shape() != acc.shape() {
            return Err(HypothesisError::InvalidConfig("draws produced different shapes".into()));
        }
        acc.data_mut().iter_mut().zip(y.data()).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / draws.len() as f64;
    acc.data_mut().iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// `F_θ(x)` with batch statistics, no gradient. Updates BN running stats the
/// same way a Siamese forward of the second view does.
pub fn encoder_output(model: &mut SimSiamModel, x: &Tensor) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape)?;
    let xv = tape.constant(x.clone())?;
    let z = model.encode(&mut tape, &bind, xv, Mode::Train)?;
    Ok(tape.value(z).clone())
}

/// Substep objective on the tape. `eta` must be a constant.
///
/// Cosine: `−mean ⟨F̂, η̂⟩`, which is `½‖F̂ − η̂‖² − 1` per row for
/// unit vectors. Mse: `mean_i ‖F_i − η_i‖²`.
pub fn substep_loss(tape: &mut Tape, f: Var, eta: Var, loss: AltLoss) -> Result<Var, AutodiffError> {
    match loss {
        AltLoss::Cosine => negative_cosine(tape, f, eta),
        AltLoss::Mse => {
            let n = tape.value(f).shape()[0] as f64;
            let diff = tape.sub(f, eta)?;
            let sq = tape.mul(diff, diff)?;
            let s = tape.sum(sq)?;
            tape.scale(s, 1.0 / n)
        }
    }
}

/// Builds the substep graph for `x` against the bank rows of `ids`; returns
/// `(loss, F, η)` vars. The loss compares the predictor output `h(F(x))`
/// with η; without a predictor that is `F(x)` itself. The cosine loss
/// normalizes η itself, so the raw rows are used there whatever
/// `normalize_eta` says.
pub fn substep_graph(
    tape: &mut Tape,
    model: &mut SimSiamModel,
    bind: &Bindings,
    x: &Tensor,
    ids: &[u64],
    bank: &EtaBank,
    loss: AltLoss,
) -> Result<(Var, Var, Var), HypothesisError> {
    let targets = match loss {
        AltLoss::Cosine => bank.gather(ids)?,
        AltLoss::Mse => bank.targets(ids)?,
    };
    let xv = tape.constant(x.clone())?;
    let f = model.encode(tape, bind, xv, Mode::Train)?;
    let p = model.predict(tape, bind, f, Mode::Train)?;
    let eta = tape.constant(targets)?;
    let l = substep_loss(tape, p, eta, loss)?;
    Ok((l, f, eta))
}

/// One SGD step on θ with η held fixed.
#[allow(clippy::too_many_arguments)]
pub fn theta_substep(
    model: &mut SimSiamModel,
    x: &Tensor,
    ids: &[u64],
    bank: &EtaBank,
    loss: AltLoss,
    opt: &OptimizerConfig,
    state: &mut OptimizerState,
    lr: GroupLr,
) -> Result<StepOutput, HypothesisError> {
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape)?;
    let (l, f, _) = substep_graph(&mut tape, model, &bind, x, ids, bank, loss)?;
    let output_std = normalized_output_std(tape.value(f)).map_err(|e| HypothesisError::InvalidConfig(e.to_string()))?;
    let grads = tape.backward(l)?;
    sgd_step(&mut model.store, &grads, state, lr, opt.momentum, opt.weight_decay);
    Ok(StepOutput { loss: tape.value(l).item(), output_std })
}

/// Sets every entry to the un-augmented raw output of the current network
/// (batch statistics over `batch`-sized chunks). Running statistics of
/// `model` are left untouched.
pub fn init_bank_from_model(bank: &mut EtaBank, model: &SimSiamModel, data: &Dataset, batch: usize) -> Result<(), HypothesisError> {
    let mut scratch = model.clone();
    let (n, b) = (data.len(), batch.max(2));
    let mut bounds: Vec<(usize, usize)> = (0..n).step_by(b).map(|s| (s, (s + b).min(n))).collect();
    // a trailing single row cannot be batch-normalized on its own
    if bounds.len() > 1 && bounds.last().is_some_and(|(s, e)| e - s < 2) {
        let (_, e) = bounds.pop().expect("non-empty");
        bounds.last_mut().expect("len > 1").1 = e;
    }
    for (s, e) in bounds {
        let c: Vec<usize> = (s..e).collect();
        let x = data.batch(&c, None, 0, 0, 0)?;
        let z = encoder_output(&mut scratch, &x)?;
        for (r, &i) in c.iter().enumerate() {
            bank.set(data.samples[i].id, z.row(r))?;
        }
    }
    Ok(())
}

/// Alternates between solving η for a block of `k` batches (second view,
/// current θ) and `k` SGD substeps on θ (first view). Emits the same record
/// stream as the Siamese trainer.
pub fn alternating_train(
    model: &mut SimSiamModel,
    train: &Dataset,
    knn: Option<KnnSets<'_>>,
    cfg: &TrainConfig,
    alt: &AlternationConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<(RunOutcome, EtaBank), HypothesisError> {
    alt.validate()?;
    cfg.optimizer.validate().map_err(TrainError::InvalidConfig)?;
    cfg.augmentation.validate().map_err(TrainError::from)?;
    if model.predictor_mode() != cfg.loss.predictor_mode {
        return Err(HypothesisError::InvalidConfig("model predictor mode differs from loss.predictor_mode".into()));
    }
    let ids: Vec<u64> = train.samples.iter().map(|s| s.id).collect();
    let mut bank = EtaBank::new(&ids, model.output_dim(), alt.update, alt.normalize_eta, alt.max_bank_bytes)?;
    if !alt.zero_init {
        init_bank_from_model(&mut bank, model, train, cfg.optimizer.batch_size)?;
    }
    let sched = Schedule::new(train.len(), &cfg.optimizer, cfg.max_steps)?;
    let mut rec = Recorder::new(knn, cfg.monitor, sched.run_steps, sink)?;
    let mut state = OptimizerState::default();
    let plan: Vec<(u64, Vec<usize>)> = sched.batches(train.len(), cfg.optimizer.batch_size, cfg.seed).collect();
    let mut step = 0u64;
    for block in plan.chunks(alt.inner_steps) {
        let block_ids: Vec<Vec<u64>> = block.iter().map(|(_, idx)| idx.iter().map(|&i| train.samples[i].id).collect()).collect();
        for ((epoch, idx), ids) in block.iter().zip(&block_ids) {
            let x = train.batch(idx, Some(&cfg.augmentation), cfg.seed, *epoch, 1)?;
            let eta = match eta_solve(|x| encoder_output(model, x), std::slice::from_ref(&x)) {
                Ok(e) => e,
                Err(HypothesisError::Autodiff(e @ AutodiffError::NonFinite { .. })) => {
                    let lr = GroupLr::at(step, &cfg.optimizer, sched.total_steps).encoder;
                    return Ok((rec.abort(step, *epoch, lr, e), bank));
                }
                Err(e) => return Err(e),
            };
            for (r, &id) in ids.iter().enumerate() {
                eta_update(&mut bank, id, eta.row(r))?;
            }
        }
        for ((epoch, idx), ids) in block.iter().zip(&block_ids) {
            let lr = GroupLr::at(step, &cfg.optimizer, sched.total_steps);
            let x = train.batch(idx, Some(&cfg.augmentation), cfg.seed, *epoch, 0)?;
            match theta_substep(model, &x, ids, &bank, alt.loss, &cfg.optimizer, &mut state, lr) {
                Ok(out) => rec.step(model, step, *epoch, lr.encoder, out)?,
                Err(HypothesisError::Autodiff(e @ AutodiffError::NonFinite { .. })) => {
                    return Ok((rec.abort(step, *epoch, lr.encoder, e), bank));
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
    }
    Ok((rec.finish(), bank))
}

impl From<DataError> for HypothesisError {
    fn from(e: DataError) -> Self {
        HypothesisError::Train(e.into())
    }
}
