use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::nn::{PredictorMode, SiameseOutputs};

/// Guard used when normalizing rows inside losses.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    #[default]
    Symmetric,
    Asymmetric,
    /// Two independent view pairs per image, asymmetric terms averaged.
    #[serde(rename = "asymmetric_2x")]
    Asymmetric2x,
}

impl Symmetry {
    /// View pairs drawn per image per step.
    pub fn pairs(self) -> usize {
        match self {
            Symmetry::Asymmetric2x => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub similarity: Similarity,
    pub symmetry: Symmetry,
    pub stop_grad: bool,
    pub predictor_mode: PredictorMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            similarity: Similarity::Cosine,
            symmetry: Symmetry::Symmetric,
            stop_grad: true,
            predictor_mode: PredictorMode::Learned,
        }
    }
}

/// `−mean_i ⟨p_i/‖p_i‖, z_i/‖z_i‖⟩` over rows of `[n, d]` inputs.
pub fn negative_cosine(tape: &mut Tape, p: Var, z: Var) -> Result<Var, AutodiffError> {
    let n = batch_rows(tape, p, z, "negative_cosine")?;
    let pn = tape.l2_normalize(p, NORM_EPS)?;
    let zn = tape.l2_normalize(z, NORM_EPS)?;
    let prod = tape.mul(pn, zn)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / n as f64)
}

/// `−mean_i softmax(z_i) · log_softmax(p_i)`.
pub fn cross_entropy_similarity(tape: &mut Tape, p: Var, z: Var) -> Result<Var, AutodiffError> {
    let n = batch_rows(tape, p, z, "cross_entropy_similarity")?;
    let q = tape.softmax(z)?;
    let lp = tape.log_softmax(p)?;
    let prod = tape.mul(q, lp)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / n as f64)
}

fn batch_rows(tape: &Tape, p: Var, z: Var, op: &'static str) -> Result<usize, AutodiffError> {
    let (ps, zs) = (tape.value(p).shape(), tape.value(z).shape());
    if ps != zs || ps.len() != 2 || ps[0] == 0 {
        return Err(AutodiffError::ShapeMismatch { op, detail: format!("{ps:?} vs {zs:?}") });
    }
    Ok(ps[0])
}

/// `D(p, z)` for the configured similarity, with `z` detached if `stop_grad`.
pub fn pair_loss(tape: &mut Tape, p: Var, z: Var, cfg: &LossConfig) -> Result<Var, AutodiffError> {
    let z = if cfg.stop_grad { tape.stop_gradient(z)? } else { z };
    match cfg.similarity {
        Similarity::Cosine => negative_cosine(tape, p, z),
        Similarity::CrossEntropy => cross_entropy_similarity(tape, p, z),
    }
}

/// Symmetric: `½D(p1, z2) + ½D(p2, z1)`. Asymmetric: `D(p1, z2)`.
/// Asymmetric 2×: mean of `D(p1, z2)` over the two view pairs in `outs`.
pub fn simsiam_loss(tape: &mut Tape, outs: &[SiameseOutputs], cfg: &LossConfig) -> Result<Var, AutodiffError> {
    let want = cfg.symmetry.pairs();
    if outs.len() != want {
        return Err(AutodiffError::InvalidArgument(format!(
            "{:?} needs {want} view pair(s), got {}",
            cfg.symmetry,
            outs.len()
        )));
    }
    match cfg.symmetry {
        Symmetry::Symmetric => {
            let o = &outs[0];
            let a = pair_loss(tape, o.p1, o.z2, cfg)?;
            let b = pair_loss(tape, o.p2, o.z1, cfg)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)
        }
        Symmetry::Asymmetric => pair_loss(tape, outs[0].p1, outs[0].z2, cfg),
        Symmetry::Asymmetric2x => {
            let a = pair_loss(tape, outs[0].p1, outs[0].z2, cfg)?;
            let b = pair_loss(tape, outs[1].p1, outs[1].z2, cfg)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)
        }
    }
}
