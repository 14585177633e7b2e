use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, ParamId, Tape, Tensor, Var};

/// Optimizer group a parameter belongs to; groups may follow different
/// learning-rate policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Predictor,
}

/// What a parameter does inside its layer. Drives initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight { fan_in: usize },
    Bias { fan_in: usize },
    BnScale,
    BnShift,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
    pub role: ParamRole,
    /// Frozen parameters are bound on the tape but never updated.
    pub trainable: bool,
}

/// Flat, ordered owner of every parameter of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup, role: ParamRole) -> ParamId {
        self.params.push(Param { name: name.into(), value, group, role, trainable: true });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Puts every parameter on the tape once. Both Siamese branches reuse
    /// these vars, so their gradients accumulate into one entry each.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bindings, AutodiffError> {
        let vars = self
            .iter()
            .map(|(id, p)| tape.param(id, p.value.clone()))
            .collect::<Result<_, _>>()?;
        Ok(Bindings(vars))
    }

    /// Largest absolute elementwise difference to another store of the same
    /// layout; `None` if the layouts differ.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.value.shape() != b.value.shape() {
                return None;
            }
            worst = worst.max(a.value.max_abs_diff(&b.value));
        }
        Some(worst)
    }
}

/// Tape vars for every parameter of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}
