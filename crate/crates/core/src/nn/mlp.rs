use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};

use super::layers::{BatchNorm, Layer, Linear, Mode, Sequential};
use super::params::{Bindings, ParamGroup, ParamStore};
use super::NnError;

/// Shape and normalization layout of an MLP head.
///
/// `layer_dims` lists every width including the input, so a 3-layer MLP has
/// four entries. Hidden layers are `fc → [BN] → ReLU`; the output layer is
/// `fc → [BN]` with no ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub bn_hidden: bool,
    pub bn_output: bool,
    #[serde(default = "yes")]
    pub bn_output_affine: bool,
    #[serde(default)]
    pub relu_output: bool,
}

fn yes() -> bool {
    true
}

impl MlpSpec {
    /// Projection head: `layers` fc layers, all of width `hidden` except the
    /// last, which is `out`. BN on every layer including the output.
    pub fn projection(input: usize, hidden: usize, out: usize, layers: usize) -> Self {
        let mut layer_dims = vec![input];
        layer_dims.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        layer_dims.push(out);
        Self { layer_dims, bn_hidden: true, bn_output: true, bn_output_affine: true, relu_output: false }
    }

    /// Bottleneck predictor `d → hidden → d`, BN on the hidden layer only.
    pub fn predictor(d: usize, hidden: usize) -> Self {
        Self { layer_dims: vec![d, hidden, d], bn_hidden: true, bn_output: false, bn_output_affine: true, relu_output: false }
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims.first().copied().unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_dims.len() < 2 {
            return Err(NnError::InvalidSpec("an MLP needs at least one fc layer".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(NnError::InvalidSpec(format!("zero width in {:?}", self.layer_dims)));
        }
        if self.relu_output {
            return Err(NnError::InvalidSpec("the output fc of a head carries no ReLU".into()));
        }
        Ok(())
    }
}

/// A built MLP head.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub seq: Sequential,
}

impl Mlp {
    /// Recovers the spec from the layer stack.
    pub fn spec(&self) -> MlpSpec {
        let mut dims = Vec::new();
        let mut bn_hidden = false;
        let mut bn_output = false;
        let mut bn_output_affine = true;
        let mut relu_output = false;
        let n_fc = self.seq.layers.iter().filter(|l| matches!(l, Layer::Linear(_))).count();
        let mut fc_seen = 0;
        for layer in &self.seq.layers {
            match layer {
                Layer::Linear(l) => {
                    if dims.is_empty() {
                        dims.push(l.in_features);
                    }
                    dims.push(l.out_features);
                    fc_seen += 1;
                }
                Layer::BatchNorm(bn) if fc_seen == n_fc => {
                    bn_output = true;
                    bn_output_affine = bn.gamma.is_some();
                }
                Layer::BatchNorm(_) => bn_hidden = true,
                Layer::Relu if fc_seen == n_fc => relu_output = true,
                _ => {}
            }
        }
        MlpSpec { layer_dims: dims, bn_hidden, bn_output, bn_output_affine, relu_output }
    }

    pub fn forward(&mut self, tape: &mut Tape, bind: &Bindings, x: Var, mode: Mode) -> Result<Var, AutodiffError> {
        self.seq.forward(tape, bind, x, mode)
    }
}

fn build_mlp(spec: &MlpSpec, store: &mut ParamStore, group: ParamGroup, prefix: &str) -> Result<Mlp, NnError> {
    spec.validate()?;
    let n = spec.num_layers();
    let mut layers = Vec::new();
    for i in 0..n {
        let (a, b) = (spec.layer_dims[i], spec.layer_dims[i + 1]);
        layers.push(Layer::Linear(Linear::new(store, &format!("{prefix}.fc{i}"), group, a, b)));
        let last = i + 1 == n;
        if last {
            if spec.bn_output {
                layers.push(Layer::BatchNorm(BatchNorm::new(store, &format!("{prefix}.bn{i}"), group, b, spec.bn_output_affine)));
            }
        } else {
            if spec.bn_hidden {
                layers.push(Layer::BatchNorm(BatchNorm::new(store, &format!("{prefix}.bn{i}"), group, b, true)));
            }
            layers.push(Layer::Relu);
        }
    }
    Ok(Mlp { seq: Sequential { layers } })
}

/// Builds the projection head of the encoder (at least two fc layers).
pub fn build_projection_mlp(spec: &MlpSpec, store: &mut ParamStore, prefix: &str) -> Result<Mlp, NnError> {
    if spec.num_layers() < 2 {
        return Err(NnError::InvalidSpec(format!(
            "projection MLP needs at least 2 layers, got {}",
            spec.num_layers()
        )));
    }
    build_mlp(spec, store, ParamGroup::Encoder, prefix)
}

/// Builds the two-layer predictor `d → hidden → d`.
pub fn build_prediction_mlp(spec: &MlpSpec, store: &mut ParamStore, prefix: &str) -> Result<Mlp, NnError> {
    if spec.num_layers() != 2 {
        return Err(NnError::InvalidSpec(format!("prediction MLP has 2 layers, got {}", spec.num_layers())));
    }
    if spec.input_dim() != spec.output_dim() {
        return Err(NnError::InvalidSpec(format!(
            "prediction MLP maps d to d, got {} -> {}",
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    build_mlp(spec, store, ParamGroup::Predictor, prefix)
}
