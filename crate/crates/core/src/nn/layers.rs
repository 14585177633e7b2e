use crate::autodiff::{AutodiffError, ParamId, Tape, Tensor, Var};

use super::params::{Bindings, ParamGroup, ParamRole, ParamStore};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, in_features: usize, out_features: usize) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[out_features, in_features]),
            group,
            ParamRole::Weight { fan_in: in_features },
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(&[out_features]),
            group,
            ParamRole::Bias { fan_in: in_features },
        );
        Self { weight, bias, in_features, out_features }
    }
}

/// Batch norm over the last axis. Rank-4 NHWC input is normalized per channel
/// over batch and spatial positions.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, channels: usize, affine: bool) -> Self {
        let (gamma, beta) = if affine {
            (
                Some(store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), group, ParamRole::BnScale)),
                Some(store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), group, ParamRole::BnShift)),
            )
        } else {
            (None, None)
        };
        Self { channels, gamma, beta, running_mean: vec![0.0; channels], running_var: vec![1.0; channels] }
    }

    pub fn reset_running_stats(&mut self) {
        self.running_mean.iter_mut().for_each(|v| *v = 0.0);
        self.running_var.iter_mut().for_each(|v| *v = 1.0);
    }

    pub fn forward(&mut self, tape: &mut Tape, bind: &Bindings, x: Var, mode: Mode) -> Result<Var, AutodiffError> {
        let shape = tape.value(x).shape().to_vec();
        let flat = match shape.len() {
            2 => x,
            4 => tape.reshape(x, vec![shape[0] * shape[1] * shape[2], shape[3]])?,
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "batch_norm",
                    detail: format!("expected rank 2 or 4, got {:?}", shape),
                })
            }
        };
        let gamma = self.gamma.map(|g| bind.get(g));
        let beta = self.beta.map(|b| bind.get(b));
        let y = match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(flat, gamma, beta, BN_EPS)?;
                for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
                y
            }
            Mode::Eval => tape.batch_norm_eval(flat, gamma, beta, &self.running_mean, &self.running_var, BN_EPS)?,
        };
        if shape.len() == 4 {
            tape.reshape(y, shape)
        } else {
            Ok(y)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[out_channels, kernel, kernel, in_channels]),
            group,
            ParamRole::Weight { fan_in },
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]), group, ParamRole::Bias { fan_in });
        Self { weight, bias, in_channels, out_channels, kernel, padding: kernel / 2 }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    Relu,
    Conv(Conv),
    AvgPool2,
    GlobalAvgPool,
}

impl Layer {
    pub fn forward(&mut self, tape: &mut Tape, bind: &Bindings, x: Var, mode: Mode) -> Result<Var, AutodiffError> {
        match self {
            Layer::Linear(l) => tape.affine(x, bind.get(l.weight), Some(bind.get(l.bias))),
            Layer::BatchNorm(bn) => bn.forward(tape, bind, x, mode),
            Layer::Relu => tape.relu(x),
            Layer::Conv(c) => tape.conv2d(x, bind.get(c.weight), Some(bind.get(c.bias)), c.padding),
            Layer::AvgPool2 => tape.avg_pool2(x),
            Layer::GlobalAvgPool => tape.global_avg_pool(x),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn forward(&mut self, tape: &mut Tape, bind: &Bindings, mut x: Var, mode: Mode) -> Result<Var, AutodiffError> {
        for layer in &mut self.layers {
            x = layer.forward(tape, bind, x, mode)?;
        }
        Ok(x)
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }
}
