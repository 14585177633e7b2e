use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

use super::layers::{BatchNorm, Conv, Layer, Linear, Mode, Sequential};
use super::mlp::{build_prediction_mlp, build_projection_mlp, Mlp, MlpSpec};
use super::params::{Bindings, ParamGroup, ParamRole, ParamStore};
use super::NnError;

/// Feature extractor placed before the projection head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneSpec {
    /// `fc → BN → ReLU` per entry of `widths`, over `[n, input_dim]` vectors.
    Mlp { input_dim: usize, widths: Vec<usize> },
    /// `conv3×3 → BN → ReLU → avgpool2` per entry of `channels`, then global
    /// average pooling, over NHWC images.
    SmallConv { in_channels: usize, height: usize, width: usize, channels: Vec<usize> },
}

impl BackboneSpec {
    pub fn output_width(&self) -> usize {
        match self {
            BackboneSpec::Mlp { input_dim, widths } => widths.last().copied().unwrap_or(*input_dim),
            BackboneSpec::SmallConv { in_channels, channels, .. } => channels.last().copied().unwrap_or(*in_channels),
        }
    }

    /// Per-sample input shape, excluding the batch axis.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            BackboneSpec::Mlp { input_dim, .. } => vec![*input_dim],
            BackboneSpec::SmallConv { in_channels, height, width, .. } => vec![*height, *width, *in_channels],
        }
    }
}

/// The encoder `f`: backbone followed by the projection MLP.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub backbone: BackboneSpec,
    pub projection: MlpSpec,
}

impl EncoderSpec {
    /// Output dimension `d`.
    pub fn output_dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.projection.validate()?;
        match &self.backbone {
            BackboneSpec::Mlp { input_dim, widths } => {
                if *input_dim == 0 || widths.contains(&0) {
                    return Err(NnError::InvalidSpec("zero width in MLP backbone".into()));
                }
            }
            BackboneSpec::SmallConv { in_channels, height, width, channels } => {
                let pools = channels.len() as u32;
                if *in_channels == 0 || channels.is_empty() || channels.contains(&0) {
                    return Err(NnError::InvalidSpec("conv backbone needs non-zero channel counts".into()));
                }
                if *height >> pools == 0 || *width >> pools == 0 {
                    return Err(NnError::InvalidSpec(format!(
                        "{height}x{width} input cannot be pooled {pools} times"
                    )));
                }
            }
        }
        if self.projection.input_dim() != self.backbone.output_width() {
            return Err(NnError::InvalidSpec(format!(
                "projection input width {} does not match backbone output width {}",
                self.projection.input_dim(),
                self.backbone.output_width()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    Learned,
    /// No predictor: `p = z`.
    Identity,
    /// Randomly initialized and never updated.
    FrozenRandom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// fc and conv weights and biases ~ U(−√k, √k), k = 1 / fan_in.
    #[default]
    Uniform,
    /// Weights ~ N(0, 0.01²), biases 0.
    FixedStd,
}

pub const FIXED_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub predictor: MlpSpec,
    #[serde(default)]
    pub init: InitScheme,
}

impl ModelSpec {
    /// MLP backbone + 3-layer projection of width `d` + `d/4` bottleneck predictor.
    pub fn toy(input_dim: usize, backbone_width: usize, d: usize) -> Self {
        Self {
            encoder: EncoderSpec {
                backbone: BackboneSpec::Mlp { input_dim, widths: vec![backbone_width] },
                projection: MlpSpec::projection(backbone_width, d, d, 3),
            },
            predictor: MlpSpec::predictor(d, (d / 4).max(1)),
            init: InitScheme::Uniform,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.encoder.validate()?;
        self.predictor.validate()?;
        let d = self.encoder.output_dim();
        if self.predictor.input_dim() != d || self.predictor.output_dim() != d {
            return Err(NnError::InvalidSpec(format!(
                "predictor must map d={d} to d, got {:?}",
                self.predictor.layer_dims
            )));
        }
        Ok(())
    }
}

/// Which activations [`SimSiamModel::embed`] returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    #[default]
    Backbone,
    Projection,
}

/// Outputs of both branches for one pair of views.
#[derive(Clone, Copy, Debug)]
pub struct SiameseOutputs {
    pub z1: Var,
    pub z2: Var,
    pub p1: Var,
    pub p2: Var,
}

/// Encoder `f` and predictor `h` over a single shared parameter set.
#[derive(Clone, Debug)]
pub struct SimSiamModel {
    spec: ModelSpec,
    predictor_mode: PredictorMode,
    pub store: ParamStore,
    backbone: Sequential,
    projection: Mlp,
    predictor: Option<Mlp>,
}

impl SimSiamModel {
    /// Builds the model and initializes it from `seed`.
    pub fn new(spec: ModelSpec, predictor_mode: PredictorMode, seed: u64) -> Result<Self, NnError> {
        let mut model = Self::build(spec, predictor_mode)?;
        model.init_params(seed);
        Ok(model)
    }

    /// Builds the layer stack with zeroed parameters.
    pub(crate) fn build(spec: ModelSpec, predictor_mode: PredictorMode) -> Result<Self, NnError> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let backbone = build_backbone(&spec.encoder.backbone, &mut store);
        let projection = build_projection_mlp(&spec.encoder.projection, &mut store, "encoder.projection")?;
        let predictor = match predictor_mode {
            PredictorMode::Identity => None,
            PredictorMode::Learned | PredictorMode::FrozenRandom => {
                Some(build_prediction_mlp(&spec.predictor, &mut store, "predictor")?)
            }
        };
        if predictor_mode == PredictorMode::FrozenRandom {
            for (_, p) in store.iter_mut() {
                if p.group == ParamGroup::Predictor {
                    p.trainable = false;
                }
            }
        }
        Ok(Self { spec, predictor_mode, store, backbone, projection, predictor })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn predictor_mode(&self) -> PredictorMode {
        self.predictor_mode
    }

    pub fn output_dim(&self) -> usize {
        self.spec.encoder.output_dim()
    }

    pub fn projection(&self) -> &Mlp {
        &self.projection
    }

    pub fn predictor(&self) -> Option<&Mlp> {
        self.predictor.as_ref()
    }

    /// Re-draws every parameter deterministically from `seed` and resets BN
    /// running statistics. BN scale 1, offset 0.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = self.spec.init;
        let normal = Normal::new(0.0, FIXED_INIT_STD).expect("valid std");
        for (_, p) in self.store.iter_mut() {
            match (p.role, scheme) {
                (ParamRole::Weight { fan_in } | ParamRole::Bias { fan_in }, InitScheme::Uniform) => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
                }
                (ParamRole::Weight { .. }, InitScheme::FixedStd) => {
                    p.value.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                }
                (ParamRole::Bias { .. }, InitScheme::FixedStd) => p.value.data_mut().fill(0.0),
                (ParamRole::BnScale, _) => p.value.data_mut().fill(1.0),
                (ParamRole::BnShift, _) => p.value.data_mut().fill(0.0),
            }
        }
        for bn in self.batch_norms_mut() {
            bn.reset_running_stats();
        }
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut out: Vec<&BatchNorm> = self.backbone.batch_norms().collect();
        out.extend(self.projection.seq.batch_norms());
        if let Some(p) = &self.predictor {
            out.extend(p.seq.batch_norms());
        }
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut out: Vec<&mut BatchNorm> = self.backbone.batch_norms_mut().collect();
        out.extend(self.projection.seq.batch_norms_mut());
        if let Some(p) = &mut self.predictor {
            out.extend(p.seq.batch_norms_mut());
        }
        out
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<(), AutodiffError> {
        let shape = tape.value(x).shape();
        let want = self.spec.encoder.backbone.input_shape();
        if shape.len() != want.len() + 1 || shape[1..] != want[..] {
            return Err(AutodiffError::ShapeMismatch {
                op: "encoder",
                detail: format!("input {:?}, expected [n, {:?}]", shape, want),
            });
        }
        Ok(())
    }

    /// Backbone features and encoder output `z`.
    pub fn encode_features(&mut self, tape: &mut Tape, bind: &Bindings, x: Var, mode: Mode) -> Result<(Var, Var), AutodiffError> {
        self.check_input(tape, x)?;
        let h = self.backbone.forward(tape, bind, x, mode)?;
        let z = self.projection.forward(tape, bind, h, mode)?;
        Ok((h, z))
    }

    /// Encoder output `z = f(x)`.
    pub fn encode(&mut self, tape: &mut Tape, bind: &Bindings, x: Var, mode: Mode) -> Result<Var, AutodiffError> {
        self.encode_features(tape, bind, x, mode).map(|(_, z)| z)
    }

    /// Predictor output `p = h(z)`; the identity when no predictor is built.
    pub fn predict(&mut self, tape: &mut Tape, bind: &Bindings, z: Var, mode: Mode) -> Result<Var, AutodiffError> {
        match &mut self.predictor {
            Some(p) => p.forward(tape, bind, z, mode),
            None => Ok(z),
        }
    }

    /// Runs both views through the same encoder and predictor.
    pub fn forward_simsiam(
        &mut self,
        tape: &mut Tape,
        bind: &Bindings,
        view1: Var,
        view2: Var,
        mode: Mode,
    ) -> Result<SiameseOutputs, AutodiffError> {
        if tape.value(view1).shape() != tape.value(view2).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "forward_simsiam",
                detail: format!("{:?} vs {:?}", tape.value(view1).shape(), tape.value(view2).shape()),
            });
        }
        let z1 = self.encode(tape, bind, view1, mode)?;
        let z2 = self.encode(tape, bind, view2, mode)?;
        let p1 = self.predict(tape, bind, z1, mode)?;
        let p2 = self.predict(tape, bind, z2, mode)?;
        Ok(SiameseOutputs { z1, z2, p1, p2 })
    }

    /// Eval-mode features for a whole dataset, computed in chunks.
    pub fn embed(&mut self, inputs: &Tensor, source: FeatureSource, chunk: usize) -> Result<Tensor, AutodiffError> {
        let n = inputs.rows();
        let chunk = chunk.max(1);
        let mut out = Vec::new();
        let mut width = 0;
        for start in (0..n).step_by(chunk) {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let mut tape = Tape::new();
            let bind = self.store.bind(&mut tape)?;
            let x = tape.constant(inputs.gather_rows(&idx))?;
            let (h, z) = self.encode_features(&mut tape, &bind, x, Mode::Eval)?;
            let v = tape.value(match source {
                FeatureSource::Backbone => h,
                FeatureSource::Projection => z,
            });
            width = v.last_dim();
            out.extend_from_slice(v.data());
        }
        Tensor::new(vec![n, width], out)
    }
}

fn build_backbone(spec: &BackboneSpec, store: &mut ParamStore) -> Sequential {
    let g = ParamGroup::Encoder;
    let mut layers = Vec::new();
    match spec {
        BackboneSpec::Mlp { input_dim, widths } => {
            let mut prev = *input_dim;
            for (i, &w) in widths.iter().enumerate() {
                layers.push(Layer::Linear(Linear::new(store, &format!("encoder.backbone.fc{i}"), g, prev, w)));
                layers.push(Layer::BatchNorm(BatchNorm::new(store, &format!("encoder.backbone.bn{i}"), g, w, true)));
                layers.push(Layer::Relu);
                prev = w;
            }
        }
        BackboneSpec::SmallConv { in_channels, channels, .. } => {
            let mut prev = *in_channels;
            for (i, &c) in channels.iter().enumerate() {
                layers.push(Layer::Conv(Conv::new(store, &format!("encoder.backbone.conv{i}"), g, prev, c, 3)));
                layers.push(Layer::BatchNorm(BatchNorm::new(store, &format!("encoder.backbone.bn{i}"), g, c, true)));
                layers.push(Layer::Relu);
                layers.push(Layer::AvgPool2);
                prev = c;
            }
            layers.push(Layer::GlobalAvgPool);
        }
    }
    Sequential { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamRole;

    fn toy() -> SimSiamModel {
        SimSiamModel::new(ModelSpec::toy(6, 12, 8), PredictorMode::Learned, 7).unwrap()
    }

    fn batch(seed: u64, n: usize, d: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let m = SimSiamModel::new(ModelSpec::toy(4, 8, 8), PredictorMode::Learned, 1).unwrap();
        for (_, p) in m.store.iter() {
            match p.role {
                ParamRole::Weight { fan_in } | ParamRole::Bias { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    assert!(p.value.data().iter().all(|v| v.abs() <= bound), "{}", p.name);
                }
                ParamRole::BnScale => assert!(p.value.data().iter().all(|v| *v == 1.0)),
                ParamRole::BnShift => assert!(p.value.data().iter().all(|v| *v == 0.0)),
            }
        }
        // first fc has in_features = 4 → entries in [−0.5, 0.5]
        let first = m.store.get(crate::autodiff::ParamId(0));
        assert_eq!(first.role, ParamRole::Weight { fan_in: 4 });
        assert!(first.value.data().iter().any(|v| v.abs() > 0.25));
    }

    #[test]
    fn same_seed_same_params() {
        let a = toy();
        let b = toy();
        assert_eq!(a.store.max_abs_diff(&b.store), Some(0.0));
        let c = SimSiamModel::new(ModelSpec::toy(6, 12, 8), PredictorMode::Learned, 8).unwrap();
        assert!(a.store.max_abs_diff(&c.store).unwrap() > 0.0);
    }

    #[test]
    fn fixed_std_init() {
        let mut spec = ModelSpec::toy(32, 64, 64);
        spec.init = InitScheme::FixedStd;
        let m = SimSiamModel::new(spec, PredictorMode::Learned, 3).unwrap();
        let w = &m.store.get(crate::autodiff::ParamId(0)).value;
        let n = w.numel() as f64;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / n;
        assert!((var.sqrt() - FIXED_INIT_STD).abs() < 0.1 * FIXED_INIT_STD);
        let b = &m.store.get(crate::autodiff::ParamId(1)).value;
        assert!(b.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_views_in_eval_give_identical_outputs() {
        let mut m = toy();
        let x = batch(1, 5, 6);
        let mut t = Tape::new();
        let bind = m.store.bind(&mut t).unwrap();
        let v1 = t.constant(x.clone()).unwrap();
        let v2 = t.constant(x).unwrap();
        let o = m.forward_simsiam(&mut t, &bind, v1, v2, Mode::Eval).unwrap();
        assert_eq!(t.value(o.z1), t.value(o.z2));
        assert_eq!(t.value(o.p1), t.value(o.p2));
    }

    #[test]
    fn identity_predictor_passes_z_through() {
        let mut m = SimSiamModel::new(ModelSpec::toy(6, 12, 8), PredictorMode::Identity, 7).unwrap();
        assert!(m.predictor().is_none());
        let mut t = Tape::new();
        let bind = m.store.bind(&mut t).unwrap();
        let v1 = t.constant(batch(2, 4, 6)).unwrap();
        let v2 = t.constant(batch(3, 4, 6)).unwrap();
        let o = m.forward_simsiam(&mut t, &bind, v1, v2, Mode::Train).unwrap();
        assert_eq!(o.p1, o.z1);
        assert_eq!(t.value(o.p2), t.value(o.z2));
    }

    #[test]
    fn frozen_predictor_is_not_trainable() {
        let m = SimSiamModel::new(ModelSpec::toy(6, 12, 8), PredictorMode::FrozenRandom, 7).unwrap();
        for (_, p) in m.store.iter() {
            assert_eq!(p.trainable, p.group == ParamGroup::Encoder);
        }
    }

    #[test]
    fn mismatched_views_are_rejected() {
        let mut m = toy();
        let mut t = Tape::new();
        let bind = m.store.bind(&mut t).unwrap();
        let v1 = t.constant(batch(2, 4, 6)).unwrap();
        let v2 = t.constant(batch(3, 5, 6)).unwrap();
        assert!(m.forward_simsiam(&mut t, &bind, v1, v2, Mode::Train).is_err());
        let bad = t.constant(batch(3, 4, 5)).unwrap();
        assert!(m.forward_simsiam(&mut t, &bind, bad, bad, Mode::Train).is_err());
    }

    #[test]
    fn projection_width_must_match_backbone() {
        let mut spec = ModelSpec::toy(6, 12, 8);
        spec.encoder.projection.layer_dims[0] = 13;
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::toy(6, 12, 8);
        spec.predictor = MlpSpec::predictor(16, 4);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn small_conv_backbone_shapes() {
        let spec = ModelSpec {
            encoder: EncoderSpec {
                backbone: BackboneSpec::SmallConv { in_channels: 3, height: 8, width: 8, channels: vec![4, 6, 8] },
                projection: MlpSpec::projection(8, 16, 16, 2),
            },
            predictor: MlpSpec::predictor(16, 4),
            init: InitScheme::Uniform,
        };
        let mut m = SimSiamModel::new(spec, PredictorMode::Learned, 0).unwrap();
        let x = Tensor::new(vec![3, 8, 8, 3], (0..3 * 8 * 8 * 3).map(|i| (i as f64 * 0.01).sin()).collect()).unwrap();
        let feats = m.embed(&x, FeatureSource::Backbone, 2).unwrap();
        assert_eq!(feats.shape(), &[3, 8]);
        let z = m.embed(&x, FeatureSource::Projection, 2).unwrap();
        assert_eq!(z.shape(), &[3, 16]);
    }
}
