use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::AugmentationConfig;
use crate::diagnostics::{ProbeConfig, VerdictConfig};
use crate::hypothesis::AlternationConfig;
use crate::nn::{BackboneSpec, EncoderSpec, InitScheme, MlpSpec, ModelSpec};
use crate::training::{LossConfig, MonitorConfig, OptimizerConfig, TrainConfig};

use super::presets::preset;
use super::CliError;

/// One experiment, fully resolved. Serializing it with [`ExperimentConfig::to_toml`]
/// and parsing the result gives back the same value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ExperimentConfig {
    /// Preset the document was layered on, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    /// Defaults to `runs/<preset>` (or `runs/run`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Stop after this many steps; the lr schedule still spans all epochs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Present: train with the alternating formulation instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<AlternationConfig>,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian clusters; the kNN queries and probe test set are a second
    /// draw around the same centers.
    Synthetic {
        #[serde(default = "ten")]
        num_classes: usize,
        #[serde(default = "thirty_two")]
        dim: usize,
        #[serde(default = "two_hundred")]
        samples_per_class: usize,
        #[serde(default = "fifty")]
        test_per_class: usize,
        #[serde(default = "six")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// CIFAR-10 binary batches under `root`, or under `$SIMSIAM_DATA_ROOT`.
    Cifar10 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// Vector-dataset containers.
    File { train: PathBuf, test: PathBuf },
}

fn ten() -> usize {
    10
}
fn thirty_two() -> usize {
    32
}
fn two_hundred() -> usize {
    200
}
fn fifty() -> usize {
    50
}
fn six() -> f64 {
    6.0
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            num_classes: 10,
            dim: 32,
            samples_per_class: 200,
            test_per_class: 50,
            separation: 6.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    #[default]
    Mlp,
    SmallConv,
}

/// Encoder and predictor layout. The predictor mode lives in `loss`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// Hidden widths of the MLP backbone, or channel counts of the conv one.
    pub widths: Vec<usize>,
    pub output_dim: usize,
    pub projection_layers: usize,
    /// Defaults to `output_dim`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projection_hidden: Option<usize>,
    pub projection_bn_hidden: bool,
    pub projection_bn_output: bool,
    pub projection_bn_output_affine: bool,
    /// Defaults to `output_dim / 4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor_hidden: Option<usize>,
    pub predictor_bn_hidden: bool,
    pub predictor_bn_output: bool,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Mlp,
            widths: vec![128],
            output_dim: 64,
            projection_layers: 3,
            projection_hidden: None,
            projection_bn_hidden: true,
            projection_bn_output: true,
            projection_bn_output_affine: true,
            predictor_hidden: None,
            predictor_bn_hidden: true,
            predictor_bn_output: false,
            init: InitScheme::Uniform,
        }
    }
}

impl ModelConfig {
    /// Model for per-sample payloads of shape `input` (`[dim]` or `[C, H, W]`).
    pub fn spec(&self, input: &[usize]) -> Result<ModelSpec, CliError> {
        let d = self.output_dim;
        let backbone = match (self.backbone, input) {
            (BackboneKind::Mlp, [dim]) => BackboneSpec::Mlp { input_dim: *dim, widths: self.widths.clone() },
            (BackboneKind::SmallConv, [c, h, w]) => {
                BackboneSpec::SmallConv { in_channels: *c, height: *h, width: *w, channels: self.widths.clone() }
            }
            (kind, shape) => {
                return Err(CliError::Config(format!("model.backbone = {kind:?} cannot take samples of shape {shape:?}")))
            }
        };
        let mut projection = MlpSpec::projection(
            backbone.output_width(),
            self.projection_hidden.unwrap_or(d),
            d,
            self.projection_layers,
        );
        projection.bn_hidden = self.projection_bn_hidden;
        projection.bn_output = self.projection_bn_output;
        projection.bn_output_affine = self.projection_bn_output_affine;
        let mut predictor = MlpSpec::predictor(d, self.predictor_hidden.unwrap_or((d / 4).max(1)));
        predictor.bn_hidden = self.predictor_bn_hidden;
        predictor.bn_output = self.predictor_bn_output;
        let spec = ModelSpec { encoder: EncoderSpec { backbone, projection }, predictor, init: self.init };
        spec.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub monitor: MonitorConfig,
    pub verdict: VerdictConfig,
    /// Train a linear probe on the final features.
    pub run_probe: bool,
    pub probe: ProbeConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { monitor: MonitorConfig::default(), verdict: VerdictConfig::default(), run_probe: true, probe: ProbeConfig::default() }
    }
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            optimizer: self.optimizer,
            augmentation: self.augmentation.clone(),
            monitor: self.diagnostics.monitor,
            seed: self.seed,
            max_steps: self.max_steps,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.preset.as_deref().unwrap_or("run")))
    }

    /// Checks cross-field invariants; messages name the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        self.optimizer.validate().map_err(CliError::Config)?;
        self.augmentation.validate().map_err(|e| CliError::Config(format!("augmentation: {e}")))?;
        if let Some(h) = &self.hypothesis {
            h.validate().map_err(|e| CliError::Config(format!("hypothesis: {e}")))?;
        }
        if self.model.output_dim == 0 {
            return Err(CliError::Config("model.output_dim must be positive".into()));
        }
        if self.model.projection_layers == 0 {
            return Err(CliError::Config("model.projection_layers must be at least 1".into()));
        }
        if self.diagnostics.verdict.window < 2 {
            return Err(CliError::Config("diagnostics.verdict.window must be at least 2".into()));
        }
        if self.diagnostics.monitor.knn.k == 0 || !(self.diagnostics.monitor.knn.temperature > 0.0) {
            return Err(CliError::Config("diagnostics.monitor.knn needs k > 0 and temperature > 0".into()));
        }
        match &self.dataset {
            DatasetConfig::Synthetic { num_classes, dim, samples_per_class, test_per_class, separation, .. } => {
                if *num_classes < 2 || *dim == 0 || *samples_per_class == 0 || *test_per_class == 0 {
                    return Err(CliError::Config("dataset: synthetic sizes must be positive with at least 2 classes".into()));
                }
                if !(*separation >= 0.0) {
                    return Err(CliError::Config("dataset.separation must be non-negative".into()));
                }
            }
            DatasetConfig::Cifar10 { train_limit: Some(0), .. } | DatasetConfig::Cifar10 { test_limit: Some(0), .. } => {
                return Err(CliError::Config("dataset limits must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs serialize to TOML")
    }
}

/// Overlays `top` onto `base`. Tables merge key by key, except that a table
/// whose `kind` differs replaces the old one wholesale.
pub fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            let kind_changes = matches!((b.get("kind"), t.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changes {
                *b = t;
                return;
            }
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a config document. A `preset` key (or `preset_override`, which
/// wins) layers the document on that preset's settings.
pub fn parse_config_with(text: &str, preset_override: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let doc: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
    let named = match (preset_override, doc.get("preset")) {
        (Some(p), _) => Some(p.to_string()),
        (None, Some(toml::Value::String(p))) => Some(p.clone()),
        (None, Some(_)) => return Err(CliError::Config("preset must be a string".into())),
        (None, None) => None,
    };
    let mut value = toml::Value::Table(toml::map::Map::new());
    if let Some(name) = &named {
        for fragment in preset(name).ok_or_else(|| CliError::UnknownPreset(name.clone()))?.fragments {
            merge(&mut value, toml::from_str(fragment).expect("preset fragments are valid TOML"));
        }
    }
    merge(&mut value, doc);
    if let (Some(name), toml::Value::Table(t)) = (&named, &mut value) {
        t.insert("preset".into(), toml::Value::String(name.clone()));
    }
    let cfg = ExperimentConfig::deserialize(value).map_err(|e| CliError::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    parse_config_with(text, None)
}
