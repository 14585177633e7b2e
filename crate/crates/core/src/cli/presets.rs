//! Named experiment settings. Each preset is a stack of TOML fragments
//! merged in order onto the defaults; a user document goes on top.

pub struct Preset {
    pub name: &'static str,
    pub about: &'static str,
    pub fragments: &'static [&'static str],
}

pub struct Sweep {
    pub name: &'static str,
    pub presets: &'static [&'static str],
}

// 2000 training vectors, batch 128: 15 steps per epoch, 3000 steps.
const TOY: &str = r#"
[dataset]
kind = "synthetic"

[optimizer]
base_lr = 0.2
batch_size = 128
epochs = 200

[augmentation]
noise_std = 0.3
dropout_prob = 0.05

[diagnostics.monitor]
knn_every = 500
log_every = 1
"#;

const STRONG_AUG: &str = r#"
[augmentation]
noise_std = 1.0
dropout_prob = 0.2
"#;

const NO_PREDICTOR: &str = r#"
[loss]
predictor_mode = "identity"
symmetry = "asymmetric"
"#;

const CIFAR: &str = r#"
[dataset]
kind = "cifar10"

[model]
backbone = "small_conv"
widths = [32, 64, 128]
output_dim = 128
projection_layers = 2

[optimizer]
base_lr = 0.03
weight_decay = 0.0005
momentum = 0.9
batch_size = 512
epochs = 800

[diagnostics.monitor]
knn_every = 500
log_every = 50

[diagnostics.probe]
epochs = 10
batch_size = 256
"#;

macro_rules! p {
    ($name:literal, $about:literal, [$($f:expr),* $(,)?]) => {
        Preset { name: $name, about: $about, fragments: &[$($f),*] }
    };
}

pub const PRESETS: &[Preset] = &[
    p!("baseline", "toy clusters, default architecture, symmetric loss with stop-gradient", [TOY]),
    p!("fig2-stopgrad-on", "toy clusters, strong augmentation, stop-gradient on", [TOY, STRONG_AUG, "loss.stop_grad = true"]),
    p!("fig2-stopgrad-off", "as fig2-stopgrad-on with stop-gradient removed", [TOY, STRONG_AUG, "loss.stop_grad = false"]),
    p!("table2a", "no predictor", [TOY, "loss.predictor_mode = \"identity\""]),
    p!("table2b", "predictor fixed at its random init", [TOY, "loss.predictor_mode = \"frozen_random\""]),
    p!("table2c", "predictor lr kept constant", [TOY, "optimizer.predictor_lr_policy = \"constant\""]),
    p!("table3-b64", "batch 64", [TOY, "optimizer.batch_size = 64"]),
    p!("table3-b128", "batch 128", [TOY, "optimizer.batch_size = 128"]),
    p!("table3-b256", "batch 256", [TOY, "optimizer.batch_size = 256"]),
    p!("table3-b512", "batch 512", [TOY, "optimizer.batch_size = 512"]),
    p!("table3-b1024", "batch 1024, warmup", [TOY, "optimizer.batch_size = 1024"]),
    p!(
        "table4a",
        "no BN in either head, 10 warmup epochs",
        [TOY, "[model]\nprojection_bn_hidden = false\nprojection_bn_output = false\npredictor_bn_hidden = false\n[optimizer]\nwarmup_epochs = 10"]
    ),
    p!("table4b", "BN on hidden layers only", [TOY, "model.projection_bn_output = false"]),
    p!("table4c", "default BN placement", [TOY]),
    p!("table4d", "BN also on the predictor output", [TOY, "model.predictor_bn_output = true"]),
    p!("loss-cosine", "negative cosine similarity", [TOY, "loss.similarity = \"cosine\""]),
    p!("loss-ce", "cross-entropy similarity", [TOY, "loss.similarity = \"cross_entropy\""]),
    p!("sym", "symmetrized loss", [TOY, "loss.symmetry = \"symmetric\""]),
    p!("asym", "one asymmetric term", [TOY, "loss.symmetry = \"asymmetric\""]),
    p!("asym2x", "two asymmetric terms on independent view pairs", [TOY, "loss.symmetry = \"asymmetric_2x\""]),
    p!("dim-16", "output dim 16", [TOY, "model.output_dim = 16"]),
    p!("dim-32", "output dim 32", [TOY, "model.output_dim = 32"]),
    p!("dim-64", "output dim 64", [TOY, "model.output_dim = 64"]),
    p!("dim-128", "output dim 128", [TOY, "model.output_dim = 128"]),
    p!("pred-no-bottleneck", "predictor hidden width equal to d", [TOY, "model.predictor_hidden = 64"]),
    p!("init-fixed-std", "weights drawn from N(0, 0.01^2)", [TOY, "model.init = \"fixed_std\""]),
    p!("cifar10", "CIFAR-10, small conv encoder, 800 epochs", [CIFAR]),
    p!(
        "cifar10-smoke",
        "CIFAR-10 5000-image subset, 30 epochs, kNN every epoch",
        [CIFAR, "[dataset]\ntrain_limit = 5000\ntest_limit = 1000\n[optimizer]\nbatch_size = 128\nepochs = 30\n[diagnostics.monitor]\nknn_every = 39\nlog_every = 13"]
    ),
    p!("hyp-multistep-k1", "alternating optimization, one SGD step per eta solve", [TOY, "hypothesis.inner_steps = 1"]),
    p!("hyp-multistep-k10", "alternating optimization, 10 SGD steps per eta solve", [TOY, "hypothesis.inner_steps = 10"]),
    p!("hyp-multistep-k100", "alternating optimization, 100 SGD steps per eta solve", [TOY, "hypothesis.inner_steps = 100"]),
    p!(
        "hyp-ma",
        "no predictor, eta kept as a moving average (m = 0.8)",
        [TOY, STRONG_AUG, NO_PREDICTOR, "[hypothesis]\nupdate = { kind = \"moving_average\", momentum = 0.8 }"]
    ),
    p!("hyp-direct", "no predictor, eta assigned directly", [TOY, STRONG_AUG, NO_PREDICTOR, "[hypothesis]\nupdate = { kind = \"direct\" }"]),
];

pub const SWEEPS: &[Sweep] = &[
    Sweep { name: "fig2", presets: &["fig2-stopgrad-on", "fig2-stopgrad-off"] },
    Sweep { name: "table2", presets: &["table2a", "table2b", "table2c"] },
    Sweep { name: "table3", presets: &["table3-b64", "table3-b128", "table3-b256", "table3-b512", "table3-b1024"] },
    Sweep { name: "table4", presets: &["table4a", "table4b", "table4c", "table4d"] },
    Sweep { name: "similarity", presets: &["loss-cosine", "loss-ce"] },
    Sweep { name: "symmetry", presets: &["sym", "asym", "asym2x"] },
    Sweep { name: "dim", presets: &["dim-16", "dim-32", "dim-64", "dim-128", "pred-no-bottleneck"] },
    Sweep { name: "hyp", presets: &["hyp-multistep-k1", "hyp-multistep-k10", "hyp-multistep-k100", "hyp-ma", "hyp-direct"] },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn sweep(name: &str) -> Option<&'static Sweep> {
    SWEEPS.iter().find(|s| s.name == name)
}
