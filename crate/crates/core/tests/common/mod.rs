#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use simsiam::autodiff::{AutodiffError, ParamId, Tape, Tensor, Var};
use simsiam::cli::{self, parse_config_with, ExperimentConfig, RunSummary};
use simsiam::data::Dataset;
use simsiam::diagnostics::MetricsRecord;
use simsiam::hypothesis::{alternating_train, AlternationConfig};
use simsiam::nn::{ModelSpec, PredictorMode, SimSiamModel};
use simsiam::training::{
    negative_cosine, cross_entropy_similarity, run_experiment, LossConfig, MonitorConfig, OptimizerConfig, Symmetry,
    TrainConfig,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `Σ y ⊙ R` for a fixed pseudo-random `R` of `y`'s shape, so every output
/// coordinate carries a distinct weight.
pub fn weigh(tape: &mut Tape, y: Var) -> Result<Var, AutodiffError> {
    let shape = tape.value(y).shape().to_vec();
    let r = normal(&shape, &mut rng(0x5eed ^ shape.iter().product::<usize>() as u64));
    let rv = tape.constant(r)?;
    let m = tape.mul(y, rv)?;
    tape.sum(m)
}

pub type Graph = fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub graph: Graph,
}

/// One finite-difference case per differentiable op (and the two loss
/// composites), on random inputs.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let c = |name, inputs, graph: Graph| OpCase { name, inputs, graph };
    let x53 = normal(&[5, 3], &mut r);
    let w43 = normal(&[4, 3], &mut r);
    let b4 = normal(&[4], &mut r);
    let a = normal(&[3, 4], &mut r);
    let b = normal(&[3, 4], &mut r);
    let pos = uniform(&[3, 4], 0.5, 2.0, &mut r);
    let bn_x = normal(&[6, 3], &mut r);
    let gamma = uniform(&[3], 0.5, 1.5, &mut r);
    let beta = normal(&[3], &mut r);
    let img = normal(&[2, 4, 4, 2], &mut r);
    let kern = normal(&[3, 3, 3, 2], &mut r);
    let kb = normal(&[3], &mut r);
    let p = normal(&[4, 5], &mut r);
    let z = normal(&[4, 5], &mut r);
    vec![
        c("affine", vec![x53.clone(), w43.clone(), b4], |t, v| {
            let y = t.affine(v[0], v[1], Some(v[2]))?;
            weigh(t, y)
        }),
        c("affine_no_bias", vec![x53, w43], |t, v| {
            let y = t.affine(v[0], v[1], None)?;
            weigh(t, y)
        }),
        c("add", vec![a.clone(), b.clone()], |t, v| {
            let y = t.add(v[0], v[1])?;
            weigh(t, y)
        }),
        c("sub", vec![a.clone(), b.clone()], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weigh(t, y)
        }),
        c("mul", vec![a.clone(), b.clone()], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weigh(t, y)
        }),
        c("relu", vec![a.clone()], |t, v| {
            let y = t.relu(v[0])?;
            weigh(t, y)
        }),
        c("scale", vec![a.clone()], |t, v| {
            let y = t.scale(v[0], -1.7)?;
            weigh(t, y)
        }),
        c("log", vec![pos], |t, v| {
            let y = t.log(v[0])?;
            weigh(t, y)
        }),
        c("stop_gradient", vec![a.clone()], |t, v| {
            let s = t.stop_gradient(v[0])?;
            let y = t.mul(v[0], s)?;
            weigh(t, y)
        }),
        c("reshape", vec![a.clone()], |t, v| {
            let y = t.reshape(v[0], vec![2, 6])?;
            weigh(t, y)
        }),
        c("concat", vec![a.clone(), b.clone()], |t, v| {
            let y = t.concat(&[v[0], v[1]])?;
            weigh(t, y)
        }),
        c("sum", vec![a.clone()], |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        }),
        c("mean", vec![a.clone()], |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.mean(y)
        }),
        c("l2_normalize", vec![a.clone()], |t, v| {
            let y = t.l2_normalize(v[0], 1e-12)?;
            weigh(t, y)
        }),
        c("softmax", vec![a.clone()], |t, v| {
            let y = t.softmax(v[0])?;
            weigh(t, y)
        }),
        c("log_softmax", vec![a], |t, v| {
            let y = t.log_softmax(v[0])?;
            weigh(t, y)
        }),
        c("batch_norm_train", vec![bn_x.clone(), gamma.clone(), beta.clone()], |t, v| {
            let (y, _) = t.batch_norm_train(v[0], Some(v[1]), Some(v[2]), 1e-5)?;
            weigh(t, y)
        }),
        c("batch_norm_train_no_affine", vec![bn_x.clone()], |t, v| {
            let (y, _) = t.batch_norm_train(v[0], None, None, 1e-5)?;
            weigh(t, y)
        }),
        c("batch_norm_eval", vec![bn_x, gamma, beta], |t, v| {
            let y = t.batch_norm_eval(v[0], Some(v[1]), Some(v[2]), &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)?;
            weigh(t, y)
        }),
        c("conv2d", vec![img.clone(), kern.clone(), kb], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1)?;
            weigh(t, y)
        }),
        c("conv2d_valid", vec![img.clone(), kern], |t, v| {
            let y = t.conv2d(v[0], v[1], None, 0)?;
            weigh(t, y)
        }),
        c("avg_pool2", vec![img.clone()], |t, v| {
            let y = t.avg_pool2(v[0])?;
            weigh(t, y)
        }),
        c("global_avg_pool", vec![img], |t, v| {
            let y = t.global_avg_pool(v[0])?;
            weigh(t, y)
        }),
        c("negative_cosine", vec![p.clone(), z.clone()], |t, v| negative_cosine(t, v[0], v[1])),
        c("cross_entropy_similarity", vec![p, z], |t, v| cross_entropy_similarity(t, v[0], v[1])),
    ]
}

/// Op kinds every case set must exercise.
pub const DIFFERENTIABLE_KINDS: &[&str] = &[
    "Affine", "Add", "Sub", "Mul", "Relu", "BatchNormTrain", "BatchNormEval", "L2Normalize", "Softmax", "LogSoftmax",
    "Log", "Mean", "Sum", "Scale", "Concat", "Reshape", "StopGradient", "Conv2d", "AvgPool2", "GlobalAvgPool",
];

/// Op kinds recorded while building each case's graph once.
pub fn kinds_exercised(cases: &[OpCase]) -> Vec<String> {
    let mut out = Vec::new();
    for case in cases {
        let mut tape = Tape::new();
        let vars: Vec<Var> =
            case.inputs.iter().enumerate().map(|(i, x)| tape.param(ParamId(i), x.clone()).unwrap()).collect();
        (case.graph)(&mut tape, &vars).unwrap();
        for k in tape.kinds() {
            let k = format!("{k:?}");
            if !out.contains(&k) {
                out.push(k);
            }
        }
    }
    out
}

pub fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

/// Parameter-gradient ratio check for the identity predictor: returns the
/// worst elementwise relative deviation of `g_sym` from `½ · g_full`.
pub fn half_gradient_deviation(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut model = SimSiamModel::new(ModelSpec::toy(6, 10, 8), PredictorMode::Identity, seed).unwrap();
    let x1 = normal(&[12, 6], &mut r);
    let x2 = normal(&[12, 6], &mut r);
    let grads = |model: &mut SimSiamModel, cfg: LossConfig| {
        let mut tape = Tape::new();
        let bind = model.store.bind(&mut tape).unwrap();
        let a = tape.constant(x1.clone()).unwrap();
        let b = tape.constant(x2.clone()).unwrap();
        let outs = model.forward_simsiam(&mut tape, &bind, a, b, simsiam::nn::Mode::Train).unwrap();
        let loss = simsiam::training::simsiam_loss(&mut tape, &[outs], &cfg).unwrap();
        tape.backward(loss).unwrap()
    };
    let sym = LossConfig { symmetry: Symmetry::Symmetric, stop_grad: true, predictor_mode: PredictorMode::Identity, ..Default::default() };
    let full = LossConfig { symmetry: Symmetry::Asymmetric, stop_grad: false, ..sym };
    let g_sym = grads(&mut model, sym);
    let g_full = grads(&mut model, full);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (id, p) in model.store.iter() {
        if !p.trainable {
            continue;
        }
        let (Some(a), Some(b)) = (g_sym.get(id), g_full.get(id)) else {
            assert!(g_sym.get(id).is_none() && g_full.get(id).is_none(), "{} has a gradient in one run only", p.name);
            continue;
        };
        for (x, y) in a.data().iter().zip(b.data()) {
            let half = 0.5 * y;
            let denom = x.abs().max(half.abs());
            if denom > 0.0 {
                worst = worst.max((x - half).abs() / denom);
            }
            compared += 1;
        }
    }
    assert!(compared > 0);
    worst
}

/// Largest parameter difference between `steps` Siamese steps (asymmetric,
/// no predictor) and `steps` single-substep alternations from the same seed.
pub fn k1_equivalence(seed: u64, steps: u64) -> f64 {
    let data = simsiam::data::make_synthetic(4, 8, 16, 4.0, seed).unwrap();
    let spec = ModelSpec::toy(8, 16, 8);
    let cfg = TrainConfig {
        loss: LossConfig { symmetry: Symmetry::Asymmetric, predictor_mode: PredictorMode::Identity, ..Default::default() },
        optimizer: OptimizerConfig { base_lr: 0.1, batch_size: 16, epochs: 4, ..Default::default() },
        augmentation: simsiam::data::AugmentationConfig::default(),
        monitor: MonitorConfig::default(),
        seed,
        max_steps: Some(steps),
    };
    let mut a = SimSiamModel::new(spec.clone(), PredictorMode::Identity, seed).unwrap();
    let mut b = a.clone();
    run_experiment(&mut a, &data, None, &cfg, &mut |_| {}).unwrap();
    let alt = AlternationConfig { inner_steps: 1, ..Default::default() };
    alternating_train(&mut b, &data, None, &cfg, &alt, &mut |_| {}).unwrap();
    a.store.max_abs_diff(&b.store).unwrap()
}

/// `cli::run` on a preset (plus `extra` TOML) into `dir`.
pub fn run_preset(name: &str, extra: &str, seed: u64, dir: &Path) -> (ExperimentConfig, RunSummary, Vec<MetricsRecord>) {
    let mut cfg = parse_config_with(extra, Some(name)).unwrap();
    cfg.seed = seed;
    cfg.out_dir = Some(dir.to_path_buf());
    let summary = cli::run(&cfg).unwrap();
    let records = cli::read_metrics(&dir.join(cli::METRICS_FILE)).unwrap();
    (cfg, summary, records)
}

/// Mean per-channel unbiased std of row-normalized `z`, computed directly.
pub fn oracle_output_std(z: &[Vec<f64>]) -> f64 {
    let n = z.len() as f64;
    let d = z[0].len();
    let unit: Vec<Vec<f64>> = z
        .iter()
        .map(|r| {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(|x| x / norm).collect()
        })
        .collect();
    (0..d)
        .map(|j| {
            let m = unit.iter().map(|r| r[j]).sum::<f64>() / n;
            (unit.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .sum::<f64>()
        / d as f64
}

/// Brute-force weighted kNN, written independently of the library.
pub fn oracle_knn(bank: &[Vec<f64>], bank_y: &[usize], q: &[Vec<f64>], q_y: &[usize], k: usize, t: f64) -> f64 {
    let unit = |r: &Vec<f64>| {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        r.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let bank: Vec<Vec<f64>> = bank.iter().map(unit).collect();
    let classes = bank_y.iter().chain(q_y).max().unwrap() + 1;
    let mut hits = 0;
    for (row, &y) in q.iter().zip(q_y) {
        let row = unit(row);
        let mut sims: Vec<(f64, usize)> =
            bank.iter().zip(bank_y).map(|(b, &l)| (b.iter().zip(&row).map(|(a, c)| a * c).sum(), l)).collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut votes = vec![0.0; classes];
        let top = sims[0].0;
        for &(s, l) in sims.iter().take(k) {
            votes[l] += ((s - top) / t).exp();
        }
        let best = (0..classes).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
        hits += (best == y) as usize;
    }
    hits as f64 / q.len() as f64
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn dataset_rows(d: &Dataset) -> (Vec<Vec<f64>>, Vec<usize>) {
    (d.samples.iter().map(|s| s.payload.data().to_vec()).collect(), d.labels())
}
