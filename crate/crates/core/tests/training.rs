mod common;

use common::*;
use simsiam::autodiff::{GradStore, ParamId, Tape, Tensor};
use simsiam::data::make_synthetic;
use simsiam::nn::{ModelSpec, ParamGroup, ParamRole, ParamStore, PredictorMode, SimSiamModel};
use simsiam::training::{
    cross_entropy_similarity, lr_at, negative_cosine, predictor_lr_at, run_experiment, sgd_step, GroupLr, LossConfig,
    LrPolicy, MonitorConfig, OptimizerConfig, OptimizerState, Similarity, TrainConfig, TrainError,
};

/// Gradients equal to `g` for each listed parameter, produced by
/// differentiating `Σ ⟨θ_i, g_i⟩`.
fn grads_of(store: &ParamStore, gs: &[(ParamId, Tensor)]) -> GradStore {
    let mut t = Tape::new();
    let bind = store.bind(&mut t).unwrap();
    let mut terms = Vec::new();
    for (id, g) in gs {
        let c = t.constant(g.clone()).unwrap();
        let m = t.mul(bind.get(*id), c).unwrap();
        terms.push(t.sum(m).unwrap());
    }
    let mut l = terms[0];
    for &x in &terms[1..] {
        l = t.add(l, x).unwrap();
    }
    t.backward(l).unwrap()
}

#[test]
fn cosine_of_orthogonal_and_diagonal() {
    let mut t = Tape::new();
    let p = t.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
    let z = t.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
    let l = negative_cosine(&mut t, p, z).unwrap();
    assert!((t.value(l).item() + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
}

#[test]
fn cross_entropy_is_at_least_the_target_entropy() {
    let mut r = rng(21);
    for _ in 0..200 {
        let p = normal(&[1, 6], &mut r);
        let z = normal(&[1, 6], &mut r);
        let mut t = Tape::new();
        let (pv, zv) = (t.constant(p).unwrap(), t.constant(z.clone()).unwrap());
        let l = cross_entropy_similarity(&mut t, pv, zv).unwrap();
        let ce = t.value(l).item();
        let m = z.data().iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.data().iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let entropy: f64 = e.iter().map(|v| v / s).map(|q| -q * q.ln()).sum();
        assert!(ce >= entropy - 1e-12, "{ce} < {entropy}");
    }
}

#[test]
fn schedule_values() {
    let cfg = OptimizerConfig { base_lr: 0.05, batch_size: 512, epochs: 100, ..Default::default() };
    assert_eq!(lr_at(0, &cfg, 1000), 0.1);
    let mid = lr_at(500, &cfg, 1000);
    assert!((mid - 0.5 * (1.0 + (std::f64::consts::PI / 2.0).cos()) * 0.1).abs() < 1e-15);
    assert!((mid - 0.05).abs() < 1e-12);
    let c = OptimizerConfig { predictor_lr_policy: LrPolicy::Constant, ..cfg };
    assert_eq!(predictor_lr_at(900, &c, 1000), 0.1);
    assert!(lr_at(900, &c, 1000) < 0.01);
}

#[test]
fn momentum_unroll_with_constant_gradient() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![0.0, 0.0]), ParamGroup::Encoder, ParamRole::Weight { fan_in: 1 });
    let g = Tensor::vector(vec![0.3, -1.2]);
    let mut state = OptimizerState::default();
    for _ in 0..2 {
        let grads = grads_of(&store, &[(id, g.clone())]);
        sgd_step(&mut store, &grads, &mut state, GroupLr::uniform(1.0), 0.9, 0.0);
    }
    for (v, gj) in store.get(id).value.data().iter().zip(g.data()) {
        assert!((v + 2.9 * gj).abs() < 1e-12, "{v} vs {}", -2.9 * gj);
    }
}

#[test]
fn two_step_closed_form_with_decay() {
    let (lr, mu, wd) = (0.07, 0.8, 0.01);
    let theta0 = [0.4, -0.9, 1.3];
    let g1 = [0.1, 0.2, -0.3];
    let g2 = [-0.5, 0.05, 0.25];
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(theta0.to_vec()), ParamGroup::Encoder, ParamRole::Weight { fan_in: 1 });
    let mut state = OptimizerState::default();
    for g in [g1, g2] {
        let grads = grads_of(&store, &[(id, Tensor::vector(g.to_vec()))]);
        sgd_step(&mut store, &grads, &mut state, GroupLr::uniform(lr), mu, wd);
    }
    for j in 0..3 {
        let b1 = g1[j] + wd * theta0[j];
        let t1 = theta0[j] - lr * b1;
        let b2 = mu * b1 + g2[j] + wd * t1;
        let t2 = t1 - lr * b2;
        assert!((store.get(id).value.data()[j] - t2).abs() < 1e-12);
    }
}

#[test]
fn weight_decay_shrinks_bn_scale_without_gradient() {
    let mut model = SimSiamModel::new(ModelSpec::toy(4, 8, 8), PredictorMode::Learned, 0).unwrap();
    let gammas: Vec<ParamId> = model.store.iter().filter(|(_, p)| p.role == ParamRole::BnScale).map(|(id, _)| id).collect();
    assert!(!gammas.is_empty());
    let before: Vec<Tensor> = gammas.iter().map(|&id| model.store.get(id).value.clone()).collect();
    let mut state = OptimizerState::default();
    sgd_step(&mut model.store, &GradStore::default(), &mut state, GroupLr::uniform(0.1), 0.9, 1e-2);
    for (id, b) in gammas.iter().zip(&before) {
        for (a, b) in model.store.get(*id).value.data().iter().zip(b.data()) {
            assert!((a - b * (1.0 - 0.1 * 1e-2)).abs() < 1e-15);
            assert!(a.abs() < b.abs());
        }
    }
}

#[test]
fn identity_predictor_halves_the_gradient() {
    for seed in 0..3 {
        let dev = half_gradient_deviation(seed);
        assert!(dev < 1e-10, "seed {seed}: {dev:e}");
    }
}

fn toy_cfg(seed: u64, max_steps: u64) -> TrainConfig {
    TrainConfig {
        loss: LossConfig::default(),
        optimizer: OptimizerConfig { base_lr: 0.1, batch_size: 32, epochs: 5, ..Default::default() },
        augmentation: simsiam::data::AugmentationConfig::default(),
        monitor: MonitorConfig { knn_every: 5, ..Default::default() },
        seed,
        max_steps: Some(max_steps),
    }
}

#[test]
fn same_seed_gives_bit_identical_metrics() {
    let data = make_synthetic(4, 8, 24, 4.0, 0).unwrap();
    let run = |seed| {
        let mut m = SimSiamModel::new(ModelSpec::toy(8, 16, 8), PredictorMode::Learned, seed).unwrap();
        let cfg = toy_cfg(seed, 12);
        let sets = simsiam::training::KnnSets { bank: &data, queries: &data };
        (run_experiment(&mut m, &data, Some(sets), &cfg, &mut |_| {}).unwrap().records, m)
    };
    let (a, ma) = run(5);
    let (b, mb) = run(5);
    let (c, _) = run(6);
    assert_eq!(a.len(), 12);
    assert!(a.iter().zip(&b).all(|(x, y)| x.same_values(y)));
    assert_eq!(ma.store.max_abs_diff(&mb.store), Some(0.0));
    assert!(!a.iter().zip(&c).all(|(x, y)| x.same_values(y)));
    assert!(a.iter().filter(|r| r.knn_acc.is_some()).count() >= 2);
}

#[test]
fn losses_stay_in_range_during_training() {
    let data = make_synthetic(4, 8, 24, 4.0, 1).unwrap();
    for sim in [Similarity::Cosine, Similarity::CrossEntropy] {
        let mut m = SimSiamModel::new(ModelSpec::toy(8, 16, 8), PredictorMode::Learned, 1).unwrap();
        let mut cfg = toy_cfg(1, 15);
        cfg.loss.similarity = sim;
        let out = run_experiment(&mut m, &data, None, &cfg, &mut |_| {}).unwrap();
        for r in &out.records {
            match sim {
                Similarity::Cosine => assert!((-1.0..=1.0).contains(&r.loss)),
                Similarity::CrossEntropy => assert!(r.loss >= 0.0),
            }
        }
    }
}

#[test]
fn diverging_run_aborts_with_a_record() {
    let data = make_synthetic(4, 8, 24, 4.0, 2).unwrap();
    let mut m = SimSiamModel::new(ModelSpec::toy(8, 16, 8), PredictorMode::Learned, 2).unwrap();
    let mut cfg = toy_cfg(2, 15);
    cfg.optimizer.base_lr = 1e200;
    cfg.loss.similarity = Similarity::CrossEntropy;
    let mut seen = Vec::new();
    let out = run_experiment(&mut m, &data, None, &cfg, &mut |r| seen.push(r.clone())).unwrap();
    assert!(out.abort.is_some(), "expected an abort");
    let last = out.records.last().unwrap();
    assert!(last.loss.is_nan());
    assert_eq!(seen.len(), out.records.len());
}

#[test]
fn predictor_mode_mismatch_is_rejected() {
    let data = make_synthetic(4, 8, 24, 4.0, 0).unwrap();
    let mut m = SimSiamModel::new(ModelSpec::toy(8, 16, 8), PredictorMode::Identity, 0).unwrap();
    let err = run_experiment(&mut m, &data, None, &toy_cfg(0, 2), &mut |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::InvalidConfig(_)));
}

#[test]
fn frozen_predictor_does_not_move() {
    let data = make_synthetic(4, 8, 24, 4.0, 0).unwrap();
    let mut m = SimSiamModel::new(ModelSpec::toy(8, 16, 8), PredictorMode::FrozenRandom, 0).unwrap();
    let before = m.clone();
    let mut cfg = toy_cfg(0, 5);
    cfg.loss.predictor_mode = PredictorMode::FrozenRandom;
    run_experiment(&mut m, &data, None, &cfg, &mut |_| {}).unwrap();
    let mut moved_encoder = false;
    for ((_, a), (_, b)) in m.store.iter().zip(before.store.iter()) {
        let diff = a.value.max_abs_diff(&b.value);
        match a.group {
            ParamGroup::Predictor => assert_eq!(diff, 0.0, "{}", a.name),
            ParamGroup::Encoder => moved_encoder |= diff > 0.0,
        }
    }
    assert!(moved_encoder);
}
