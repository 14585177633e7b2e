//! End-to-end checks, one `PASS`/`FAIL`/`SKIP` line each. Exits nonzero if
//! anything failed. The CIFAR-10 smoke run needs `SIMSIAM_DATA_ROOT` and
//! `SIMSIAM_ACCEPTANCE_LONG=1`.

mod common;

use std::time::{Duration, Instant};

use common::*;
use simsiam::autodiff::{grad_check, GradCheckConfig, Tape, Tensor};
use simsiam::cli::RunSummary;
use simsiam::data::{parse_cifar10, serialize_cifar10, DataError, CIFAR_RECORD};
use simsiam::diagnostics::{normalized_output_std, MetricsRecord, VerdictStatus};
use simsiam::nn::{ModelSpec, ParamGroup, ParamRole, ParamStore, PredictorMode, SimSiamModel};
use simsiam::training::{lr_at, sgd_step, GroupLr, OptimizerConfig, OptimizerState};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn run(name: &str, seed: u64) -> (RunSummary, Vec<MetricsRecord>, Duration) {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let (_, s, r) = run_preset(name, "", seed, dir.path());
    (s, r, t.elapsed())
}

fn describe(s: &RunSummary) -> String {
    let e = &s.verdict.evidence;
    format!(
        "{:?} loss {:.4} std*sqrt(d) {:.3} knn {}",
        s.verdict.status,
        e.trailing_loss,
        e.trailing_std * (s.output_dim as f64).sqrt(),
        s.final_knn.map_or("-".into(), |k| format!("{k:.3}"))
    )
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in [1, 2, 3] {
        for case in op_cases(seed) {
            let err = match grad_check(case.graph, &case.inputs, GradCheckConfig::default()) {
                Ok(e) => e,
                Err(e) => return Fail(format!("{}: {e}", case.name)),
            };
            if err > worst.0 {
                worst = (err, case.name.to_string());
            }
        }
    }
    let seen = kinds_exercised(&op_cases(0));
    let missing: Vec<&str> = DIFFERENTIABLE_KINDS.iter().copied().filter(|k| !seen.iter().any(|s| s == k)).collect();
    let el = t.elapsed();
    check(
        worst.0 < 1e-5 && missing.is_empty() && el < Duration::from_secs(60),
        format!("max rel err {:.2e} ({}), uncovered {missing:?}, {:.1}s", worst.0, worst.1, el.as_secs_f64()),
    )
}

fn c2_stop_gradient() -> Outcome {
    let (on, on_r, on_t) = run("fig2-stopgrad-on", 0);
    let (off, off_r, off_t) = run("fig2-stopgrad-off", 0);
    let d = on.output_dim as f64;
    let e = &on.verdict.evidence;
    let std_ok = (0.5..=2.0).contains(&(e.trailing_std * d.sqrt()));
    let knn_ok = on.final_knn.is_some_and(|k| k >= 0.2);
    let oe = &off.verdict.evidence;
    let off_ok = off.verdict.status == VerdictStatus::Collapsed && oe.trailing_loss <= -0.99 && oe.trailing_std <= 0.1 / d.sqrt();
    let steps_ok = on_r.len() <= 3000 && off_r.len() <= 3000;
    let time_ok = on_t < Duration::from_secs(300) && off_t < Duration::from_secs(300);
    check(
        on.verdict.status == VerdictStatus::Healthy && std_ok && knn_ok && off_ok && steps_ok && time_ok,
        format!(
            "on: {} ({} steps, {:.0}s); off: {} ({} steps, {:.0}s)",
            describe(&on),
            on_r.len(),
            on_t.as_secs_f64(),
            describe(&off),
            off_r.len(),
            off_t.as_secs_f64()
        ),
    )
}

fn c3_half_gradient() -> Outcome {
    let worst = (0..5).map(half_gradient_deviation).fold(0.0, f64::max);
    check(worst <= 1e-10, format!("max rel deviation {worst:.2e} over 5 models"))
}

fn c4_inverse_sqrt_d() -> Outcome {
    let d = 2048;
    let z = normal(&[10_000, d], &mut rng(2048));
    let s = normalized_output_std(&z).unwrap();
    let want = 1.0 / (d as f64).sqrt();
    check((s / want - 1.0).abs() < 0.05, format!("std {s:.6} vs 1/sqrt(d) {want:.6} ({:+.2}%)", 100.0 * (s / want - 1.0)))
}

fn c5_one_step() -> Outcome {
    let worst = (0..3).map(|s| k1_equivalence(s, 30)).fold(0.0, f64::max);
    check(worst <= 1e-12, format!("max param diff {worst:.2e} after 30 steps, 3 seeds"))
}

fn c6_moving_average() -> Outcome {
    let t = Instant::now();
    let (ma, _, _) = run("hyp-ma", 0);
    let (direct, _, _) = run("hyp-direct", 0);
    let el = t.elapsed();
    check(
        ma.verdict.status == VerdictStatus::Healthy
            && direct.verdict.status == VerdictStatus::Collapsed
            && el < Duration::from_secs(600),
        format!("moving average: {}; direct: {}; {:.0}s", describe(&ma), describe(&direct), el.as_secs_f64()),
    )
}

fn c7_frozen_predictor() -> Outcome {
    let (frozen, fr, _) = run("table2b", 0);
    let (base, br, _) = run("baseline", 0);
    check(
        frozen.verdict.status != VerdictStatus::Collapsed
            && frozen.verdict.evidence.trailing_loss > -0.8
            && base.verdict.evidence.trailing_loss < -0.9
            && fr.len() == br.len(),
        format!("frozen: {} ({} steps); baseline: {} ({} steps)", describe(&frozen), fr.len(), describe(&base), br.len()),
    )
}

fn c8_optimizer() -> Outcome {
    let cfg = OptimizerConfig { base_lr: 0.05, batch_size: 512, warmup_epochs: Some(0), ..Default::default() };
    let lr0 = lr_at(0, &cfg, 1000);

    let (lr, mu, wd) = (0.07, 0.8, 0.01);
    let theta0 = [0.4, -0.9, 1.3];
    let gs = [[0.1, 0.2, -0.3], [-0.5, 0.05, 0.25]];
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(theta0.to_vec()), ParamGroup::Encoder, ParamRole::Weight { fan_in: 3 });
    let mut state = OptimizerState::default();
    for g in gs {
        let mut t = Tape::new();
        let bind = store.bind(&mut t).unwrap();
        let c = t.constant(Tensor::vector(g.to_vec())).unwrap();
        let m = t.mul(bind.get(id), c).unwrap();
        let l = t.sum(m).unwrap();
        let grads = t.backward(l).unwrap();
        sgd_step(&mut store, &grads, &mut state, GroupLr::uniform(lr), mu, wd);
    }
    let mut unroll = 0.0f64;
    for j in 0..3 {
        let b1 = gs[0][j] + wd * theta0[j];
        let t1 = theta0[j] - lr * b1;
        let t2 = t1 - lr * (mu * b1 + gs[1][j] + wd * t1);
        unroll = unroll.max((store.get(id).value.data()[j] - t2).abs());
    }

    let mut model = SimSiamModel::new(ModelSpec::toy(4, 8, 8), PredictorMode::Learned, 0).unwrap();
    let before: Vec<f64> =
        model.store.iter().filter(|(_, p)| p.role == ParamRole::BnScale).flat_map(|(_, p)| p.value.data().to_vec()).collect();
    sgd_step(&mut model.store, &Default::default(), &mut OptimizerState::default(), GroupLr::uniform(0.1), 0.9, 1e-2);
    let after: Vec<f64> =
        model.store.iter().filter(|(_, p)| p.role == ParamRole::BnScale).flat_map(|(_, p)| p.value.data().to_vec()).collect();
    let shrinks = !before.is_empty() && before.iter().zip(&after).all(|(b, a)| a.abs() < b.abs());
    check(
        lr0 == 0.1 && unroll <= 1e-12 && shrinks,
        format!("lr(0) = {lr0}, unroll err {unroll:.1e}, BN scales shrink: {shrinks}"),
    )
}

fn c9_cifar_parser() -> Outcome {
    let mut r = rng(9);
    let mut bytes = Vec::new();
    for _ in 0..5 {
        bytes.push(rand::Rng::random_range(&mut r, 0..10u8));
        bytes.extend((0..CIFAR_RECORD - 1).map(|_| rand::Rng::random::<u8>(&mut r)));
    }
    let round_trip = parse_cifar10(&bytes, 0).and_then(|s| serialize_cifar10(&s)).is_ok_and(|b| b == bytes);
    let truncated = matches!(parse_cifar10(&bytes[..bytes.len() - 7], 0), Err(DataError::Truncated { .. }));
    bytes[2 * CIFAR_RECORD] = 12;
    let bad_label = matches!(parse_cifar10(&bytes, 0), Err(DataError::BadLabel { record: 2, label: 12 }));
    check(
        round_trip && truncated && bad_label,
        format!("round trip {round_trip}, truncated rejected {truncated}, bad label rejected {bad_label}"),
    )
}

fn c10_cifar_smoke() -> Outcome {
    if simsiam::data::data_root().is_none() || std::env::var("SIMSIAM_ACCEPTANCE_LONG").as_deref() != Ok("1") {
        return Skip("set SIMSIAM_DATA_ROOT and SIMSIAM_ACCEPTANCE_LONG=1 to run".into());
    }
    let (s, records, el) = run("cifar10-smoke", 0);
    let steps = records.len() as u64;
    let quarter = |lo: u64, hi: u64| {
        let v: Vec<f64> = records.iter().filter(|r| r.step >= lo && r.step < hi).filter_map(|r| r.knn_acc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (first, last) = (quarter(0, steps / 4), quarter(3 * steps / 4, steps + 1));
    let fin = s.final_knn.unwrap_or(0.0);
    check(
        fin >= 0.3 && matches!((first, last), (Some(a), Some(b)) if b > a) && el < Duration::from_secs(7200),
        format!("final knn {fin:.3}, first quarter {first:?}, last quarter {last:?}, {:.0}s", el.as_secs_f64()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("C1 finite-difference gradients", c1_gradients),
        ("C2 stop-gradient on/off", c2_stop_gradient),
        ("C3 identity predictor halves gradients", c3_half_gradient),
        ("C4 normalized std of Gaussian vectors", c4_inverse_sqrt_d),
        ("C5 one-substep alternation equivalence", c5_one_step),
        ("C6 moving-average vs direct targets", c6_moving_average),
        ("C7 frozen random predictor", c7_frozen_predictor),
        ("C8 schedule and optimizer", c8_optimizer),
        ("C9 CIFAR-10 parser", c9_cifar_parser),
        ("C10 CIFAR-10 smoke run (optional)", c10_cifar_smoke),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (tag, detail) = match f() {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
