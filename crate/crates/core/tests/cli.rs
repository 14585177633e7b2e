use std::path::Path;
use std::process::{Command, Output};

use simsiam::cli::{parse_config, read_metrics, verdict_for, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE};
use simsiam::diagnostics::VerdictStatus;

fn simsiam(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simsiam")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn exit_for(status: VerdictStatus) -> i32 {
    match status {
        VerdictStatus::Healthy => 0,
        VerdictStatus::Collapsed => 10,
        VerdictStatus::Diverged => 11,
        VerdictStatus::Unstable => 12,
    }
}

#[test]
fn lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let o = simsiam(&["--list-presets"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for p in ["baseline", "fig2-stopgrad-off", "table4a", "cifar10", "hyp-ma"] {
        assert!(text.contains(p), "{p} missing from\n{text}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simsiam(&["--no-such-flag"], dir.path())), 2);
    assert_eq!(code(&simsiam(&["--preset", "nope"], dir.path())), 2);
    assert_eq!(code(&simsiam(&["--sweep", "nope"], dir.path())), 2);
    assert_eq!(code(&simsiam(&["--preset", "baseline", "--sweep", "fig2"], dir.path())), 2);
    std::fs::write(dir.path().join("bad.toml"), "[optimizer]\nbase_lrr = 0.1\n").unwrap();
    let o = simsiam(&["--config", "bad.toml"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("base_lrr"));
    std::fs::write(dir.path().join("neg.toml"), "[optimizer]\nbatch_size = 0\n").unwrap();
    assert_eq!(code(&simsiam(&["--config", "neg.toml"], dir.path())), 2);
}

#[test]
fn run_artifacts_agree_with_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.toml"), "max_steps = 60\n").unwrap();
    let o = simsiam(&["--preset", "baseline", "--config", "short.toml", "--seed", "3", "--out", "run"], dir.path());
    let out = dir.path().join("run");
    for f in [METRICS_FILE, SUMMARY_FILE, CONFIG_FILE, "checkpoint.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    let status: VerdictStatus = serde_json::from_value(summary["verdict"]["status"].clone()).unwrap();
    assert_eq!(code(&o), exit_for(status));
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["steps"], 60);

    // the written config reproduces the verdict from the metrics alone
    let cfg = parse_config(&std::fs::read_to_string(out.join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(cfg.max_steps, Some(60));
    let records = read_metrics(&out.join(METRICS_FILE)).unwrap();
    assert_eq!(records.len(), 60);
    let v = verdict_for(&records, &cfg).unwrap();
    assert_eq!(v.status, status);
    assert_eq!(serde_json::to_value(&v.evidence).unwrap(), summary["verdict"]["evidence"]);
}

#[test]
fn divergence_exits_11() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("boom.toml"), "max_steps = 20\n[optimizer]\nbase_lr = 1e200\n[loss]\nsimilarity = \"cross_entropy\"\n")
        .unwrap();
    let o = simsiam(&["--preset", "baseline", "--config", "boom.toml", "--out", "run"], dir.path());
    assert_eq!(code(&o), 11, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("run").join(SUMMARY_FILE).exists());
}

#[test]
fn sweep_runs_every_member() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.toml"), "max_steps = 50\n").unwrap();
    let o = simsiam(&["--sweep", "symmetry", "--config", "short.toml", "--out", "sw"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sw/sweep.json")).unwrap()).unwrap();
    let sw = simsiam::cli::sweep("symmetry").unwrap();
    assert_eq!(table.len(), sw.presets.len());
    for p in sw.presets {
        let c = table[*p].as_i64().unwrap();
        assert!([0, 10, 11, 12].contains(&c), "{p}: {c}");
        let records = read_metrics(&dir.path().join("sw").join(p).join(METRICS_FILE)).unwrap();
        assert_eq!(records.len(), 50);
    }
}
