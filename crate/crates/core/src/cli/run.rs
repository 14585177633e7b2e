use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{data_root, load_cifar10_dir, make_synthetic_split, read_vector_dataset, Dataset, SyntheticSpec, DATA_ROOT_ENV};
use crate::diagnostics::{
    collapse_verdict, linear_probe, CollapseVerdict, MetricsRecord, VerdictConfig, VerdictEvidence, VerdictStatus,
};
use crate::hypothesis::alternating_train;
use crate::nn::{save_checkpoint, SimSiamModel};
use crate::training::{run_experiment, KnnSets, Similarity};

use super::config::{DatasetConfig, ExperimentConfig};
use super::CliError;

pub const EXIT_HEALTHY: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_COLLAPSED: i32 = 10;
pub const EXIT_DIVERGED: i32 = 11;
pub const EXIT_UNSTABLE: i32 = 12;

pub fn exit_code(status: VerdictStatus) -> i32 {
    match status {
        VerdictStatus::Healthy => EXIT_HEALTHY,
        VerdictStatus::Collapsed => EXIT_COLLAPSED,
        VerdictStatus::Diverged => EXIT_DIVERGED,
        VerdictStatus::Unstable => EXIT_UNSTABLE,
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const BANK_FILE: &str = "eta_bank.bin";

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: Option<String>,
    pub seed: u64,
    pub output_dim: usize,
    pub steps: u64,
    pub verdict: CollapseVerdict,
    pub final_knn: Option<f64>,
    pub probe_acc: Option<f64>,
    pub abort: Option<String>,
}

/// Training and held-out sets for a dataset config.
pub fn load_datasets(cfg: &DatasetConfig) -> Result<(Dataset, Dataset), CliError> {
    let sets = match cfg {
        DatasetConfig::Synthetic { num_classes, dim, samples_per_class, test_per_class, separation, seed } => {
            let spec = SyntheticSpec {
                num_classes: *num_classes,
                dim: *dim,
                samples_per_class: *samples_per_class,
                separation: *separation,
                seed: *seed,
            };
            let test = SyntheticSpec { samples_per_class: *test_per_class, ..spec };
            (make_synthetic_split(&spec, 0)?, make_synthetic_split(&test, 1)?)
        }
        DatasetConfig::Cifar10 { root, train_limit, test_limit } => {
            let root = root.clone().or_else(data_root).ok_or_else(|| {
                CliError::Config(format!("dataset.root is unset and {DATA_ROOT_ENV} is not defined"))
            })?;
            (load_cifar10_dir(&root, true, *train_limit)?, load_cifar10_dir(&root, false, *test_limit)?)
        }
        DatasetConfig::File { train, test } => {
            let open = |p: &PathBuf| -> Result<Dataset, CliError> { Ok(read_vector_dataset(BufReader::new(File::open(p)?))?) };
            (open(train)?, open(test)?)
        }
    };
    sets.0.validate()?;
    sets.1.validate()?;
    Ok(sets)
}

/// The verdict for a metrics history. Runs shorter than the configured
/// window are judged on all their records. Cross-entropy losses have no
/// `−1` floor, so only the std condition applies to them.
pub fn verdict_for(records: &[MetricsRecord], cfg: &ExperimentConfig) -> Result<CollapseVerdict, CliError> {
    let mut v: VerdictConfig = cfg.diagnostics.verdict;
    v.window = v.window.min(records.len()).max(2);
    if cfg.loss.similarity == Similarity::CrossEntropy {
        v.loss_floor = None;
    }
    if records.len() < 2 {
        if records.iter().any(|r| !r.loss.is_finite()) {
            let evidence = VerdictEvidence {
                trailing_loss: f64::NAN,
                trailing_std: f64::NAN,
                std_threshold: v.std_factor / (cfg.model.output_dim as f64).sqrt(),
                loss_trend: f64::NAN,
                oscillation: f64::NAN,
            };
            return Ok(CollapseVerdict { status: VerdictStatus::Diverged, evidence });
        }
        return Err(CliError::Run(format!("{} metrics records are too few for a verdict", records.len())));
    }
    Ok(collapse_verdict(records, cfg.model.output_dim, &v)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?);
        }
    }
    Ok(out)
}

/// Runs one experiment and writes its artifacts under [`ExperimentConfig::out_dir`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;

    let (train, test) = load_datasets(&cfg.dataset)?;
    let input = train.samples.first().map(|s| s.payload.shape().to_vec()).unwrap_or_default();
    let spec = cfg.model.spec(&input)?;
    let mut model = SimSiamModel::new(spec, cfg.loss.predictor_mode, cfg.seed)?;
    let tcfg = cfg.train_config();
    let knn = Some(KnnSets { bank: &train, queries: &test });

    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    let mut write_err: Option<std::io::Error> = None;
    let mut sink = |r: &MetricsRecord| {
        if write_err.is_none() {
            let line = serde_json::to_string(r).expect("records serialize");
            if let Err(e) = writeln!(metrics, "{line}") {
                write_err = Some(e);
            }
        }
    };
    let outcome = match &cfg.hypothesis {
        None => run_experiment(&mut model, &train, knn, &tcfg, &mut sink)?,
        Some(alt) => {
            let (outcome, bank) = alternating_train(&mut model, &train, knn, &tcfg, alt, &mut sink)?;
            bank.write_snapshot(BufWriter::new(File::create(dir.join(BANK_FILE))?))?;
            outcome
        }
    };
    if let Some(e) = write_err {
        return Err(e.into());
    }
    metrics.flush()?;
    drop(metrics);

    let verdict = verdict_for(&outcome.records, cfg)?;
    let probe_acc = if cfg.diagnostics.run_probe && outcome.abort.is_none() {
        let src = cfg.diagnostics.monitor.features;
        let tr = model.embed(&train.inputs()?, src, 256)?;
        let te = model.embed(&test.inputs()?, src, 256)?;
        Some(linear_probe(&tr, &train.labels(), &te, &test.labels(), &cfg.diagnostics.probe)?)
    } else {
        None
    };
    save_checkpoint(&model, &dir.join(CHECKPOINT_FILE))?;

    let summary = RunSummary {
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        output_dim: model.output_dim(),
        steps: outcome.records.last().map_or(0, |r| r.step + 1),
        verdict,
        final_knn: outcome.final_knn,
        probe_acc,
        abort: outcome.abort,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summaries serialize");
    fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
    Ok(summary)
}
