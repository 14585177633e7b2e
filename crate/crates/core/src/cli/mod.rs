//! Experiment runner.
//!
//! A run is described by a TOML document (schema: [`ExperimentConfig`]),
//! optionally layered on a named preset. Each run directory receives
//! `config.toml` (the resolved config), `metrics.jsonl`, `summary.json`,
//! `checkpoint.bin` and, for alternating runs, `eta_bank.bin`.
//!
//! Exit status: 0 healthy, 10 collapsed, 11 diverged, 12 unstable,
//! 1 runtime error, 2 bad usage or config.

mod config;
mod presets;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::Command;

use clap::Parser;

pub use config::{merge, parse_config, parse_config_with, BackboneKind, DatasetConfig, DiagnosticsConfig, ExperimentConfig, ModelConfig};
pub use presets::{preset, sweep, Preset, Sweep, PRESETS, SWEEPS};
pub use run::{
    exit_code, load_datasets, read_metrics, run, verdict_for, RunSummary, BANK_FILE, CHECKPOINT_FILE, CONFIG_FILE,
    EXIT_COLLAPSED, EXIT_DIVERGED, EXIT_ERROR, EXIT_HEALTHY, EXIT_UNSTABLE, EXIT_USAGE, METRICS_FILE, SUMMARY_FILE,
};

use crate::data::DataError;
use crate::diagnostics::DiagError;
use crate::hypothesis::HypothesisError;
use crate::nn::NnError;
use crate::training::TrainError;
use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown preset {0:?} (see --list-presets)")]
    UnknownPreset(String),
    #[error("unknown sweep {0:?} (see --list-presets)")]
    UnknownSweep(String),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownPreset(_) | CliError::UnknownSweep(_) => EXIT_USAGE,
            _ => EXIT_ERROR,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "simsiam", about = "Stop-gradient Siamese representation learning experiments")]
pub struct Args {
    /// TOML experiment config.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Preset to layer the config on; overrides a `preset` key in the file.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory (for a sweep, the parent of one directory per preset).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run every preset of a sweep, each in its own process.
    #[arg(long, value_name = "NAME", conflicts_with = "preset")]
    pub sweep: Option<String>,
    #[arg(long)]
    pub list_presets: bool,
}

/// Resolves the config for a single run from parsed flags.
pub fn config_from_args(args: &Args) -> Result<ExperimentConfig, CliError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = parse_config_with(&text, args.preset.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn list_presets() {
    println!("presets:");
    for p in PRESETS {
        println!("  {:<20} {}", p.name, p.about);
    }
    println!("sweeps:");
    for s in SWEEPS {
        println!("  {:<20} {}", s.name, s.presets.join(", "));
    }
}

/// Launches one child process per preset of the sweep, all at once, and
/// waits for them. Returns each preset's exit status.
pub fn run_sweep(exe: &std::path::Path, args: &Args) -> Result<Vec<(String, i32)>, CliError> {
    let name = args.sweep.as_deref().unwrap_or_default();
    let sw = sweep(name).ok_or_else(|| CliError::UnknownSweep(name.to_string()))?;
    let root = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(sw.name));
    let mut children = Vec::new();
    for p in sw.presets {
        let mut cmd = Command::new(exe);
        cmd.arg("--preset").arg(p).arg("--out").arg(root.join(p));
        if let Some(c) = &args.config {
            cmd.arg("--config").arg(c);
        }
        if let Some(s) = args.seed {
            cmd.arg("--seed").arg(s.to_string());
        }
        children.push((p.to_string(), cmd.spawn()?));
    }
    let mut out = Vec::new();
    for (p, mut child) in children {
        let code = child.wait()?.code().unwrap_or(EXIT_ERROR);
        out.push((p, code));
    }
    std::fs::create_dir_all(&root)?;
    let table: serde_json::Map<String, serde_json::Value> = out.iter().map(|(p, c)| (p.clone(), (*c).into())).collect();
    std::fs::write(root.join("sweep.json"), serde_json::to_string_pretty(&table).expect("map serializes") + "\n")?;
    Ok(out)
}

/// Entry point of the `simsiam` binary; returns the process exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_HEALTHY };
        }
    };
    if args.list_presets {
        list_presets();
        return EXIT_HEALTHY;
    }
    if args.sweep.is_some() {
        let exe = match std::env::current_exe() {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_ERROR;
            }
        };
        return match run_sweep(&exe, &args) {
            Ok(codes) => {
                for (p, c) in &codes {
                    println!("{p}: exit {c}");
                }
                if codes.iter().any(|(_, c)| *c == EXIT_ERROR || *c == EXIT_USAGE) {
                    EXIT_ERROR
                } else {
                    EXIT_HEALTHY
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        };
    }
    let result = config_from_args(&args).and_then(|cfg| run(&cfg).map(|s| (cfg, s)));
    match result {
        Ok((cfg, s)) => {
            println!(
                "{}: {:?} (loss {:.4}, std*sqrt(d) {:.3}, knn {}, probe {})",
                cfg.out_dir().display(),
                s.verdict.status,
                s.verdict.evidence.trailing_loss,
                s.verdict.evidence.trailing_std * (s.output_dim as f64).sqrt(),
                s.final_knn.map_or("-".into(), |a| format!("{a:.3}")),
                s.probe_acc.map_or("-".into(), |a| format!("{a:.3}")),
            );
            exit_code(s.verdict.status)
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
