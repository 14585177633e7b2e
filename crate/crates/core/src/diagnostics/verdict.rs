use serde::{Deserialize, Serialize};

use super::{DiagError, MetricsRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Healthy,
    Collapsed,
    Diverged,
    Unstable,
}

/// Thresholds for [`collapse_verdict`].
///
/// `loss_floor: None` drops the loss condition, for losses whose minimum is
/// not `−1` (cross-entropy similarity).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerdictConfig {
    pub window: usize,
    pub loss_floor: Option<f64>,
    /// Collapse needs `output_std ≤ std_factor / √d`.
    pub std_factor: f64,
    /// Mean absolute step-to-step loss change that counts as oscillation.
    pub oscillation: f64,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        Self { window: 100, loss_floor: Some(-0.99), std_factor: 0.1, oscillation: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictEvidence {
    pub trailing_loss: f64,
    pub trailing_std: f64,
    pub std_threshold: f64,
    /// Least-squares slope of loss per record over the window.
    pub loss_trend: f64,
    pub oscillation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseVerdict {
    pub status: VerdictStatus,
    pub evidence: VerdictEvidence,
}

/// Classifies a run from its metrics history; precedence is diverged,
/// collapsed, unstable, healthy. `d` is the output dimension.
pub fn collapse_verdict(history: &[MetricsRecord], d: usize, cfg: &VerdictConfig) -> Result<CollapseVerdict, DiagError> {
    let window = cfg.window.max(2);
    if history.len() < window {
        return Err(DiagError::InsufficientHistory { need: window, got: history.len() });
    }
    let tail = &history[history.len() - window..];
    let losses: Vec<f64> = tail.iter().map(|r| r.loss).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let trailing_loss = mean(&losses);
    let trailing_std = mean(&tail.iter().map(|r| r.output_std).collect::<Vec<_>>());
    let xm = (window as f64 - 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, l) in losses.iter().enumerate() {
        sxy += (i as f64 - xm) * (l - trailing_loss);
        sxx += (i as f64 - xm).powi(2);
    }
    let oscillation = losses.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (window - 1) as f64;
    let evidence = VerdictEvidence {
        trailing_loss,
        trailing_std,
        std_threshold: cfg.std_factor / (d as f64).sqrt(),
        loss_trend: sxy / sxx,
        oscillation,
    };
    let non_finite = history.iter().any(|r| !r.loss.is_finite() || !r.output_std.is_finite());
    let status = if non_finite {
        VerdictStatus::Diverged
    } else if cfg.loss_floor.is_none_or(|f| trailing_loss <= f) && trailing_std <= evidence.std_threshold {
        VerdictStatus::Collapsed
    } else if oscillation > cfg.oscillation {
        VerdictStatus::Unstable
    } else {
        VerdictStatus::Healthy
    };
    Ok(CollapseVerdict { status, evidence })
}
