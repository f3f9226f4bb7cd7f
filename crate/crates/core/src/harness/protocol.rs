//! Per-run protocol: epoch budget, spike truncation, steady-state medians, per-example loss spread.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sgd::TrajectoryRecord;
use crate::stats::{mean, median, sample_std};
use crate::toy_models::{LossModel, SampleSet};

/// `N_ref · max(1, min(4, 1 + ¼(T_ref/T − 1)))`, rounded.
pub fn epoch_budget(temperature: f64, n_ref: u64, t_ref: f64) -> Result<u64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    let factor = (1.0 + 0.25 * (t_ref / temperature - 1.0)).clamp(1.0, 4.0);
    Ok((n_ref as f64 * factor).round() as u64)
}

/// Start of a trailing excursion: when the last 7 values average above the last 25, the first
/// index of the maximal trailing run above the last-25 mean. Series shorter than 25 never spike.
pub fn detect_spike(series: &[f64]) -> Option<usize> {
    let n = series.len();
    if n < 25 {
        return None;
    }
    let last25 = mean(&series[n - 25..]);
    // Rounding in the two means must not read a flat tail as an excursion.
    let level = last25 + 1e-12 * last25.abs();
    if mean(&series[n - 7..]) <= level {
        return None;
    }
    let run = series.iter().rev().take_while(|&&x| x > level).count();
    (run > 0).then_some(n - run)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Epoch index where the kept series ends, when a spike was cut.
    pub truncation_epoch: Option<usize>,
    /// Fewer than `window` epochs survived truncation; the whole tail was used.
    pub short: bool,
    pub diverged: bool,
}

impl SteadyState {
    pub fn gap(&self) -> Option<f64> {
        Some(self.test_loss? - self.train_loss?)
    }
}

/// Medians over the final `window` epochs after spike truncation.
pub fn steady_state_metrics(record: &TrajectoryRecord, window: usize) -> SteadyState {
    if record.diverged || record.train_loss.is_empty() {
        return SteadyState {
            train_loss: None,
            test_loss: None,
            train_accuracy: None,
            test_accuracy: None,
            truncation_epoch: None,
            short: false,
            diverged: true,
        };
    }
    let cut = [detect_spike(&record.train_loss), detect_spike(&record.test_loss)].into_iter().flatten().min();
    let end = cut.unwrap_or(record.train_loss.len()).max(1);
    let start = end.saturating_sub(window);
    let tail = |s: &[f64]| median(&s[start..end]);
    SteadyState {
        train_loss: Some(tail(&record.train_loss)),
        test_loss: Some(tail(&record.test_loss)),
        train_accuracy: record.train_accuracy.as_deref().map(tail),
        test_accuracy: record.test_accuracy.as_deref().map(tail),
        truncation_epoch: cut,
        short: end - start < window,
        diverged: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSpread {
    pub mean: f64,
    /// Sample std of per-example losses; `None` for a single example.
    pub std: Option<f64>,
}

pub fn per_example_loss_stats(model: &LossModel, theta: &[f64], set: &SampleSet) -> Result<LossSpread> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let losses = set.iter().map(|x| model.per_example_loss(theta, x)).collect::<Result<Vec<f64>>>()?;
    Ok(LossSpread { mean: model.train_set_loss(theta, set)?, std: (losses.len() > 1).then(|| sample_std(&losses)) })
}
