//! Runs a temperature sweep and aggregates it into per-temperature means and prediction checks.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{LearningPair, SweepConfig};
use super::fit::{fit_gap_model, GapFit};
use super::protocol::{epoch_budget, per_example_loss_stats, steady_state_metrics, SteadyState};
use crate::data_sampling::{sample_dataset, SamplingMode};
use crate::error::Result;
use crate::rng::derive_seed;
use crate::sgd::{run, Schedule, SgdConfig};
use crate::stats::{combined_stderr, Estimate};

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub run_id: String,
    pub mode: String,
    pub variant: String,
    pub lambda: f64,
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub seed: u64,
    pub epochs: u64,
    pub diverged: bool,
    pub truncation_epoch: Option<usize>,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub gap: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub sigma_ell_test: Option<f64>,
}

fn mode_label(mode: &SamplingMode) -> &'static str {
    match mode {
        SamplingMode::IidFresh => "iid_fresh",
        SamplingMode::DataSplitting { .. } => "data_splitting",
        SamplingMode::RandomSampling { .. } => "random_sampling",
    }
}

/// SGD configuration for one pair, with the step count covering `epochs` epochs.
pub fn optimizer_config(cfg: &SweepConfig, pair: &LearningPair, steps: u64, seed: u64) -> SgdConfig {
    let o = &cfg.optimizer;
    SgdConfig {
        lambda: pair.lambda,
        batch_size: pair.batch_size,
        alpha: o.alpha,
        beta: o.beta,
        mu: if o.variant.has_momentum() { o.mu } else { 0.0 },
        schedule: if o.variant.has_cosine() { Schedule::Cosine { horizon: steps } } else { Schedule::Constant },
        steps,
        seed,
        batching: Default::default(),
    }
}

fn run_one(cfg: &SweepConfig, pair_index: usize, pair: &LearningPair, seed: u64) -> Result<RunRow> {
    let model = cfg.model.build()?;
    let s = &cfg.sampling;
    let data = sample_dataset(&model, s.mode, s.n_train, s.n_test, seed)?;
    let t = pair.temperature();
    let epochs = epoch_budget(t, cfg.n_ref, cfg.t_ref)?;
    let epoch_length = s.n_train.div_ceil(pair.batch_size) as u64;
    let sgd = optimizer_config(cfg, pair, epochs * epoch_length, derive_seed(&[seed, pair_index as u64]));
    let init = cfg.init.clone().unwrap_or_else(|| vec![0.0; model.dim()]);
    let record = run(&sgd, &model, &data, &init, epoch_length, 0)?;
    let metrics: SteadyState = steady_state_metrics(&record, cfg.window);
    let sigma_ell_test = if metrics.diverged {
        None
    } else {
        per_example_loss_stats(&model, &record.final_state.theta, &data.test)?.std
    };
    Ok(RunRow {
        run_id: format!("p{pair_index:03}-s{seed}"),
        mode: mode_label(&s.mode).into(),
        variant: cfg.optimizer.variant.label().into(),
        lambda: pair.lambda,
        batch_size: pair.batch_size,
        temperature: t,
        seed,
        epochs,
        diverged: metrics.diverged,
        truncation_epoch: metrics.truncation_epoch,
        train_loss: metrics.train_loss,
        test_loss: metrics.test_loss,
        gap: metrics.gap(),
        train_acc: metrics.train_accuracy,
        test_acc: metrics.test_accuracy,
        sigma_ell_test,
    })
}

/// All runs in canonical order: pairs as configured, seeds ascending within a pair.
pub fn run_all(cfg: &SweepConfig) -> Result<Vec<RunRow>> {
    cfg.validate()?;
    let jobs: Vec<(usize, LearningPair, u64)> = cfg
        .learning_pairs()
        .into_iter()
        .enumerate()
        .flat_map(|(k, p)| (0..cfg.seeds).map(move |s| (k, p, cfg.base_seed + s)))
        .collect();
    jobs.par_iter().map(|(k, p, s)| run_one(cfg, *k, p, *s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperatureAggregate {
    #[serde(rename = "T")]
    pub temperature: f64,
    pub runs: usize,
    pub diverged: usize,
    pub train_loss: Option<Estimate>,
    pub test_loss: Option<Estimate>,
    pub gap: Option<Estimate>,
    pub sigma_ell_test: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionCheck {
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions {
    /// Gap model fit converges with `a > 0` and `R² > 0.9`.
    pub gap_model: PredictionCheck,
    /// Mean test loss has an interior minimum over temperature.
    pub interior_optimum: PredictionCheck,
    /// Mean train loss does not decrease with temperature beyond 3 stderr per adjacent pair.
    pub train_loss_monotone: PredictionCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub per_temperature: Vec<TemperatureAggregate>,
    pub fit: Option<GapFit>,
    pub fit_error: Option<String>,
    pub predictions: Predictions,
}

pub const FIT_R_SQUARED_MIN: f64 = 0.9;

fn estimate_of(values: &[f64]) -> Option<Estimate> {
    match values.len() {
        0 => None,
        1 => Some(Estimate::new(values[0], f64::INFINITY)),
        _ => Some(Estimate::from_samples(values)),
    }
}

fn same_temperature(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Groups rows by temperature, ascending.
pub fn group_by_temperature(rows: &[RunRow]) -> Vec<(f64, Vec<&RunRow>)> {
    let mut ts: Vec<f64> = rows.iter().map(|r| r.temperature).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| same_temperature(*a, *b));
    ts.into_iter()
        .map(|t| (t, rows.iter().filter(|r| same_temperature(r.temperature, t)).collect()))
        .collect()
}

pub fn summarize(rows: &[RunRow]) -> SweepSummary {
    let groups = group_by_temperature(rows);
    let per_temperature: Vec<TemperatureAggregate> = groups
        .iter()
        .map(|(t, rs)| {
            let col = |f: fn(&RunRow) -> Option<f64>| estimate_of(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            TemperatureAggregate {
                temperature: *t,
                runs: rs.len(),
                diverged: rs.iter().filter(|r| r.diverged).count(),
                train_loss: col(|r| r.train_loss),
                test_loss: col(|r| r.test_loss),
                gap: col(|r| r.gap),
                sigma_ell_test: col(|r| r.sigma_ell_test),
            }
        })
        .collect();

    let points: Vec<(f64, f64)> =
        per_temperature.iter().filter_map(|a| a.gap.map(|g| (a.temperature, g.value))).collect();
    let (fit, fit_error) = match fit_gap_model(&points, None) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let gap_model = match &fit {
        Some(f) => PredictionCheck {
            passed: f.converged && f.a > 0.0 && f.r_squared > FIT_R_SQUARED_MIN,
            detail: format!("converged={} a={:.6e} b={:.6e} c={:.6e} R²={:.4}", f.converged, f.a, f.b, f.c, f.r_squared),
        },
        None => PredictionCheck { passed: false, detail: fit_error.clone().unwrap_or_default() },
    };

    let tests: Vec<(f64, f64)> =
        per_temperature.iter().filter_map(|a| a.test_loss.map(|e| (a.temperature, e.value))).collect();
    let interior_optimum = match tests.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)) {
        Some((k, (t, v))) => PredictionCheck {
            passed: k > 0 && k + 1 < tests.len(),
            detail: format!("argmin T={t:.6e} (index {k} of {}), mean test loss {v:.6e}", tests.len()),
        },
        None => PredictionCheck { passed: false, detail: "no finite test losses".into() },
    };

    let mut monotone = true;
    let mut worst = f64::INFINITY;
    for pair in groups.windows(2) {
        let d = paired_difference(&pair[0].1, &pair[1].1, |r| r.train_loss);
        if let Some(d) = d {
            let z = if d.stderr > 0.0 { d.value / d.stderr } else if d.value >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
            worst = worst.min(z);
            monotone &= d.value >= -3.0 * d.stderr;
        }
    }
    let train_loss_monotone =
        PredictionCheck { passed: monotone, detail: format!("smallest adjacent (Δ train loss)/stderr = {worst:.3}") };

    SweepSummary { per_temperature, fit, fit_error, predictions: Predictions { gap_model, interior_optimum, train_loss_monotone } }
}

/// `mean(hi) − mean(lo)`, paired by seed when both temperatures share seeds.
pub fn paired_difference(lo: &[&RunRow], hi: &[&RunRow], f: fn(&RunRow) -> Option<f64>) -> Option<Estimate> {
    let diffs: Vec<f64> = lo
        .iter()
        .filter_map(|a| {
            let b = hi.iter().find(|b| b.seed == a.seed)?;
            Some(f(b)? - f(a)?)
        })
        .collect();
    if diffs.len() >= 2 {
        return Some(Estimate::from_samples(&diffs));
    }
    let a = estimate_of(&lo.iter().filter_map(|r| f(r)).collect::<Vec<_>>())?;
    let b = estimate_of(&hi.iter().filter_map(|r| f(r)).collect::<Vec<_>>())?;
    Some(Estimate::new(b.value - a.value, combined_stderr(a.stderr, b.stderr)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<RunRow>,
    pub summary: SweepSummary,
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    let rows = run_all(cfg)?;
    let summary = summarize(&rows);
    Ok(SweepOutput { rows, summary })
}

pub fn write_runs_csv(rows: &[RunRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl SweepOutput {
    /// Writes `runs.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_runs_csv(&self.rows, fs::File::create(dir.join("runs.csv"))?)?;
        let json = serde_json::to_string_pretty(&self.summary)?;
        fs::write(dir.join("summary.json"), json + "\n")?;
        Ok(())
    }
}
