mod common;

use common::{mean, unbiased_var};
use gaplab::data_sampling::{sample_dataset, SamplingMode};
use gaplab::error::Error;
use gaplab::langevin::LangevinParams;
use gaplab::sgd::{
    apply_momentum, apply_plain, collect_samples, cosine_lr, run, step_momentum, step_plain, temperature, Batching,
    OptimizerState, Schedule, SgdConfig, SgdRng,
};
use gaplab::steady_state::{boltzmann_auto, EffectivePotential, GridSpec};
use gaplab::toy_models::{LossModel, SampleSet};
use proptest::prelude::*;

fn gm() -> LossModel {
    LossModel::gaussian_mean(0.5, 1.0).unwrap()
}

fn iid_pair(model: &LossModel, n: usize, seed: u64) -> gaplab::data_sampling::DataSetPair {
    sample_dataset(model, SamplingMode::IidFresh, n, n, seed).unwrap()
}

#[test]
fn temperature_is_lambda_over_batch() {
    assert!((temperature(&SgdConfig::plain(0.1, 500)) - 2e-4).abs() < 1e-18);
    assert_eq!(temperature(&SgdConfig::plain(0.1, 1)), 0.1);
    assert!((temperature(&SgdConfig::plain(0.02, 100)) - 2e-4).abs() < 1e-18);
    let cosine = SgdConfig { schedule: Schedule::Cosine { horizon: 100 }, ..SgdConfig::plain(0.1, 10) };
    assert_eq!(cosine.temperature(), 0.01);
}

#[test]
fn cosine_schedule_values() {
    assert_eq!(cosine_lr(0.3, 0, 100).unwrap(), 0.3);
    assert_eq!(cosine_lr(0.3, 100, 100).unwrap(), 0.0);
    assert!((cosine_lr(0.3, 50, 100).unwrap() - 0.3 * 0.5f64.sqrt()).abs() < 1e-15);
    assert!(matches!(cosine_lr(0.3, 101, 100), Err(Error::ScheduleOverrun { .. })));
    let bad = SgdConfig { schedule: Schedule::Cosine { horizon: 10 }, steps: 11, ..SgdConfig::plain(0.1, 1) };
    assert!(bad.validate().is_err());
}

#[test]
fn config_validation() {
    assert!(SgdConfig::plain(0.1, 0).validate().is_err());
    assert!(SgdConfig { mu: 1.0, ..SgdConfig::plain(0.1, 1) }.validate().is_err());
    assert!(SgdConfig { beta: -1.0, ..SgdConfig::plain(0.1, 1) }.validate().is_err());
    assert!(SgdConfig::momentum(0.1, 10).validate().is_ok());
}

#[test]
fn full_batch_noise_free_step_is_gradient_descent() {
    let model = gm();
    let xs = [0.2, 1.4, -0.3, 0.9];
    let train = SampleSet::from_scalars(&xs);
    let xbar = mean(&xs);
    let cfg = SgdConfig { alpha: 0.0, batching: Batching::FullSet, ..SgdConfig::plain(0.3, xs.len()) };
    let state = OptimizerState::at(vec![2.0]);
    let next = step_plain(&state, &cfg, &model, &train, &mut SgdRng::new(0)).unwrap();
    assert!((next.theta[0] - (2.0 - 0.3 * (2.0 - xbar))).abs() < 1e-15);
    assert_eq!(next.t, 1);
}

#[test]
fn zero_learning_rate_leaves_state_unchanged() {
    let model = gm();
    let train = SampleSet::from_scalars(&[0.2, 1.4, -0.3]);
    let cfg = SgdConfig { beta: 1.0, ..SgdConfig::plain(0.0, 2) };
    let state = OptimizerState::at(vec![0.7]);
    let next = step_plain(&state, &cfg, &model, &train, &mut SgdRng::new(1)).unwrap();
    assert_eq!(next.theta, state.theta);
    assert!(next.velocity.iter().all(|v| *v == 0.0));
}

#[test]
fn step_kinds_check_momentum_coefficient() {
    let model = gm();
    let train = SampleSet::from_scalars(&[0.2]);
    let state = OptimizerState::at(vec![0.0]);
    assert!(step_plain(&state, &SgdConfig::momentum(0.1, 1), &model, &train, &mut SgdRng::new(0)).is_err());
    assert!(step_momentum(&state, &SgdConfig::plain(0.1, 1), &model, &train, &mut SgdRng::new(0)).is_err());
}

#[test]
fn stationary_variance_matches_fluctuation_dissipation() {
    let model = gm();
    let data = iid_pair(&model, 100, 4);
    let xs = common::scalars(&data.train);
    let d = common::biased_var(&xs);
    for beta in [0.0, 0.5] {
        let cfg = SgdConfig { beta, seed: 21, ..SgdConfig::plain(0.01, 1) };
        let alpha = cfg.alpha;
        let init = [mean(&xs) / (1.0 + alpha)];
        let samples = collect_samples(&cfg, &model, &data.train, &init, 1000, 200, 200, 32).unwrap();
        let theta: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let expected = cfg.temperature() * (d + beta * beta) / (2.0 * (1.0 + alpha));
        let got = unbiased_var(&theta);
        assert!((got / expected - 1.0).abs() < 0.05, "β={beta}: {got} vs {expected}");
    }
}

#[test]
fn first_momentum_step_matches_plain_step() {
    let model = gm();
    let train = SampleSet::from_scalars(&[0.2, 1.4, -0.3, 0.9, 2.2]);
    let batch = [0usize, 3, 3, 1];
    let plain = SgdConfig::plain(0.05, 4);
    let heavy = SgdConfig { mu: 0.9, ..plain.clone() };
    let mut a = OptimizerState::at(vec![1.1]);
    let mut b = a.clone();
    apply_plain(&mut a, &plain, &model, &train, Some(&batch), &[0.0]).unwrap();
    apply_momentum(&mut b, &heavy, &model, &train, Some(&batch)).unwrap();
    assert!((a.theta[0] - b.theta[0]).abs() < 1e-15);
}

#[test]
fn velocity_decays_geometrically_without_force() {
    let model = gm();
    let train = SampleSet::from_scalars(&[0.4, 0.4]);
    let cfg = SgdConfig { alpha: 0.0, batching: Batching::FullSet, ..SgdConfig::momentum(0.0, 2) };
    let mut state = OptimizerState { theta: vec![0.4], velocity: vec![1.0], t: 0 };
    let mut rng = SgdRng::new(0);
    for t in 1..=20 {
        state = step_momentum(&state, &cfg, &model, &train, &mut rng).unwrap();
        assert!((state.velocity[0] - 0.9f64.powi(t)).abs() < 1e-15);
    }
}

#[test]
fn momentum_matches_straight_line_recursion() {
    let model = gm();
    let data = iid_pair(&model, 50, 8);
    let xs = common::scalars(&data.train);
    let cfg = SgdConfig { seed: 77, ..SgdConfig::momentum(0.05, 5) };
    let mut batch_rng = SgdRng::new(cfg.seed);
    let mut rng = SgdRng::new(cfg.seed);
    let mut state = OptimizerState::at(vec![-1.0]);
    let (mut theta, mut v) = (-1.0f64, 0.0f64);
    let mut idx = Vec::new();
    for _ in 0..500 {
        batch_rng.draw_batch(xs.len(), cfg.batch_size, &mut idx);
        let g = idx.iter().map(|&i| theta - xs[i]).sum::<f64>() / idx.len() as f64;
        v = 0.9 * v + g + cfg.alpha * theta;
        theta -= cfg.lambda * v;
        state = step_momentum(&state, &cfg, &model, &data.train, &mut rng).unwrap();
        assert!((state.theta[0] - theta).abs() < 1e-12);
        assert!((state.velocity[0] - v).abs() < 1e-12);
    }
}

#[test]
fn zero_steps_record_only_initial_metrics() {
    let model = gm();
    let data = iid_pair(&model, 20, 1);
    let rec = run(&SgdConfig::plain(0.1, 2), &model, &data, &[0.0], 10, 1).unwrap();
    assert_eq!(rec.epochs_recorded(), 1);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
    assert!(close(rec.train_loss[0], model.train_set_loss(&[0.0], &data.train).unwrap()));
    assert!(close(rec.test_loss[0], model.train_set_loss(&[0.0], &data.test).unwrap()));
    assert!(!rec.diverged);
    assert!(rec.train_accuracy.is_none());
    assert!(run(&SgdConfig::plain(0.1, 2), &model, &data, &[0.0], 0, 1).is_err());
}

#[test]
fn huge_learning_rate_diverges() {
    let model = gm();
    let data = iid_pair(&model, 20, 1);
    let cfg = SgdConfig { steps: 10_000, ..SgdConfig::plain(1e3, 2) };
    let rec = run(&cfg, &model, &data, &[0.0], 10, 0).unwrap();
    assert!(rec.diverged);
    assert!(rec.epochs_recorded() < 1000);
}

#[test]
fn terminal_train_loss_matches_boltzmann_average() {
    let model = gm();
    let data = iid_pair(&model, 1000, 2);
    let cfg = SgdConfig { steps: 200_000, seed: 5, ..SgdConfig::plain(0.1, 500) };
    let rec = run(&cfg, &model, &data, &[0.0], 2, 0).unwrap();
    let terminal = *rec.train_loss.last().unwrap();
    let params = LangevinParams::from(&cfg);
    let potential = EffectivePotential::new(&model, &data.train, &params).unwrap();
    let density = boltzmann_auto(&potential, &GridSpec::default()).unwrap();
    let land = model.landscape(&data.train).unwrap();
    let expected = density.expectation(|th| land.loss(th));
    assert!((terminal / expected - 1.0).abs() < 0.05, "{terminal} vs {expected}");
}

#[test]
fn classifier_runs_record_accuracy() {
    let model = common::all_models().remove(3);
    let data = iid_pair(&model, 200, 3);
    let cfg = SgdConfig { steps: 400, ..SgdConfig::plain(0.1, 10) };
    let rec = run(&cfg, &model, &data, &[0.0, 0.0], 20, 5).unwrap();
    let acc = rec.test_accuracy.unwrap();
    assert_eq!(acc.len(), rec.test_loss.len());
    assert!(*acc.last().unwrap() > 0.6);
    assert_eq!(rec.snapshots.iter().map(|(e, _)| *e).collect::<Vec<_>>(), vec![0, 5, 10, 15, 20]);
}

#[test]
fn full_set_runs_are_bitwise_reproducible() {
    let model = gm();
    let data = iid_pair(&model, 30, 6);
    let cfg = SgdConfig { steps: 300, batching: Batching::FullSet, ..SgdConfig::plain(0.05, 30) };
    let a = run(&SgdConfig { seed: 1, ..cfg.clone() }, &model, &data, &[2.0], 3, 1).unwrap();
    let b = run(&SgdConfig { seed: 2, ..cfg }, &model, &data, &[2.0], 3, 1).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn runs_are_deterministic_per_seed(seed in any::<u64>(), mu in prop_oneof![Just(0.0), Just(0.9)], beta in 0.0f64..1.0) {
        let model = gm();
        let data = iid_pair(&model, 30, 6);
        let cfg = SgdConfig { mu, beta, seed, steps: 200, ..SgdConfig::plain(0.05, 3) };
        let a = run(&cfg, &model, &data, &[1.0], 10, 1).unwrap();
        let b = run(&cfg, &model, &data, &[1.0], 10, 1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn velocity_stays_zero_for_plain_sgd(seed in any::<u64>(), beta in 0.0f64..1.0) {
        let model = gm();
        let data = iid_pair(&model, 30, 6);
        let cfg = SgdConfig { beta, seed, steps: 50, ..SgdConfig::plain(0.05, 3) };
        let rec = run(&cfg, &model, &data, &[1.0], 10, 0).unwrap();
        prop_assert!(rec.final_state.velocity.iter().all(|v| *v == 0.0));
    }
}
