mod common;

use std::collections::HashSet;

use common::{correlation, mean, scalars};
use gaplab::data_sampling::{resample_datasets, sample_dataset, SamplingMode};
use gaplab::toy_models::{Family, LossModel};
use proptest::prelude::*;

fn gm() -> LossModel {
    LossModel::gaussian_mean(1.0, 2.0).unwrap()
}

const SPLIT60: SamplingMode = SamplingMode::DataSplitting { pool_size: 60, pool_seed: 7 };
const RESAMPLE60: SamplingMode = SamplingMode::RandomSampling { pool_size: 60, pool_seed: 7 };

#[test]
fn iid_sizes() {
    let d = sample_dataset(&gm(), SamplingMode::IidFresh, 100, 50, 3).unwrap();
    assert_eq!(d.train.len(), 100);
    assert_eq!(d.test.len(), 50);
    assert!(d.pool_indices.is_none());
}

#[test]
fn data_splitting_is_a_disjoint_cover() {
    let d = sample_dataset(&gm(), SPLIT60, 50, 10, 3).unwrap();
    let (tr, te) = d.pool_indices.unwrap();
    let tr: HashSet<usize> = tr.into_iter().collect();
    let te: HashSet<usize> = te.into_iter().collect();
    assert_eq!(tr.len(), 50);
    assert_eq!(te.len(), 10);
    assert!(tr.is_disjoint(&te));
    assert_eq!(tr.union(&te).count(), 60);
}

#[test]
fn data_splitting_requires_exact_pool_size() {
    assert!(sample_dataset(&gm(), SPLIT60, 50, 5, 0).is_err());
    assert!(sample_dataset(&gm(), RESAMPLE60, 61, 5, 0).is_err());
    assert!(sample_dataset(&gm(), SamplingMode::IidFresh, 0, 5, 0).is_err());
}

#[test]
fn pool_modes_reject_distribution_shift() {
    let shifted = gm().with_test_population(Family::GaussianMean { mean: 0.0, std: 1.0 }).unwrap();
    assert!(sample_dataset(&shifted, SPLIT60, 50, 10, 0).is_err());
}

#[test]
fn random_sampling_overlap_matches_hypergeometric_mean() {
    let (n_train, n_test, pool) = (50usize, 10usize, 60usize);
    let overlaps: Vec<f64> = (0..10_000u64)
        .map(|s| {
            let d = sample_dataset(&gm(), RESAMPLE60, n_train, n_test, s).unwrap();
            let (tr, te) = d.pool_indices.unwrap();
            let tr: HashSet<usize> = tr.into_iter().collect();
            te.iter().filter(|i| tr.contains(i)).count() as f64
        })
        .collect();
    let expected = (n_test * n_train) as f64 / pool as f64;
    let f = n_train as f64 / pool as f64;
    let var = n_test as f64 * f * (1.0 - f) * (pool - n_test) as f64 / (pool - 1) as f64;
    let se = (var / overlaps.len() as f64).sqrt();
    let got = mean(&overlaps);
    assert!((got - expected).abs() < 3.0 * se, "{got} vs {expected} (se {se})");
}

#[test]
fn single_replication_equals_sample_dataset() {
    let one = resample_datasets(&gm(), SamplingMode::IidFresh, 20, 10, 1, 42).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0], sample_dataset(&gm(), SamplingMode::IidFresh, 20, 10, 42).unwrap());
    assert!(resample_datasets(&gm(), SamplingMode::IidFresh, 20, 10, 0, 42).is_err());
}

#[test]
fn replications_are_deterministic_and_seeded_consecutively() {
    let a = resample_datasets(&gm(), RESAMPLE60, 30, 20, 5, 9).unwrap();
    let b = resample_datasets(&gm(), RESAMPLE60, 30, 20, 5, 9).unwrap();
    assert_eq!(a, b);
    for (k, d) in a.iter().enumerate() {
        assert_eq!(d.seed, 9 + k as u64);
    }
}

#[test]
fn pooled_train_mean_obeys_clt() {
    let (n, m) = (10usize, 1000usize);
    let sets = resample_datasets(&gm(), SamplingMode::IidFresh, n, n, m, 100).unwrap();
    let pooled: Vec<f64> = sets.iter().flat_map(|d| scalars(&d.train)).collect();
    let se = 2.0 / ((n * m) as f64).sqrt();
    assert!((mean(&pooled) - 1.0).abs() < 4.0 * se);
}

#[test]
fn iid_train_and_test_statistics_are_uncorrelated() {
    let m = 1000usize;
    let sets = resample_datasets(&gm(), SamplingMode::IidFresh, 10, 10, m, 500).unwrap();
    let train_mean: Vec<f64> = sets.iter().map(|d| mean(&scalars(&d.train))).collect();
    let test_mean: Vec<f64> = sets.iter().map(|d| mean(&scalars(&d.test))).collect();
    let test_spread: Vec<f64> = sets.iter().map(|d| common::biased_var(&scalars(&d.test))).collect();
    let bound = 4.0 / (m as f64).sqrt();
    assert!(correlation(&train_mean, &test_mean).abs() < bound);
    assert!(correlation(&train_mean, &test_spread).abs() < bound);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), n_train in 1usize..40, n_test in 1usize..20, mode_kind in 0u8..3) {
        let pool = n_train + n_test;
        let mode = match mode_kind {
            0 => SamplingMode::IidFresh,
            1 => SamplingMode::DataSplitting { pool_size: pool, pool_seed: 3 },
            _ => SamplingMode::RandomSampling { pool_size: pool, pool_seed: 3 },
        };
        let a = sample_dataset(&gm(), mode, n_train, n_test, seed).unwrap();
        let b = sample_dataset(&gm(), mode, n_train, n_test, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.train.len(), n_train);
        prop_assert_eq!(a.test.len(), n_test);
    }

    #[test]
    fn data_splitting_never_overlaps(seed in any::<u64>(), n_train in 1usize..40, n_test in 1usize..20) {
        let mode = SamplingMode::DataSplitting { pool_size: n_train + n_test, pool_seed: seed ^ 1 };
        let d = sample_dataset(&gm(), mode, n_train, n_test, seed).unwrap();
        let (tr, te) = d.pool_indices.unwrap();
        let tr: HashSet<usize> = tr.into_iter().collect();
        prop_assert!(te.iter().all(|i| !tr.contains(i)));
    }
}
