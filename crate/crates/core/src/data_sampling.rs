//! Train/test data-set generation under fresh i.i.d. draws or from a fixed finite pool.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::toy_models::{LossModel, SampleSet, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    /// Independent fresh draws from the train and test populations.
    #[default]
    IidFresh,
    /// One fixed pool, reshuffled and split into disjoint train and test parts.
    DataSplitting { pool_size: usize, pool_seed: u64 },
    /// One fixed pool; train and test are each drawn without replacement, independently.
    RandomSampling { pool_size: usize, pool_seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSetPair {
    pub train: SampleSet,
    pub test: SampleSet,
    pub mode: SamplingMode,
    pub seed: u64,
    /// Pool indices of the train and test examples in the pool modes.
    pub pool_indices: Option<(Vec<usize>, Vec<usize>)>,
}

impl DataSetPair {
    pub fn set(&self, split: Split) -> &SampleSet {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn sample_dataset(
    model: &LossModel,
    mode: SamplingMode,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<DataSetPair> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Sampling("train and test sets must be non-empty".into()));
    }
    match mode {
        SamplingMode::IidFresh => {
            let train = model.sample_population(&mut rng_for(seed, Stream::Train), Split::Train, n_train);
            let test = model.sample_population(&mut rng_for(seed, Stream::Test), Split::Test, n_test);
            Ok(DataSetPair { train, test, mode, seed, pool_indices: None })
        }
        SamplingMode::DataSplitting { pool_size, pool_seed } => {
            if n_train + n_test != pool_size {
                return Err(Error::Sampling(format!(
                    "data splitting needs n_train + n_test = pool size ({n_train} + {n_test} != {pool_size})"
                )));
            }
            let pool = materialize_pool(model, pool_size, pool_seed)?;
            let mut idx: Vec<usize> = (0..pool_size).collect();
            idx.shuffle(&mut rng_for(seed, Stream::Shuffle));
            let (tr, te) = idx.split_at(n_train);
            Ok(DataSetPair {
                train: pool.select(tr),
                test: pool.select(te),
                mode,
                seed,
                pool_indices: Some((tr.to_vec(), te.to_vec())),
            })
        }
        SamplingMode::RandomSampling { pool_size, pool_seed } => {
            if n_train > pool_size || n_test > pool_size {
                return Err(Error::Sampling(format!(
                    "random sampling without replacement needs sizes at most the pool size {pool_size}"
                )));
            }
            let pool = materialize_pool(model, pool_size, pool_seed)?;
            let tr = index::sample(&mut rng_for(seed, Stream::Train), pool_size, n_train).into_vec();
            let te = index::sample(&mut rng_for(seed, Stream::Test), pool_size, n_test).into_vec();
            Ok(DataSetPair {
                train: pool.select(&tr),
                test: pool.select(&te),
                mode,
                seed,
                pool_indices: Some((tr, te)),
            })
        }
    }
}

fn materialize_pool(model: &LossModel, pool_size: usize, pool_seed: u64) -> Result<SampleSet> {
    if model.has_distribution_shift() {
        return Err(Error::Sampling("pool modes draw train and test from one population".into()));
    }
    Ok(model.sample_population(&mut rng_for(pool_seed, Stream::Pool), Split::Train, pool_size))
}

/// `m` pairs with seeds `base_seed, base_seed+1, ...`.
pub fn resample_datasets(
    model: &LossModel,
    mode: SamplingMode,
    n_train: usize,
    n_test: usize,
    m: usize,
    base_seed: u64,
) -> Result<Vec<DataSetPair>> {
    if m == 0 {
        return Err(Error::Sampling("need at least one replication".into()));
    }
    (0..m as u64)
        .into_par_iter()
        .map(|k| sample_dataset(model, mode, n_train, n_test, base_seed.wrapping_add(k)))
        .collect()
}
