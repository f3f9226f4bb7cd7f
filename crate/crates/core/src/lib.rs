//! Data-set averaging for SGD generalization gaps on toy models.
//!
//! The crate builds, for every sampled training set, the approximate steady-state density of
//! SGD's parameters, averages it over data sets, and evaluates the exact and approximate
//! relations between the averaged densities, the train loss and the test loss. A harness runs
//! temperature sweeps of the actual discrete optimizer for comparison.

pub mod approximations;
pub mod averaging;
pub mod data_sampling;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod harness;
pub mod langevin;
pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod sgd;
pub mod smooth;
pub mod stats;
pub mod steady_state;
pub mod toy_models;

pub use error::{Error, Result};
