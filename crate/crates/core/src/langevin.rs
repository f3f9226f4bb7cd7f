use serde::{Deserialize, Serialize};

use crate::sgd::SgdConfig;

/// Learning rate, temperature and regularization shared by the continuous-time SGD descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub lambda: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LangevinParams {
    /// Unit learning rate, i.e. time measured in units of λ·steps.
    pub fn rescaled(temperature: f64, alpha: f64, beta: f64) -> Self {
        Self { lambda: 1.0, temperature, alpha, beta }
    }
}

impl From<&SgdConfig> for LangevinParams {
    fn from(c: &SgdConfig) -> Self {
        Self { lambda: c.lambda, temperature: c.temperature(), alpha: c.alpha, beta: c.beta }
    }
}
