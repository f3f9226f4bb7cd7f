//! Temperature-sweep experiments: configuration, per-run protocol, gap-model fitting, and the
//! bundled verification suites.

pub mod collapse;
pub mod config;
pub mod fit;
pub mod protocol;
pub mod sweep;
pub mod verify;

pub use config::{OptimizerVariant, SweepConfig};
pub use fit::{fit_gap_model, GapFit};
pub use protocol::{detect_spike, epoch_budget, per_example_loss_stats, steady_state_metrics};
pub use sweep::{run_sweep, SweepOutput};
pub use verify::{run_suite, Check, Suite, VerifyReport};
