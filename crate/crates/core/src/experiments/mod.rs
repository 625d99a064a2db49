//! Study harnesses: preference-shift sweeps, estimation-error rates, and the
//! simulated data-parallel kernel.
//!
//! Every study is a pure function of its spec. Cells are evaluated in a fixed
//! order and reports are assembled in that order, so repeated runs produce
//! identical output.

pub mod distributed;
pub mod env;
pub mod rate;
pub mod shift;
pub mod stats;

pub use distributed::{distributed_kernel_sim, DistributedReport, SyncMode};
pub use env::{EnvSpec, Environment};
pub use rate::{rate_experiment, RateReport, RateStudySpec};
pub use shift::{shift_sweep, ShiftReport, ShiftStudySpec};

/// Formats a float for CSV output (shortest representation that round-trips).
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
