//! Offline accelerator design optimization: a conservative learned surrogate
//! trained on logged simulator data, optimized with a firefly search, with no
//! simulator queries spent during training.

// Negated float comparisons like `!(x > 0.0)` are used throughout validation
// so that NaN inputs are rejected alongside out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod context;
pub mod dataset;
pub mod design_space;
pub mod error;
pub mod firefly;
mod fsutil;
pub mod oracle;
pub mod pipeline;
pub mod search;
pub mod surrogate;
pub mod trainer;

pub use error::{Error, Result};

/// Entry point used by the `accelopt` binary.
pub fn run_cli() -> i32 {
    pipeline::main()
}
