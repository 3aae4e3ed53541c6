//! File formats, netpbm images, image metrics and the `gradleak` command
//! line on top of `gradleak-core`.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 invalid input,
//! 3 a conv layer is rank deficient, 4 every dense bias gradient is zero.

pub mod commands;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod pnm;

pub use commands::{run, Cli};
pub use error::CliError;
