//! Signaling-game languages over noisy channels: exact loss oracles for the
//! optimality-of-compositionality results, the metric suite, neural
//! sender/receiver training, and the experiment drivers behind the CLI.

pub mod agents;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod lang;
pub mod losses;
pub mod metrics;

pub use error::{Error, Result};
