//! Sample-based (functional) observability of linear time-invariant systems
//! under irregular measurement schedules.
//!
//! The crate decides whether a function `z = F x` of the state can be
//! reconstructed from output samples taken at arbitrary instants, designs
//! sampling schemes that guarantee it, and reconstructs `z` with a
//! sliding-window least-squares estimator.

pub mod cases;
pub mod error;
pub mod estimator;
pub mod functional;
pub mod linalg;
pub mod observability;
pub mod sampling;
pub mod system;

pub use error::{Error, Result};
pub use linalg::{RankResult, RankTol};
pub use system::{LtiSystem, SamplingSequence, TimeDomain};
