//! Stochastic harmonic propagation through transmission networks and
//! C-type filter placement under voltage distortion limits.

pub mod error;
pub mod exec;
pub mod filter;
pub mod fit;
pub mod grid;
pub mod harmonic;
pub mod linalg;
pub mod mcs;
pub mod modal;
pub mod moments;
pub mod pf;
pub mod placement;
pub mod scenario;
pub mod special;

pub use error::{Error, Result};
pub use exec::Execution;
