//! Synthesizer inversion under permutation symmetry.

pub mod assign;
pub mod dsp;
pub mod error;
pub mod flow;
pub mod harness;
pub mod kosc;
pub mod metrics;
pub mod nn;
pub mod oracles;
pub mod param2tok;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
