//! Scoreboard probing for incrementally built dialogue representations.
//!
//! The crate generates diagnostic propositions from question/answer pairs,
//! labels every (turn, proposition) pair with its scoreboard class, trains a
//! two-layer probe over representation/proposition embedding pairs and scores
//! reconstructed scoreboards.

pub mod error;
pub mod model;
pub mod propgen;
pub mod dataset;
pub mod embed;
pub mod probe;
pub mod synth;
pub mod eval;
pub mod cli;

pub use error::{Error, Result};
