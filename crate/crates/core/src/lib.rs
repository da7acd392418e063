//! Adversarial texture attack laboratory for Siamese visual trackers.

pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod renderer;
pub mod siamese;
pub mod tracker;

pub use error::{Error, Result};
