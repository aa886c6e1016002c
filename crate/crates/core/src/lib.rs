//! Double machine learning for customer-level treatment effects.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod final_stage;
pub mod hetero;
pub mod linalg;
pub mod nuisance;
pub mod pipeline;
pub mod plot;
pub mod synth;
pub mod validation;
pub mod weighting;

pub use error::{Error, Result};
