//! Commonsense-grounded response generation over concept graphs.

pub mod cli;
pub mod diffmath;
mod error;
pub mod graph_builder;
pub mod knowledge;
pub mod metrics;
pub mod model;
pub mod selection;
pub mod training;

pub use error::{Error, Result};
