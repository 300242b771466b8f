pub mod bandit;
pub mod error;
pub mod kmeans;
pub mod promptgen;
pub mod quality;
pub mod ranking;
pub mod store;
pub mod trainer;
pub mod usability;

pub use error::{Error, Result};
