pub mod env;
pub mod error;
pub mod grid;
pub mod inference;
pub mod maq;
pub mod metrics;
pub mod nn;
pub mod shape;
pub mod ssmnet;

#[cfg(feature = "oracles")]
pub mod oracle;

pub use error::{Error, Result};
