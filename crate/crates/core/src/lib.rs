//! List-wise recommendation with a deterministic-policy-gradient actor-critic
//! agent, trained and evaluated against an offline simulator built from
//! session logs.

pub mod agent;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod net;
pub mod sim;

pub use error::{Error, Result};
