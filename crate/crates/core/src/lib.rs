//! Multi-dispatcher edge computing simulator with costly status queries and
//! age-of-information tracking, plus a multi-agent PPO trainer and the
//! query baselines it is compared against.

pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mappo;
pub mod nn;
pub mod policy;
pub mod settings;
pub mod validation;

pub use config::{EnvConfig, OverflowPolicy};
pub use error::{Error, Result};
