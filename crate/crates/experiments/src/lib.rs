//! Experiment driver: TOML configuration, the attack study as composable
//! steps, and the `aia` command-line verbs.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod error;
pub mod pii;
pub mod steps;

use std::collections::BTreeMap;

use aia_core::data::PiiType;
use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;
pub use error::{ExpError, ExpResult};

pub fn parse_target(s: &str) -> ExpResult<PiiType> {
    let t: PiiType = s.parse().map_err(|e: aia_core::Error| ExpError::Config(e.to_string()))?;
    if t == PiiType::Name {
        return Err(ExpError::Config("name cannot be an extraction target".into()));
    }
    Ok(t)
}

/// Hashes every report carries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    /// Artifact name to parameter hash.
    pub checkpoints: BTreeMap<String, String>,
}
