//! Experiment configuration file: one JSON document with a section per
//! subsystem. Command-line flags override config fields; the
//! `HMDBENCH_SEED` environment variable is the seed fallback.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hmdbench_core::harness::HarnessConfig;
use hmdbench_core::synth::SuiteSpec;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; overridden by --seed, falls back to HMDBENCH_SEED.
    pub seed: Option<u64>,
    pub suite: SuiteSpec,
    pub detectors: HarnessConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Seed resolution order: flag, config, HMDBENCH_SEED, suite default.
    pub fn resolve_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed)
            .or_else(|| {
                std::env::var("HMDBENCH_SEED")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(self.suite.seed)
    }
}
