//! Experiment configuration, read from JSON or assembled from flags.

use std::path::{Path, PathBuf};

use gossipsim_core::engine::{policy_supported, push_pull_age_limit, StoppingPolicy};
use gossipsim_core::{validate_spec, ProtocolSpec};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How trials stop. `auto_age_limit` picks the push-pull age limit for each n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PolicyConfig {
    #[default]
    UntilAllInformed,
    RoundCap(u64),
    AgeLimit(u64),
    AutoAgeLimit,
}

impl PolicyConfig {
    pub fn resolve(self, n: usize) -> StoppingPolicy {
        match self {
            PolicyConfig::UntilAllInformed => StoppingPolicy::UntilAllInformed,
            PolicyConfig::RoundCap(c) => StoppingPolicy::RoundCap(c),
            PolicyConfig::AgeLimit(l) => StoppingPolicy::AgeLimit(l),
            PolicyConfig::AutoAgeLimit => StoppingPolicy::AgeLimit(push_pull_age_limit(n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Allowed change of the gap between consecutive sizes, before adding confidence widths.
    pub gap_stability: f64,
    /// Minimum R^2 of a tail fit.
    pub tail_r_squared: f64,
    /// Two-sided confidence level of reported intervals.
    pub confidence: f64,
    /// Largest offset above the mean used by tail fits.
    pub tail_offsets: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            gap_stability: 0.5,
            tail_r_squared: 0.9,
            confidence: 0.95,
            tail_offsets: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: ProtocolSpec,
    pub n_list: Vec<usize>,
    pub trials: u64,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_spec(self.protocol.clone()).map_err(|errs| {
            ConfigError::Invalid(
                errs.iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })?;
        if self.n_list.is_empty() {
            return Err(ConfigError::Invalid("n_list is empty".into()));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < 2) {
            return Err(ConfigError::Invalid(format!("n = {n} is below 2")));
        }
        if self.trials < 2 {
            return Err(ConfigError::Invalid(
                "trials must be at least 2 for a confidence interval".into(),
            ));
        }
        let t = &self.thresholds;
        if !(t.confidence > 0.0 && t.confidence < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "confidence {} not in (0, 1)",
                t.confidence
            )));
        }
        if !(t.gap_stability >= 0.0) || !(0.0..=1.0).contains(&t.tail_r_squared) {
            return Err(ConfigError::Invalid("thresholds out of range".into()));
        }
        if self.parallelism == Some(0) {
            return Err(ConfigError::Invalid("parallelism must be positive".into()));
        }
        let probe = self.policy.resolve(self.n_list[0]);
        if !policy_supported(self.protocol.kind, probe) {
            return Err(ConfigError::Invalid(format!(
                "policy {:?} does not apply to {}",
                self.policy, self.protocol.kind
            )));
        }
        Ok(())
    }

    /// Sizes in ascending order without repeats.
    pub fn sizes(&self) -> Vec<usize> {
        let mut ns = self.n_list.clone();
        ns.sort_unstable();
        ns.dedup();
        ns
    }
}

/// JSON schema of [`ExperimentConfig`].
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}
