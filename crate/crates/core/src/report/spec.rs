use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::envsim::{EnvConfig, RewardMode};
use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::stabilize::{EmbeddingMode, EstimatorConfig, RewardSource};

/// One arm of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default = "default_source")]
    pub reward_source: RewardSource,
    #[serde(default = "default_embedding")]
    pub embedding_mode: EmbeddingMode,
    #[serde(default = "default_reward_mode")]
    pub reward_mode: RewardMode,
    /// Replaces the experiment-wide agent block for this variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentConfig>,
}

fn default_source() -> RewardSource {
    RewardSource::Observed
}

fn default_embedding() -> EmbeddingMode {
    EmbeddingMode::Separate
}

fn default_reward_mode() -> RewardMode {
    RewardMode::Stochastic
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitFlags {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
            svg: true,
        }
    }
}

/// Training and measurement protocol shared by all variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub episodes: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    /// Threshold as a fraction of the oracle-greedy return.
    pub threshold_fraction: f64,
    /// Attainments required by the sample-efficiency metric.
    pub k: usize,
    /// Evaluation points averaged into the final score.
    pub final_window: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            episodes: 3000,
            eval_period: 10,
            eval_episodes: 100,
            threshold_fraction: 0.6,
            k: 5,
            final_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub protocol: Protocol,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: String,
    #[serde(default)]
    pub emit: EmitFlags,
}

fn default_output() -> String {
    "results".to_owned()
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("name", "must not be empty"));
        }
        if self.variants.is_empty() {
            return Err(Error::validation("variants", "at least one variant is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "at least one seed is required"));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if v.name.trim().is_empty() {
                return Err(Error::validation("variants.name", "must not be empty"));
            }
            if self.variants[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::validation("variants.name", format!("duplicate variant `{}`", v.name)));
            }
        }
        let p = &self.protocol;
        if !(p.threshold_fraction > 0.0 && p.threshold_fraction.is_finite()) {
            return Err(Error::validation("threshold_fraction", "must be positive"));
        }
        if p.k == 0 {
            return Err(Error::validation("k", "must be at least 1"));
        }
        if p.final_window == 0 {
            return Err(Error::validation("final_window", "must be at least 1"));
        }
        for t in self.templates(0) {
            t.validate()?;
        }
        Ok(())
    }

    /// One run template per variant; `seed` is filled per replication.
    pub fn templates(&self, seed_offset: u64) -> Vec<RunConfig> {
        self.variants
            .iter()
            .map(|v| RunConfig {
                env: self.env.clone(),
                agent: v.agent.clone().unwrap_or_else(|| self.agent.clone()),
                estimator: self.estimator.clone(),
                reward_source: v.reward_source,
                embedding_mode: v.embedding_mode,
                reward_mode: v.reward_mode,
                episodes: self.protocol.episodes,
                eval_period: self.protocol.eval_period,
                eval_episodes: self.protocol.eval_episodes,
                seed: seed_offset,
            })
            .collect()
    }

    /// Seeds shifted by `offset` (wrapping).
    pub fn shifted_seeds(&self, offset: u64) -> Vec<u64> {
        self.seeds.iter().map(|s| s.wrapping_add(offset)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs serialize")
    }
}

/// Parses and validates a JSON experiment spec, filling every default.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}
