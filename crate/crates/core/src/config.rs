//! Run configuration file: one JSON object, every section optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{EpisodeConfig, HttpBackendConfig, PromptTemplate};
use crate::exec::SandboxConfig;
use crate::lab::TrainRunConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Synthetic-lab training, including the reward and optimizer sections.
    pub train: TrainRunConfig,
    pub episode: EpisodeConfig,
    pub prompt: PromptTemplate,
    pub http: HttpBackendConfig,
    pub sandbox: SandboxConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse { path: shown, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_override() {
        let c = RunConfig::from_json(
            r#"{"train": {"steps": 7, "optimizer_mode": "GRPO", "reward": {"enable_tool_reward": false}},
                "episode": {"max_turns": 5, "temperature": 0.6}}"#,
        )
        .unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.optimizer_mode, crate::rapo::OptimizerMode::Grpo);
        assert!(!c.train.reward.enable_tool_reward);
        assert_eq!(c.train.reward.beta, 0.5);
        assert_eq!((c.episode.max_turns, c.episode.temperature), (5, 0.6));
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn roundtrip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
