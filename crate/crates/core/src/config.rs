use serde::{Deserialize, Serialize};

use crate::agent::style::LintConfig;

/// Tunables shared by the enactment, evaluation and orchestration stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Long-term traces recalled per enactment.
    pub recall_k: usize,
    /// Context window budget in characters.
    pub context_budget: usize,
    /// Re-requests allowed per structured call.
    pub max_retries: u32,
    pub instant_cap: usize,
    pub posthoc_cap: usize,
    pub lint: LintConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            recall_k: 5,
            context_budget: 8000,
            max_retries: 2,
            instant_cap: 3,
            posthoc_cap: 6,
            lint: LintConfig::default(),
        }
    }
}
