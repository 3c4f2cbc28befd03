//! The locate-then-plan navigation agent: state encoding with turning-angle
//! signals, block progress locating, sentence-then-token instruction
//! association, visual attention, action scoring and the training losses.

mod model;

use numcore::NumError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envgraph::{Action, EnvError, DEFAULT_BINS};

pub use model::{
    act_greedy, Association, EncodedInstruction, EpisodeLabels, Loc4Plan, Losses, Observation, StepContext, StepOutput,
};

/// Junction-count embedding rows; larger counts share the last row.
pub const JUNCTION_ROWS: usize = 9;
/// Previous-action embedding rows: the four actions plus "none" at `t = 0`.
pub const ACTION_ROWS: usize = 5;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("sentence {0} is empty")]
    EmptySentence(usize),
    #[error("sentence spans do not tile {0} tokens")]
    BadSpans(usize),
    #[error("{what}: expected {expected} entries, got {got}")]
    LabelLengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("every action is masked")]
    AllMasked,
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub d: usize,
    pub d_t: usize,
    pub dim_timestep: usize,
    pub dim_action: usize,
    pub dim_junction: usize,
    pub k: usize,
    pub heads: usize,
    pub bins: usize,
    pub d_v: usize,
    pub vocab_size: usize,
    pub max_t: usize,
    pub use_bal_loss: bool,
    pub use_hsa_loss: bool,
    pub use_sentence_attn: bool,
    pub use_token_attn: bool,
    pub use_spatial_in_sap: bool,
    pub global_locating_variant: bool,
    pub baseline_mode: bool,
    pub use_current_angle: bool,
    pub use_long_term_angle: bool,
    pub gamma_b: f64,
    pub init_seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            d: 64,
            d_t: 128,
            dim_timestep: 32,
            dim_action: 16,
            dim_junction: 16,
            k: 3,
            heads: 4,
            bins: DEFAULT_BINS,
            d_v: 12,
            vocab_size: 28,
            max_t: 64,
            use_bal_loss: true,
            use_hsa_loss: true,
            use_sentence_attn: true,
            use_token_attn: true,
            use_spatial_in_sap: true,
            global_locating_variant: false,
            baseline_mode: false,
            use_current_angle: true,
            use_long_term_angle: true,
            gamma_b: 1.0,
            init_seed: 0,
        }
    }
}

impl AgentConfig {
    /// Full-size dimensions.
    pub fn full_scale() -> Self {
        AgentConfig { d: 256, d_t: 512, ..AgentConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("d_t", self.d_t),
            ("dim_timestep", self.dim_timestep),
            ("dim_action", self.dim_action),
            ("dim_junction", self.dim_junction),
            ("heads", self.heads),
            ("bins", self.bins),
            ("d_v", self.d_v),
            ("vocab_size", self.vocab_size),
            ("max_t", self.max_t),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(AgentError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(AgentError::InvalidConfig(format!("heads ({}) must divide d ({})", self.heads, self.d)));
        }
        if !self.d_t.is_multiple_of(2) {
            return Err(AgentError::InvalidConfig("d_t must be even".into()));
        }
        if !(self.gamma_b >= 0.0 && self.gamma_b.is_finite()) {
            return Err(AgentError::InvalidConfig("gamma_b must be a nonnegative number".into()));
        }
        Ok(())
    }

    pub fn sentence_attn(&self) -> bool {
        self.use_sentence_attn && !self.baseline_mode
    }

    pub fn token_attn(&self) -> bool {
        self.use_token_attn && !self.baseline_mode
    }

    /// Whether the spatial-aware representation (rather than the plain state)
    /// feeds instruction association and the action decoder.
    pub fn spatial_in_sap(&self) -> bool {
        self.use_spatial_in_sap && !self.baseline_mode
    }

    pub fn bal_loss(&self) -> bool {
        self.use_bal_loss && !self.baseline_mode
    }

    pub fn hsa_loss(&self) -> bool {
        self.use_hsa_loss && self.sentence_attn()
    }

    pub fn long_term_angle(&self) -> bool {
        self.use_long_term_angle && !self.baseline_mode
    }

    pub fn current_angle(&self) -> bool {
        self.use_current_angle
    }
}

impl Action {
    /// Embedding row for the action taken at the previous step.
    pub fn embedding_row(prev: Option<Action>) -> usize {
        prev.map_or(ACTION_ROWS - 1, Action::index)
    }
}
