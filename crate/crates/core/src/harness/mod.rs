//! Teacher-forced training, greedy rollouts, navigation metrics, ablation
//! grids and result reporting.

mod ablation;
mod metrics;
mod report;
mod rollout;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentConfig, AgentError};
use crate::envgraph::EnvError;
use crate::worldgen::DatasetError;

pub use ablation::{
    ablation_grid, k_sweep, run_ablation_suite, table2, table3, table4, table5, table6, AblationRow, AblationTable, RunOutcome,
    Stat, Variant, GRID_NAMES,
};
pub use metrics::{edit_distance, evaluate, metric_sed, metric_spd, metric_tc, EpisodeMetrics, EvalResult, TcMode};
pub use report::{
    bucket_sed, heatmap_svg, line_plot_svg, progress_svg, read_metrics_csv, results_root, write_metrics_csv, MetricsRow, RunDir,
    SedBucket, METRICS_COLUMNS,
};
pub use rollout::{rollout, rollout_with, EpisodeTrace, StepRecord};
pub use train::{train, train_on, EpochLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("node {from} cannot reach node {to}")]
    Unreachable { from: u32, to: u32 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub grad_clip_norm: f64,
    /// Evaluate on the training episodes every this many epochs; 0 disables.
    pub eval_every: usize,
    pub tc_mode: TcMode,
    pub world: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub agent: AgentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            grad_clip_norm: 5.0,
            eval_every: 0,
            tc_mode: TcMode::Adjacent,
            world: None,
            data: None,
            agent: AgentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HarnessError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(HarnessError::InvalidConfig("lr must be a positive number".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(HarnessError::InvalidConfig("Adam needs 0 <= beta < 1 and eps > 0".into()));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(HarnessError::InvalidConfig("grad_clip_norm must be positive".into()));
        }
        self.agent.validate()?;
        Ok(())
    }

    /// Short content hash identifying the run configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
