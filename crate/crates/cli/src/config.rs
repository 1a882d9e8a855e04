use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gpc_core::sac::TrainerConfig;
use serde::{Deserialize, Serialize};

/// Everything a `train` run needs. Read from TOML; command-line flags and
/// `GPC_*` environment variables override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Log a progress line every this many epochs.
    pub log_every: usize,
    /// Evaluate the policy every this many epochs (and after the last).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Put wall-clock seconds into the metrics CSV. Off by default so
    /// reruns produce identical files; timings always go to `timing.csv`.
    pub record_wall_time: bool,
    pub trainer: TrainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "point-reach-2d".into(),
            dataset: None,
            out: PathBuf::from("runs/latest"),
            log_every: 10,
            eval_every: 1,
            eval_episodes: 10,
            eval_seed: 12345,
            checkpoint_every: 0,
            record_wall_time: false,
            trainer: TrainerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
