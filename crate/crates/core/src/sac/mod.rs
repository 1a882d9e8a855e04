//! Penalized soft actor-critic: twin critics trained on in-distribution TD
//! targets plus count-penalized targets for policy actions, an
//! entropy-regularized policy, and soft target tracking.

mod checkpoint;
mod config;
mod eval;
mod targets;
mod trainer;

pub use checkpoint::{load_checkpoint, load_policy, save_checkpoint, Manifest, CHECKPOINT_VERSION};
pub use config::TrainerConfig;
pub use eval::{evaluate, normalized_score, reference_returns, start_states, EvalReport, ReferenceReturns};
pub use targets::{ood_target, soft_update, td_targets};
pub use trainer::{Batch, Critic, EpochMetrics, OodQueries, QLoss, StepMetrics, Trainer};
