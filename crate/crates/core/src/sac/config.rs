use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::count::{EncodingMode, StateMode};
use crate::error::{Error, Result};

/// Hyperparameters of the penalized soft actor-critic learner.
///
/// The discount, learning rates, target coefficient, steps per epoch, `β` and
/// `β_next` default to the usual values; network widths and batch size are
/// desk-scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub policy_lr: f64,
    pub q_lr: f64,
    /// Target coefficient in `φ⁻ ← ρ·φ⁻ + (1 − ρ)·φ`.
    pub rho: f64,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Penalty scale `κ` in `u = κ·sqrt(ln T / n)`.
    pub kappa: f64,
    /// Grid partitions per dimension `G`.
    pub partitions: u32,
    /// Wraparound margin multiplier `M`.
    pub margin: u32,
    pub beta: f64,
    pub beta_next: f64,
    /// Entropy weight `ψ` in the policy loss.
    pub psi: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Floor OOD targets at zero.
    pub clip_ood_targets: bool,
    /// Count the OOD cells queried during training.
    pub count_on_query: bool,
    /// Bootstrap from the smaller of the two target critics; otherwise each
    /// critic bootstraps from its own target.
    pub target_min: bool,
    pub encoding: EncodingMode,
    pub state_mode: StateMode,
    pub q_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            policy_lr: 3e-4,
            q_lr: 3e-4,
            rho: 5e-3,
            steps_per_epoch: 1000,
            batch_size: 256,
            kappa: 1.0,
            partitions: 8,
            margin: 2,
            beta: 1.0,
            beta_next: 0.1,
            psi: 0.2,
            epochs: 100,
            seed: 0,
            clip_ood_targets: true,
            count_on_query: true,
            target_min: true,
            encoding: EncodingMode::Radix,
            state_mode: StateMode::Grid,
            q_hidden: vec![64, 64],
            policy_hidden: vec![64, 64],
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.rho >= 0.0 && self.rho <= 1.0) {
            return fail(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("beta_next", self.beta_next),
            ("kappa", self.kappa),
            ("psi", self.psi),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite nonnegative number, got {v}"));
            }
        }
        for (name, v) in [("policy_lr", self.policy_lr), ("q_lr", self.q_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.partitions == 0 || self.margin == 0 {
            return fail("partitions and margin must be at least 1".into());
        }
        Ok(())
    }

    /// Whether the count penalty can affect any target.
    pub fn penalty_active(&self) -> bool {
        self.kappa > 0.0 && (self.beta > 0.0 || self.beta_next > 0.0)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
