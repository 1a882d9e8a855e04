//! Desk-scale evaluation environments and the tabular MDP used by the
//! theory oracles.

mod point_reach;
mod tabular;

pub use point_reach::PointReachEnv;
pub use tabular::{value_iteration, TabularMdp};

use rand::RngCore;

use crate::error::{Error, Result};

/// Outcome of a single environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A continuous-control task with a box action space and a finite horizon.
pub trait Env: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_low(&self) -> &[f64];
    fn action_high(&self) -> &[f64];
    fn horizon(&self) -> usize;
    /// Bounds on the per-step reward.
    fn reward_range(&self) -> (f64, f64);

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Advances one step. `step_number` is 1-based, so the episode ends once
    /// it reaches the horizon.
    fn step(&self, state: &[f64], action: &[f64], step_number: usize) -> Step;

    /// Reference controller used to produce expert-quality data.
    fn expert_action(&self, state: &[f64]) -> Vec<f64>;

    /// Return of `expert_action` from `start`, computed without simulation.
    fn analytic_expert_return(&self, start: &[f64]) -> f64;

    fn random_action(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.action_low()
            .iter()
            .zip(self.action_high())
            .map(|(&lo, &hi)| lo + (hi - lo) * unit_f64(rng))
            .collect()
    }

    fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low().iter().zip(self.action_high()))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }
}

/// Uniform draw in `[0, 1)` through a trait object.
pub(crate) fn unit_f64(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Names accepted by [`make_env`].
pub const ENV_NAMES: &[&str] = &["point-reach-1d", "point-reach-2d"];

/// Looks up an environment by its registry name.
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "point-reach-1d" => Ok(Box::new(PointReachEnv::new(1))),
        "point-reach-2d" => Ok(Box::new(PointReachEnv::new(2))),
        _ => Err(Error::Unknown {
            kind: "environment",
            name: name.to_string(),
        }),
    }
}

/// Runs one episode from `start` with `policy`, returning the undiscounted
/// return.
pub fn rollout<F>(env: &dyn Env, start: Vec<f64>, mut policy: F) -> f64
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut state = start;
    let mut ret = 0.0;
    for t in 1..=env.horizon() {
        let action = policy(&state);
        let step = env.step(&state, &action, t);
        ret += step.reward;
        state = step.next_state;
        if step.done {
            break;
        }
    }
    ret
}
