use rand::RngCore;

use super::{unit_f64, Env, Step};

const HORIZON: usize = 50;
const GOAL: f64 = 0.8;
const MAX_STEP: f64 = 0.1;
/// Gain of the proportional expert controller.
const EXPERT_GAIN: f64 = 0.5;

/// Point mass moving in `[-1, 1]^d` toward a fixed goal at `0.8·1`.
///
/// Actions are displacements in `[-0.1, 0.1]^d`; each step pays the negative
/// Euclidean distance between the current position and the goal.
#[derive(Debug, Clone)]
pub struct PointReachEnv {
    dim: usize,
    name: String,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

impl PointReachEnv {
    pub fn new(dim: usize) -> Self {
        assert!(dim == 1 || dim == 2, "point-reach supports 1 or 2 dimensions");
        Self {
            dim,
            name: format!("point-reach-{dim}d"),
            action_low: vec![-MAX_STEP; dim],
            action_high: vec![MAX_STEP; dim],
        }
    }

    pub fn goal(&self) -> Vec<f64> {
        vec![GOAL; self.dim]
    }

    fn distance_to_goal(pos: &[f64]) -> f64 {
        pos.iter().map(|x| (x - GOAL).powi(2)).sum::<f64>().sqrt()
    }
}

/// Per-axis error magnitude after `t` steps of the expert controller starting
/// from error magnitude `e0`. The controller saturates at `MAX_STEP` while the
/// error exceeds `MAX_STEP / EXPERT_GAIN`, then shrinks geometrically.
fn expert_error_after(e0: f64, t: usize) -> f64 {
    let knee = MAX_STEP / EXPERT_GAIN;
    let saturated = if e0 > knee {
        ((e0 - knee) / MAX_STEP).ceil() as usize
    } else {
        0
    };
    if t <= saturated {
        e0 - MAX_STEP * t as f64
    } else {
        let e_knee = e0 - MAX_STEP * saturated as f64;
        e_knee * (1.0 - EXPERT_GAIN).powi((t - saturated) as i32)
    }
}

impl Env for PointReachEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn action_dim(&self) -> usize {
        self.dim
    }

    fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn reward_range(&self) -> (f64, f64) {
        (-2.0 * (self.dim as f64).sqrt(), 0.0)
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim).map(|_| 2.0 * unit_f64(rng) - 1.0).collect()
    }

    fn step(&self, state: &[f64], action: &[f64], step_number: usize) -> Step {
        let in_box = action
            .iter()
            .all(|a| (-MAX_STEP..=MAX_STEP).contains(a));
        let action = if in_box {
            action.to_vec()
        } else {
            log::warn!("action {action:?} outside the action box; clamping");
            self.clamp_action(action)
        };
        let next_state: Vec<f64> = state
            .iter()
            .zip(&action)
            .map(|(s, a)| (s + a).clamp(-1.0, 1.0))
            .collect();
        let reward = -Self::distance_to_goal(state);
        Step {
            next_state,
            reward,
            done: step_number >= HORIZON,
        }
    }

    fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .map(|s| (EXPERT_GAIN * (GOAL - s)).clamp(-MAX_STEP, MAX_STEP))
            .collect()
    }

    fn analytic_expert_return(&self, start: &[f64]) -> f64 {
        let e0: Vec<f64> = start.iter().map(|s| (GOAL - s).abs()).collect();
        (0..HORIZON)
            .map(|t| {
                -e0.iter()
                    .map(|&e| expert_error_after(e, t).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rollout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn goal_is_a_fixed_point() {
        let env = PointReachEnv::new(2);
        let step = env.step(&[0.8, 0.8], &[0.0, 0.0], 1);
        assert_eq!(step.reward, 0.0);
        assert_eq!(step.next_state, vec![0.8, 0.8]);
        assert!(!step.done);
    }

    #[test]
    fn step_from_origin() {
        let env = PointReachEnv::new(2);
        let step = env.step(&[0.0, 0.0], &[0.1, 0.1], 1);
        assert_eq!(step.next_state, vec![0.1, 0.1]);
        let expected = -(0.8f64 * 0.8 * 2.0).sqrt();
        assert!((step.reward - expected).abs() < 1e-15);
    }

    #[test]
    fn out_of_box_action_is_clamped() {
        let env = PointReachEnv::new(2);
        let clamped = env.step(&[0.0, 0.0], &[5.0, -3.0], 1);
        let inside = env.step(&[0.0, 0.0], &[0.1, -0.1], 1);
        assert_eq!(clamped, inside);
    }

    #[test]
    fn state_stays_in_box_and_episode_ends_at_horizon() {
        let env = PointReachEnv::new(2);
        let step = env.step(&[0.95, -0.97], &[0.1, -0.1], HORIZON);
        assert_eq!(step.next_state, vec![1.0, -1.0]);
        assert!(step.done);
        let (lo, hi) = env.reward_range();
        assert!(step.reward >= lo && step.reward <= hi);
    }

    #[test]
    fn analytic_expert_return_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1, 2] {
            let env = PointReachEnv::new(dim);
            for _ in 0..500 {
                let start = env.reset(&mut rng);
                let simulated = rollout(&env, start.clone(), |s| env.expert_action(s));
                let analytic = env.analytic_expert_return(&start);
                assert!(
                    (simulated - analytic).abs() <= 1e-9,
                    "start {start:?}: {simulated} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn expert_error_closed_form_edges() {
        assert_eq!(expert_error_after(0.0, 10), 0.0);
        assert!((expert_error_after(1.8, 16) - 0.2).abs() < 1e-12);
        assert!((expert_error_after(1.8, 17) - 0.1).abs() < 1e-12);
        assert!((expert_error_after(0.1, 1) - 0.05).abs() < 1e-15);
    }
}
