use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{rollout, Env};
use crate::error::{Error, Result};
use crate::nn::PolicyHead;

/// Undiscounted returns of a batch of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub returns: Vec<f64>,
}

impl EvalReport {
    fn from_returns(returns: Vec<f64>) -> Self {
        let mean_return = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
        Self { mean_return, returns }
    }
}

/// Mean returns of the uniform-random and expert controllers, the endpoints
/// of the normalized score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReturns {
    pub random: f64,
    pub expert: f64,
}

/// Episode `i` draws its start state (and any random actions) from stream `i`
/// of the seed, so results do not depend on scheduling.
fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// Start states of `episodes` evaluation episodes.
pub fn start_states(env: &dyn Env, episodes: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..episodes).map(|i| env.reset(&mut episode_rng(seed, i))).collect()
}

/// Rolls out the deterministic policy `tanh(μ(s))` for `episodes` episodes,
/// stepping all episodes in lockstep so the network sees one batch per step.
pub fn evaluate(policy: &PolicyHead, env: &dyn Env, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut states = start_states(env, episodes, seed);
    let mut returns = vec![0.0; episodes];
    let mut active = vec![true; episodes];
    let sd = env.state_dim();
    for t in 1..=env.horizon() {
        let live: Vec<usize> = (0..episodes).filter(|&i| active[i]).collect();
        if live.is_empty() {
            break;
        }
        let flat: Vec<f64> = live.iter().flat_map(|&i| states[i].iter().copied()).collect();
        let batch = Array2::from_shape_vec((live.len(), sd), flat).expect("state rows of equal length");
        let actions = policy.deterministic(batch.view())?;
        for (r, &i) in live.iter().enumerate() {
            let step = env.step(&states[i], actions.row(r).as_slice().unwrap(), t);
            returns[i] += step.reward;
            states[i] = step.next_state;
            active[i] = !step.done;
        }
    }
    Ok(EvalReport::from_returns(returns))
}

/// Mean returns of the random and expert controllers over the same start
/// states `evaluate` would use.
pub fn reference_returns(env: &dyn Env, episodes: usize, seed: u64) -> ReferenceReturns {
    let (random, expert): (Vec<f64>, Vec<f64>) = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            let start = env.reset(&mut rng);
            let expert = rollout(env, start.clone(), |s| env.expert_action(s));
            let random = rollout(env, start, |_| env.random_action(&mut rng));
            (random, expert)
        })
        .unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    ReferenceReturns {
        random: mean(&random),
        expert: mean(&expert),
    }
}

/// `100·(R − R_random) / (R_expert − R_random)`.
pub fn normalized_score(ret: f64, reference: ReferenceReturns) -> f64 {
    100.0 * (ret - reference.random) / (reference.expert - reference.random)
}
