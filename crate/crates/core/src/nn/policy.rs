use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{Activation, ForwardCache, Mlp, MlpGrads};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps squashed actions strictly inside the box.
const SQUASH_LIMIT: f64 = 1.0 - 1e-12;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 − tanh²(u))` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    // 1 − tanh²(u) = 4 / (e^u + e^-u)² = 4·e^{-2|u|} / (1 + e^{-2|u|})²
    let a = u.abs();
    2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Tanh-squashed diagonal Gaussian policy over a box action space.
///
/// The network maps a state to `2·d` outputs: the pre-squash means followed
/// by the log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHead {
    pub net: Mlp,
    center: Vec<f64>,
    half_width: Vec<f64>,
}

/// A reparameterized batch of actions with what is needed to backpropagate
/// through it.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    cache: ForwardCache,
    noise: Array2<f64>,
    squashed: Array2<f64>,
    std: Array2<f64>,
    log_std_clamped: Array2<bool>,
}

impl PolicyHead {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: &[usize],
        action_low: &[f64],
        action_high: &[f64],
        rng: &mut R,
    ) -> Self {
        let d = action_low.len();
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * d);
        let net = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng);
        Self::from_net(net, action_low, action_high).expect("consistent policy shapes")
    }

    pub fn from_net(net: Mlp, action_low: &[f64], action_high: &[f64]) -> Result<Self> {
        if action_low.len() != action_high.len() || net.output_dim() != 2 * action_low.len() {
            return Err(Error::Shape {
                expected: format!("policy output width {}", 2 * action_low.len()),
                got: net.output_dim().to_string(),
            });
        }
        if action_low.iter().zip(action_high).any(|(l, h)| !(h > l)) {
            return Err(Error::Input("action box must have positive width".into()));
        }
        Ok(Self {
            net,
            center: action_low.iter().zip(action_high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half_width: action_low.iter().zip(action_high).map(|(l, h)| 0.5 * (h - l)).collect(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.center.len()
    }

    pub fn action_low(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c - h).collect()
    }

    pub fn action_high(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c + h).collect()
    }

    fn unsquash(&self, j: usize, t: f64) -> f64 {
        self.center[j] + self.half_width[j] * t.clamp(-SQUASH_LIMIT, SQUASH_LIMIT)
    }

    /// Mean action `tanh(μ)` mapped into the box.
    pub fn deterministic(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.net.predict(states)?;
        let d = self.action_dim();
        let mut actions = Array2::zeros((out.nrows(), d));
        for r in 0..out.nrows() {
            for j in 0..d {
                actions[[r, j]] = self.unsquash(j, out[[r, j]].tanh());
            }
        }
        Ok(actions)
    }

    /// Draws `a = squash(μ + σ·ξ)` with `ξ ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, states: ArrayView2<f64>, rng: &mut R) -> Result<PolicySample> {
        let d = self.action_dim();
        let noise = Array2::from_shape_simple_fn((states.nrows(), d), || rng.sample(StandardNormal));
        self.sample_with_noise(states, noise)
    }

    /// Same as [`sample`](Self::sample) with caller-provided standard normal
    /// noise.
    pub fn sample_with_noise(&self, states: ArrayView2<f64>, noise: Array2<f64>) -> Result<PolicySample> {
        let d = self.action_dim();
        if noise.dim() != (states.nrows(), d) {
            return Err(Error::Shape {
                expected: format!("noise {:?}", (states.nrows(), d)),
                got: format!("{:?}", noise.dim()),
            });
        }
        let cache = self.net.forward(states)?;
        let out = cache.output();
        let b = states.nrows();
        let mut actions = Array2::zeros((b, d));
        let mut squashed = Array2::zeros((b, d));
        let mut std = Array2::zeros((b, d));
        let mut clamped = Array2::from_elem((b, d), false);
        let mut log_probs = Array1::zeros(b);
        for r in 0..b {
            let mut lp = 0.0;
            for j in 0..d {
                let raw = out[[r, d + j]];
                let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                clamped[[r, j]] = raw != log_std;
                let sigma = log_std.exp();
                let xi = noise[[r, j]];
                let u = out[[r, j]] + sigma * xi;
                let t = u.tanh();
                lp += -0.5 * xi * xi - log_std - HALF_LN_2PI
                    - log_one_minus_tanh_sq(u)
                    - self.half_width[j].ln();
                actions[[r, j]] = self.unsquash(j, t);
                squashed[[r, j]] = t;
                std[[r, j]] = sigma;
            }
            log_probs[r] = lp;
        }
        Ok(PolicySample {
            actions,
            log_probs,
            cache,
            noise,
            squashed,
            std,
            log_std_clamped: clamped,
        })
    }

    /// Log-density of given in-box actions.
    pub fn log_prob(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let d = self.action_dim();
        let out = self.net.predict(states)?;
        if actions.dim() != (states.nrows(), d) {
            return Err(Error::Shape {
                expected: format!("actions {:?}", (states.nrows(), d)),
                got: format!("{:?}", actions.dim()),
            });
        }
        Ok(Array1::from_iter((0..states.nrows()).map(|r| {
            (0..d)
                .map(|j| {
                    let log_std = out[[r, d + j]].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let t = ((actions[[r, j]] - self.center[j]) / self.half_width[j])
                        .clamp(-SQUASH_LIMIT, SQUASH_LIMIT);
                    let u = t.atanh();
                    let xi = (u - out[[r, j]]) / log_std.exp();
                    -0.5 * xi * xi - log_std - HALF_LN_2PI
                        - log_one_minus_tanh_sq(u)
                        - self.half_width[j].ln()
                })
                .sum()
        })))
    }

    /// Parameter gradients of `Σ_r (d_actions[r]·a_r + d_log_probs[r]·log π(a_r))`
    /// through the reparameterized sample.
    pub fn backward(
        &self,
        sample: &PolicySample,
        d_actions: ArrayView2<f64>,
        d_log_probs: ArrayView1<f64>,
    ) -> Result<MlpGrads> {
        let d = self.action_dim();
        let b = sample.actions.nrows();
        if d_actions.dim() != (b, d) || d_log_probs.len() != b {
            return Err(Error::Shape {
                expected: format!("({b}, {d}) action gradient and {b} log-prob gradients"),
                got: format!("{:?} and {}", d_actions.dim(), d_log_probs.len()),
            });
        }
        let mut upstream = Array2::zeros((b, 2 * d));
        for r in 0..b {
            for j in 0..d {
                let t = sample.squashed[[r, j]];
                let sigma = sample.std[[r, j]];
                let xi = sample.noise[[r, j]];
                let da_du = self.half_width[j] * (1.0 - t * t);
                let g_u = d_actions[[r, j]] * da_du + d_log_probs[r] * 2.0 * t;
                upstream[[r, j]] = g_u;
                upstream[[r, d + j]] = if sample.log_std_clamped[[r, j]] {
                    0.0
                } else {
                    g_u * sigma * xi - d_log_probs[r]
                };
            }
        }
        self.net.backward(&sample.cache, upstream.view())
    }

    /// Pre-squash means and clamped log standard deviations.
    pub fn distribution(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let d = self.action_dim();
        let out = self.net.predict(states)?;
        let mean = out.slice(s![.., ..d]).to_owned();
        let log_std = out
            .slice(s![.., d..])
            .mapv(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok((mean, log_std))
    }
}
