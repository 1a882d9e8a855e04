use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::targets::{ood_target, soft_update, td_targets};
use crate::count::{BucketVector, CellKey, CountTable, GridSpec, StateMode};
use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Mlp, MlpGrads, PolicyHead, PolicySample};

/// An online critic, its slowly tracking target, and its optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub target: Mlp,
    pub adam: AdamState,
}

/// Dataset columns as dense arrays plus the precomputed state part of every
/// grid key.
#[derive(Debug, Clone)]
struct Prepared {
    states: Array2<f64>,
    actions: Array2<f64>,
    rewards: Array1<f64>,
    next_states: Array2<f64>,
    not_done: Array1<f64>,
    state_keys: Vec<Vec<u32>>,
    next_state_keys: Vec<Vec<u32>>,
    /// Number of distinct dataset states when keying states by id.
    state_ids: Option<u64>,
}

impl Prepared {
    fn new(dataset: &TransitionDataset, grid: &GridSpec, mode: StateMode) -> Result<Self> {
        let n = dataset.len();
        let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut next_states = Array2::zeros((n, sd));
        let mut rewards = Array1::zeros(n);
        let mut not_done = Array1::zeros(n);
        for (i, t) in dataset.transitions().iter().enumerate() {
            states.row_mut(i).assign(&ndarray::aview1(&t.state));
            actions.row_mut(i).assign(&ndarray::aview1(&t.action));
            next_states.row_mut(i).assign(&ndarray::aview1(&t.next_state));
            rewards[i] = t.reward;
            not_done[i] = if t.done { 0.0 } else { 1.0 };
        }
        let (state_keys, next_state_keys, state_ids) = match mode {
            StateMode::Grid => {
                let keys = |pick: fn(&crate::data::Transition) -> &Vec<f64>| {
                    dataset
                        .transitions()
                        .iter()
                        .map(|t| grid.state_digits(pick(t)))
                        .collect::<Result<Vec<_>>>()
                };
                (keys(|t| &t.state)?, keys(|t| &t.next_state)?, None)
            }
            StateMode::Id => {
                let mut ids: HashMap<Vec<u64>, u32> = HashMap::new();
                let mut id_of = |s: &[f64]| {
                    let bits: Vec<u64> = s.iter().map(|x| x.to_bits()).collect();
                    let next = ids.len() as u32;
                    vec![*ids.entry(bits).or_insert(next)]
                };
                let mut sk = Vec::with_capacity(n);
                let mut nk = Vec::with_capacity(n);
                for t in dataset.transitions() {
                    sk.push(id_of(&t.state));
                    nk.push(id_of(&t.next_state));
                }
                let count = ids.len() as u64;
                (sk, nk, Some(count))
            }
        };
        Ok(Self {
            states,
            actions,
            rewards,
            next_states,
            not_done,
            state_keys,
            next_state_keys,
            state_ids,
        })
    }

    fn len(&self) -> usize {
        self.rewards.len()
    }
}

/// A minibatch of dataset transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub not_done: Array1<f64>,
}

/// Policy actions at the batch states and next states together with their
/// count penalties.
#[derive(Debug, Clone)]
pub struct OodQueries {
    pub in_actions: Array2<f64>,
    pub next_actions: Array2<f64>,
    pub u_in: Array1<f64>,
    pub u_next: Array1<f64>,
}

/// Critic loss terms and gradients for both critics.
#[derive(Debug, Clone)]
pub struct QLoss {
    /// Mean over the two critics.
    pub loss_in: f64,
    pub loss_ood: f64,
    pub per_critic: [(f64, f64); 2],
    pub grads: [MlpGrads; 2],
    pub q_mean: f64,
    pub td_targets: [Array1<f64>; 2],
    pub ood_in_targets: [Array1<f64>; 2],
    pub ood_next_targets: [Array1<f64>; 2],
}

/// Averages over the gradient steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub steps: usize,
    pub q_mean: f64,
    pub u_mean: f64,
    pub loss_in: f64,
    pub loss_ood: f64,
    pub policy_loss: f64,
}

/// Full learner state. Training is a pure function of the configuration, the
/// dataset and the seed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub critics: [Critic; 2],
    pub policy: PolicyHead,
    pub policy_adam: AdamState,
    pub grid: GridSpec,
    pub counts: CountTable,
    /// 1-based epoch counter `T`.
    pub epoch: u64,
    pub grad_steps: u64,
    pub rng: ChaCha8Rng,
    data: Prepared,
}

fn state_action(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states, actions]).expect("matching row counts")
}

impl Trainer {
    /// Builds networks, the grid and the count table, and counts every
    /// dataset state-action pair once.
    pub fn new(
        config: TrainerConfig,
        dataset: &TransitionDataset,
        action_low: &[f64],
        action_high: &[f64],
    ) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Config("training needs a nonempty dataset".into()));
        }
        if action_low.len() != dataset.action_dim() || action_high.len() != dataset.action_dim() {
            return Err(Error::Shape {
                expected: format!("action box of dimension {}", dataset.action_dim()),
                got: action_low.len().to_string(),
            });
        }
        let grid = GridSpec::from_dataset(dataset, config.partitions, config.margin, config.encoding)?;
        let data = Prepared::new(dataset, &grid, config.state_mode)?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
        let mut q_sizes = vec![sd + ad];
        q_sizes.extend(&config.q_hidden);
        q_sizes.push(1);
        let critic = |rng: &mut ChaCha8Rng| {
            let net = Mlp::new(&q_sizes, Activation::Relu, Activation::Identity, rng);
            Critic {
                target: net.clone(),
                adam: AdamState::new(&net, AdamConfig::with_lr(config.q_lr)),
                net,
            }
        };
        let critics = [critic(&mut rng), critic(&mut rng)];
        let policy = PolicyHead::new(sd, &config.policy_hidden, action_low, action_high, &mut rng);
        let policy_adam = AdamState::new(&policy.net, AdamConfig::with_lr(config.policy_lr));

        let mut trainer = Self {
            counts: CountTable::new(config.kappa),
            config,
            critics,
            policy,
            policy_adam,
            grid,
            epoch: 1,
            grad_steps: 0,
            rng,
            data,
        };
        trainer.ingest()?;
        Ok(trainer)
    }

    /// Rebuilds a trainer from saved parts; the dataset must be the one the
    /// parts were trained on.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: TrainerConfig,
        dataset: &TransitionDataset,
        critics: [Critic; 2],
        policy: PolicyHead,
        policy_adam: AdamState,
        grid: GridSpec,
        counts: CountTable,
        epoch: u64,
        grad_steps: u64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let data = Prepared::new(dataset, &grid, config.state_mode)?;
        Ok(Self {
            config,
            critics,
            policy,
            policy_adam,
            grid,
            counts,
            epoch,
            grad_steps,
            rng,
            data,
        })
    }

    fn ingest(&mut self) -> Result<()> {
        for i in 0..self.data.len() {
            let key = self.cell_key(&self.data.state_keys[i], self.data.actions.row(i).as_slice().unwrap())?;
            self.counts.increment(key);
        }
        Ok(())
    }

    pub fn dataset_len(&self) -> usize {
        self.data.len()
    }

    pub fn state_mode(&self) -> StateMode {
        self.config.state_mode
    }

    /// Count-table key of the dataset state behind `state_key` paired with
    /// `action`.
    fn cell_key(&self, state_key: &[u32], action: &[f64]) -> Result<CellKey> {
        let mut digits = Vec::with_capacity(state_key.len() + action.len());
        digits.extend_from_slice(state_key);
        digits.extend(self.grid.action_digits(action)?);
        let bucket = BucketVector(digits);
        Ok(match self.data.state_ids {
            None => CellKey::from_bucket(&self.grid, bucket),
            Some(n) => CellKey::from_bucket_with_state_id(&self.grid, bucket, n),
        })
    }

    pub fn sample_batch(&mut self) -> Batch {
        let n = self.data.len();
        let indices: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.random_range(0..n))
            .collect();
        self.batch_from_indices(indices)
    }

    pub fn batch_from_indices(&self, indices: Vec<usize>) -> Batch {
        let d = &self.data;
        Batch {
            states: d.states.select(Axis(0), &indices),
            actions: d.actions.select(Axis(0), &indices),
            rewards: d.rewards.select(Axis(0), &indices),
            next_states: d.next_states.select(Axis(0), &indices),
            not_done: d.not_done.select(Axis(0), &indices),
            indices,
        }
    }

    /// Penalty of each `(dataset state, action)` pair; counts the pair first
    /// when counting on query is enabled.
    fn penalties(&mut self, indices: &[usize], actions: ArrayView2<f64>, next: bool) -> Result<Array1<f64>> {
        if !self.config.penalty_active() {
            return Ok(Array1::zeros(indices.len()));
        }
        let mut u = Array1::zeros(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            let state_key = if next {
                &self.data.next_state_keys[i]
            } else {
                &self.data.state_keys[i]
            };
            let key = self.cell_key(state_key, actions.row(r).as_slice().unwrap())?;
            if self.config.count_on_query {
                self.counts.increment(key.clone());
            }
            u[r] = self.counts.uncertainty(&key);
        }
        Ok(u)
    }

    /// Both critics' values at `(states, actions)`.
    pub fn q_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<[Array1<f64>; 2]> {
        let x = state_action(states, actions);
        let q = |c: &Critic| c.net.predict(x.view()).map(|y| y.column(0).to_owned());
        Ok([q(&self.critics[0])?, q(&self.critics[1])?])
    }

    /// Elementwise minimum over the two critics.
    pub fn min_q(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let [a, b] = self.q_values(states, actions)?;
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|x, y| x.min(*y)))
    }

    /// In-distribution targets for each critic given next actions sampled
    /// from the policy.
    pub fn in_dist_targets(&self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<[Array1<f64>; 2]> {
        let x = state_action(batch.next_states.view(), next_actions);
        let t0 = self.critics[0].target.predict(x.view())?.column(0).to_owned();
        let t1 = self.critics[1].target.predict(x.view())?.column(0).to_owned();
        let y = |q: &Array1<f64>| td_targets(batch.rewards.view(), batch.not_done.view(), q.view(), self.config.gamma);
        if self.config.target_min {
            let m = ndarray::Zip::from(&t0).and(&t1).map_collect(|a, b| a.min(*b));
            let y = y(&m);
            Ok([y.clone(), y])
        } else {
            Ok([y(&t0), y(&t1)])
        }
    }

    /// `L_in + L_ood` for both critics with stopped targets.
    pub fn q_loss(&self, batch: &Batch, ood: &OodQueries) -> Result<QLoss> {
        let b = batch.rewards.len();
        let c = &self.config;
        let td = self.in_dist_targets(batch, ood.next_actions.view())?;
        let x = concatenate(
            Axis(0),
            &[
                state_action(batch.states.view(), batch.actions.view()).view(),
                state_action(batch.states.view(), ood.in_actions.view()).view(),
                state_action(batch.next_states.view(), ood.next_actions.view()).view(),
            ],
        )
        .expect("same widths");

        let mut per_critic = [(0.0, 0.0); 2];
        let mut grads = Vec::with_capacity(2);
        let mut ood_in_targets = Vec::with_capacity(2);
        let mut ood_next_targets = Vec::with_capacity(2);
        let mut q_sum = 0.0;
        for (k, critic) in self.critics.iter().enumerate() {
            let cache = critic.net.forward(x.view())?;
            let q = cache.output().column(0);
            let q_in = q.slice(s![..b]);
            let q_ood_in = q.slice(s![b..2 * b]);
            let q_ood_next = q.slice(s![2 * b..]);
            let t_in = ndarray::Zip::from(&q_ood_in)
                .and(&ood.u_in)
                .map_collect(|&q, &u| ood_target(q, u, c.beta, c.clip_ood_targets));
            let t_next = ndarray::Zip::from(&q_ood_next)
                .and(&ood.u_next)
                .map_collect(|&q, &u| ood_target(q, u, c.beta_next, c.clip_ood_targets));

            let mut upstream = Array2::zeros((3 * b, 1));
            let mut loss_in = 0.0;
            let mut loss_ood = 0.0;
            for r in 0..b {
                let e_in = q_in[r] - td[k][r];
                let e_oi = q_ood_in[r] - t_in[r];
                let e_on = q_ood_next[r] - t_next[r];
                loss_in += e_in * e_in;
                loss_ood += e_oi * e_oi + e_on * e_on;
                upstream[[r, 0]] = 2.0 * e_in / b as f64;
                upstream[[b + r, 0]] = 2.0 * e_oi / b as f64;
                upstream[[2 * b + r, 0]] = 2.0 * e_on / b as f64;
            }
            loss_in /= b as f64;
            loss_ood /= b as f64;
            if !(loss_in.is_finite() && loss_ood.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "critic {k} loss at gradient step {} (L_in = {loss_in}, L_ood = {loss_ood}, epoch {})",
                    self.grad_steps, self.epoch
                )));
            }
            q_sum += q_in.sum();
            per_critic[k] = (loss_in, loss_ood);
            grads.push(critic.net.backward(&cache, upstream.view())?);
            ood_in_targets.push(t_in);
            ood_next_targets.push(t_next);
        }
        let [g0, g1]: [MlpGrads; 2] = grads.try_into().expect("two critics");
        let [ti0, ti1]: [Array1<f64>; 2] = ood_in_targets.try_into().expect("two critics");
        let [tn0, tn1]: [Array1<f64>; 2] = ood_next_targets.try_into().expect("two critics");
        Ok(QLoss {
            loss_in: 0.5 * (per_critic[0].0 + per_critic[1].0),
            loss_ood: 0.5 * (per_critic[0].1 + per_critic[1].1),
            per_critic,
            grads: [g0, g1],
            q_mean: q_sum / (2 * b) as f64,
            td_targets: td,
            ood_in_targets: [ti0, ti1],
            ood_next_targets: [tn0, tn1],
        })
    }

    /// `mean(ψ·log π(a|s) − min_k Q_k(s, a))` for a reparameterized sample at
    /// `states`, with gradients for the policy parameters only.
    pub fn policy_loss(&self, states: ArrayView2<f64>, sample: &PolicySample) -> Result<(f64, MlpGrads)> {
        let b = states.nrows();
        let ad = self.policy.action_dim();
        let sd = states.ncols();
        let x = state_action(states, sample.actions.view());
        let c0 = self.critics[0].net.forward(x.view())?;
        let c1 = self.critics[1].net.forward(x.view())?;
        let (q0, q1) = (c0.output().column(0), c1.output().column(0));
        let mut pick0 = Array2::zeros((b, 1));
        let mut pick1 = Array2::zeros((b, 1));
        let mut loss = 0.0;
        for r in 0..b {
            let q = if q0[r] <= q1[r] {
                pick0[[r, 0]] = 1.0;
                q0[r]
            } else {
                pick1[[r, 0]] = 1.0;
                q1[r]
            };
            loss += self.config.psi * sample.log_probs[r] - q;
        }
        loss /= b as f64;
        let g0 = self.critics[0].net.backward(&c0, pick0.view())?;
        let g1 = self.critics[1].net.backward(&c1, pick1.view())?;
        let dq_da = &g0.input.slice(s![.., sd..sd + ad]) + &g1.input.slice(s![.., sd..sd + ad]);
        let d_actions = dq_da.mapv(|g| -g / b as f64);
        let d_log_probs = Array1::from_elem(b, self.config.psi / b as f64);
        let grads = self.policy.backward(sample, d_actions.view(), d_log_probs.view())?;
        Ok((loss, grads))
    }

    /// One full update: sample a batch, query the policy, penalize, update
    /// both critics, update the policy, track the targets.
    pub fn gradient_step(&mut self) -> Result<StepMetrics> {
        let batch = self.sample_batch();
        let in_sample = self.policy.sample(batch.states.view(), &mut self.rng)?;
        let next_sample = self.policy.sample(batch.next_states.view(), &mut self.rng)?;
        let u_in = self.penalties(&batch.indices, in_sample.actions.view(), false)?;
        let u_next = self.penalties(&batch.indices, next_sample.actions.view(), true)?;
        let ood = OodQueries {
            in_actions: in_sample.actions.clone(),
            next_actions: next_sample.actions,
            u_in,
            u_next,
        };

        let q = self.q_loss(&batch, &ood)?;
        for (critic, g) in self.critics.iter_mut().zip(&q.grads) {
            critic.adam.step(&mut critic.net, g)?;
        }

        let (policy_loss, pg) = self.policy_loss(batch.states.view(), &in_sample)?;
        self.policy_adam.step(&mut self.policy.net, &pg)?;

        for critic in &mut self.critics {
            soft_update(&critic.net, &mut critic.target, self.config.rho);
        }
        self.grad_steps += 1;

        let n_u = (ood.u_in.len() + ood.u_next.len()) as f64;
        Ok(StepMetrics {
            q_mean: q.q_mean,
            u_mean: (ood.u_in.sum() + ood.u_next.sum()) / n_u,
            loss_in: q.loss_in,
            loss_ood: q.loss_ood,
            policy_loss,
        })
    }

    /// Runs `steps_per_epoch` gradient steps and advances `T`.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let steps = self.config.steps_per_epoch;
        let mut m = EpochMetrics {
            epoch: self.epoch,
            steps,
            ..Default::default()
        };
        for _ in 0..steps {
            let s = self.gradient_step()?;
            m.q_mean += s.q_mean;
            m.u_mean += s.u_mean;
            m.loss_in += s.loss_in;
            m.loss_ood += s.loss_ood;
            m.policy_loss += s.policy_loss;
        }
        if steps > 0 {
            let n = steps as f64;
            m.q_mean /= n;
            m.u_mean /= n;
            m.loss_in /= n;
            m.loss_ood /= n;
            m.policy_loss /= n;
        }
        self.epoch += 1;
        self.counts.set_epoch(self.epoch);
        Ok(m)
    }
}

/// Scalars reported by a single gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub q_mean: f64,
    pub u_mean: f64,
    pub loss_in: f64,
    pub loss_ood: f64,
    pub policy_loss: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Tier, Transition};
    use crate::envs::{Env, PointReachEnv};
    use ndarray::array;

    fn small_config() -> TrainerConfig {
        TrainerConfig {
            steps_per_epoch: 4,
            batch_size: 16,
            q_hidden: vec![8, 8],
            policy_hidden: vec![8],
            ..Default::default()
        }
    }

    fn trainer(config: TrainerConfig) -> Trainer {
        let env = PointReachEnv::new(2);
        let data = generate_dataset(&env, Tier::Medium, 300, 5).unwrap();
        Trainer::new(config, &data, env.action_low(), env.action_high()).unwrap()
    }

    fn params(t: &Trainer) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &t.critics {
            out.extend(c.net.slices().flatten());
            out.extend(c.target.slices().flatten());
        }
        out.extend(t.policy.net.slices().flatten());
        out
    }

    #[test]
    fn dataset_is_counted_once_per_transition() {
        let t = trainer(small_config());
        assert_eq!(t.counts.total(), 300);
        assert_eq!(t.epoch, 1);
    }

    #[test]
    fn same_seed_same_run() {
        let mut a = trainer(small_config());
        let mut b = trainer(small_config());
        for _ in 0..2 {
            assert_eq!(a.train_epoch().unwrap(), b.train_epoch().unwrap());
        }
        assert_eq!(params(&a), params(&b));
        assert_eq!(a.counts.sorted_entries(), b.counts.sorted_entries());
    }

    #[test]
    fn zero_steps_only_advance_the_epoch() {
        let mut t = trainer(TrainerConfig {
            steps_per_epoch: 0,
            ..small_config()
        });
        let before = params(&t);
        let m = t.train_epoch().unwrap();
        assert_eq!(m.steps, 0);
        assert_eq!(params(&t), before);
        assert_eq!((t.epoch, t.counts.epoch()), (2, 2));
    }

    #[test]
    fn zero_kappa_skips_counting_and_penalties() {
        let mut t = trainer(TrainerConfig {
            kappa: 0.0,
            clip_ood_targets: false,
            ..small_config()
        });
        let m = t.train_epoch().unwrap();
        assert_eq!(m.u_mean, 0.0);
        assert_eq!(t.counts.total(), 300);

        // with u = 0 and no floor the OOD targets equal the predictions
        let batch = t.sample_batch();
        let pi = t.policy.sample(batch.states.view(), &mut t.rng).unwrap();
        let pn = t.policy.sample(batch.next_states.view(), &mut t.rng).unwrap();
        let n = batch.rewards.len();
        let ood = OodQueries {
            in_actions: pi.actions,
            next_actions: pn.actions,
            u_in: Array1::zeros(n),
            u_next: Array1::zeros(n),
        };
        assert_eq!(t.q_loss(&batch, &ood).unwrap().loss_ood, 0.0);
    }

    #[test]
    fn penalty_scales_linearly_in_kappa() {
        let mut one = trainer(small_config());
        let mut two = trainer(TrainerConfig {
            kappa: 2.0,
            ..small_config()
        });
        let a = one.gradient_step().unwrap();
        let b = two.gradient_step().unwrap();
        assert!(a.u_mean > 0.0);
        assert!((b.u_mean - 2.0 * a.u_mean).abs() < 1e-12 * b.u_mean);
    }

    #[test]
    fn query_counting_adds_two_per_batch_row() {
        let mut t = trainer(small_config());
        t.gradient_step().unwrap();
        assert_eq!(t.counts.total(), 300 + 2 * 16);
        let mut t = trainer(TrainerConfig {
            count_on_query: false,
            ..small_config()
        });
        t.gradient_step().unwrap();
        assert_eq!(t.counts.total(), 300);
    }

    #[test]
    fn clipped_ood_targets_are_nonnegative() {
        let t = trainer(small_config());
        let batch = t.batch_from_indices((0..16).collect());
        let n = 16;
        let ood = OodQueries {
            in_actions: batch.actions.clone(),
            next_actions: batch.actions.clone(),
            u_in: Array1::from_elem(n, 50.0),
            u_next: Array1::from_elem(n, 50.0),
        };
        let q = t.q_loss(&batch, &ood).unwrap();
        for k in 0..2 {
            assert!(q.ood_in_targets[k].iter().all(|&x| x == 0.0));
            assert!(q.ood_next_targets[k].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn one_transition_loss_by_hand() {
        let data = TransitionDataset::new(vec![Transition {
            state: vec![0.2],
            action: vec![0.05],
            reward: -0.7,
            next_state: vec![0.25],
            done: false,
        }])
        .unwrap();
        let config = TrainerConfig {
            batch_size: 1,
            clip_ood_targets: false,
            q_hidden: vec![3],
            policy_hidden: vec![3],
            ..Default::default()
        };
        let t = Trainer::new(config.clone(), &data, &[-0.1], &[0.1]).unwrap();
        let batch = t.batch_from_indices(vec![0]);
        let ood = OodQueries {
            in_actions: array![[-0.03]],
            next_actions: array![[0.08]],
            u_in: array![0.4],
            u_next: array![1.3],
        };
        let q = t.q_loss(&batch, &ood).unwrap();

        let eval = |net: &Mlp, s: f64, a: f64| net.predict(array![[s, a]].view()).unwrap()[[0, 0]];
        let next = eval(&t.critics[0].target, 0.25, 0.08).min(eval(&t.critics[1].target, 0.25, 0.08));
        let y = -0.7 + 0.99 * next;
        for k in 0..2 {
            let net = &t.critics[k].net;
            let q_in = eval(net, 0.2, 0.05);
            let q_oi = eval(net, 0.2, -0.03);
            let q_on = eval(net, 0.25, 0.08);
            let l_in = (q_in - y).powi(2);
            let l_ood = (q_oi - (q_oi - config.beta * 0.4)).powi(2) + (q_on - (q_on - config.beta_next * 1.3)).powi(2);
            assert!((q.per_critic[k].0 - l_in).abs() < 1e-10);
            assert!((q.per_critic[k].1 - l_ood).abs() < 1e-10);
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut t = trainer(small_config());
        let batch = t.batch_from_indices((0..8).collect());
        let pi = t.policy.sample(batch.states.view(), &mut t.rng).unwrap();
        let pn = t.policy.sample(batch.next_states.view(), &mut t.rng).unwrap();
        let ood = OodQueries {
            in_actions: pi.actions,
            next_actions: pn.actions,
            u_in: Array1::from_elem(8, 0.3),
            u_next: Array1::from_elem(8, 0.7),
        };
        let t = Trainer {
            config: TrainerConfig {
                clip_ood_targets: false,
                ..t.config.clone()
            },
            ..t
        };
        let analytic: Vec<f64> = t.q_loss(&batch, &ood).unwrap().grads[0].slices().flatten().copied().collect();
        // the OOD targets move with the parameters, so differentiate with them frozen
        let frozen = t.q_loss(&batch, &ood).unwrap();
        let loss_at = |net: &Mlp| {
            let x = concatenate(
                Axis(0),
                &[
                    state_action(batch.states.view(), batch.actions.view()).view(),
                    state_action(batch.states.view(), ood.in_actions.view()).view(),
                    state_action(batch.next_states.view(), ood.next_actions.view()).view(),
                ],
            )
            .unwrap();
            let q = net.predict(x.view()).unwrap();
            let mut l = 0.0;
            for r in 0..8 {
                l += (q[[r, 0]] - frozen.td_targets[0][r]).powi(2);
                l += (q[[8 + r, 0]] - frozen.ood_in_targets[0][r]).powi(2);
                l += (q[[16 + r, 0]] - frozen.ood_next_targets[0][r]).powi(2);
            }
            l / 8.0
        };
        let h = 1e-6;
        let mut net = t.critics[0].net.clone();
        let mut i = 0;
        let n_params: usize = analytic.len();
        for idx in (0..n_params).step_by(5) {
            let mut flat: Vec<&mut f64> = net.slices_mut().flat_map(|s| s.iter_mut()).collect();
            let orig = *flat[idx];
            *flat[idx] = orig + h;
            drop(flat);
            let up = loss_at(&net);
            let mut flat: Vec<&mut f64> = net.slices_mut().flat_map(|s| s.iter_mut()).collect();
            *flat[idx] = orig - h;
            drop(flat);
            let down = loss_at(&net);
            let mut flat: Vec<&mut f64> = net.slices_mut().flat_map(|s| s.iter_mut()).collect();
            *flat[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic[idx]).abs() < 1e-5 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", analytic[idx]);
            i += 1;
        }
        assert!(i > 10);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut t = trainer(small_config());
        let batch = t.batch_from_indices((0..8).collect());
        let noise = Array2::from_shape_fn((8, 2), |(r, j)| ((r * 2 + j) as f64 * 0.37).sin());
        let sample = t.policy.sample_with_noise(batch.states.view(), noise.clone()).unwrap();
        let (_, grads) = t.policy_loss(batch.states.view(), &sample).unwrap();
        let analytic: Vec<f64> = grads.slices().flatten().copied().collect();
        let h = 1e-6;
        let n = analytic.len();
        let loss_at = |t: &mut Trainer, idx: usize, delta: f64| {
            let mut flat: Vec<&mut f64> = t.policy.net.slices_mut().flat_map(|s| s.iter_mut()).collect();
            *flat[idx] += delta;
            drop(flat);
            let s = t.policy.sample_with_noise(batch.states.view(), noise.clone()).unwrap();
            let l = t.policy_loss(batch.states.view(), &s).unwrap().0;
            let mut flat: Vec<&mut f64> = t.policy.net.slices_mut().flat_map(|s| s.iter_mut()).collect();
            *flat[idx] -= delta;
            l
        };
        let mut worst: f64 = 0.0;
        for idx in 0..n {
            let fd = (loss_at(&mut t, idx, h) - loss_at(&mut t, idx, -h)) / (2.0 * h);
            let err = (fd - analytic[idx]).abs() / (1e-6 + fd.abs().max(analytic[idx].abs()));
            if fd.abs().max(analytic[idx].abs()) > 1e-7 {
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn id_mode_keys_states_by_identity() {
        let mut t = trainer(TrainerConfig {
            state_mode: StateMode::Id,
            ..small_config()
        });
        assert_eq!(t.counts.total(), 300);
        t.train_epoch().unwrap();
    }
}
