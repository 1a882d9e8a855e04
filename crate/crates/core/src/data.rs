//! Offline transition datasets: storage, file formats, summary statistics and
//! synthetic generation from behaviour tiers.
//!
//! Two on-disk formats are supported.
//!
//! * JSON lines: one object per transition with the fields `s`, `a`, `r`,
//!   `s_next` and `done`.
//! * Binary: a 24-byte little-endian header (`b"GPCD"`, `u32` version,
//!   `u32` state dimension, `u32` action dimension, `u64` record count)
//!   followed by row-major `f64` records laid out as
//!   `s, a, r, s_next, done` with `done` stored as `0.0` or `1.0`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::{unit_f64, Env};
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"GPCD";
const BINARY_VERSION: u32 = 1;

/// Action noise of the medium tier.
pub const MEDIUM_NOISE_STD: f64 = 0.05;
/// Probability that the medium tier replaces its action with a uniform one.
pub const MEDIUM_RANDOM_MIX: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "s")]
    pub state: Vec<f64>,
    #[serde(rename = "a")]
    pub action: Vec<f64>,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "s_next")]
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Ordered, immutable-after-load collection of transitions with consistent
/// dimensions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionDataset {
    state_dim: usize,
    action_dim: usize,
    transitions: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        let (state_dim, action_dim) = transitions
            .first()
            .map(|t| (t.state.len(), t.action.len()))
            .unwrap_or((0, 0));
        for (i, t) in transitions.iter().enumerate() {
            check_transition(t, state_dim, action_dim).map_err(|msg| Error::Parse {
                line: i + 1,
                msg,
            })?;
        }
        Ok(Self {
            state_dim,
            action_dim,
            transitions,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.transitions[index]
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::compute(self)
    }

    /// Undiscounted returns of the episodes in the dataset, split on `done`.
    /// A trailing partial episode is included.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut returns = Vec::new();
        let mut acc = 0.0;
        let mut open = false;
        for t in &self.transitions {
            acc += t.reward;
            open = true;
            if t.done {
                returns.push(acc);
                acc = 0.0;
                open = false;
            }
        }
        if open {
            returns.push(acc);
        }
        returns
    }

    pub fn load(path: impl AsRef<Path>, format: DataFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        match format {
            DataFormat::JsonLines => Self::read_jsonl(BufReader::new(file)),
            DataFormat::Binary => Self::read_binary(BufReader::new(file)),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        match format {
            DataFormat::JsonLines => self.write_jsonl(&mut w),
            DataFormat::Binary => self.write_binary(&mut w),
        }
        .map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut transitions = Vec::new();
        let mut dims: Option<(usize, usize)> = None;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            let (sd, ad) = *dims.get_or_insert((t.state.len(), t.action.len()));
            check_transition(&t, sd, ad).map_err(|msg| Error::Parse { line: line_no, msg })?;
            transitions.push(t);
        }
        let (state_dim, action_dim) = dims.unwrap_or((0, 0));
        Ok(Self {
            state_dim,
            action_dim,
            transitions,
        })
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for t in &self.transitions {
            serde_json::to_writer(&mut *w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut reader: R) -> Result<Self> {
        let header_err = |msg: String| Error::Parse { line: 0, msg };
        let mut header = [0u8; 24];
        reader
            .read_exact(&mut header)
            .map_err(|e| header_err(format!("truncated header: {e}")))?;
        if &header[0..4] != BINARY_MAGIC {
            return Err(header_err(format!("bad magic {:?}", &header[0..4])));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != BINARY_VERSION {
            return Err(header_err(format!("unsupported version {version}")));
        }
        let sd = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let ad = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;

        let width = 2 * sd + ad + 2;
        let mut record = vec![0u8; width * 8];
        let mut values = vec![0.0f64; width];
        let mut transitions = Vec::with_capacity(count.min(1 << 24));
        for i in 0..count {
            reader.read_exact(&mut record).map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("truncated record: {e}"),
            })?;
            for (v, chunk) in values.iter_mut().zip(record.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            let done = match values[width - 1] {
                x if x == 0.0 => false,
                x if x == 1.0 => true,
                x => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("done flag must be 0 or 1, got {x}"),
                    })
                }
            };
            let t = Transition {
                state: values[..sd].to_vec(),
                action: values[sd..sd + ad].to_vec(),
                reward: values[sd + ad],
                next_state: values[sd + ad + 1..2 * sd + ad + 1].to_vec(),
                done,
            };
            check_transition(&t, sd, ad).map_err(|msg| Error::Parse { line: i + 1, msg })?;
            transitions.push(t);
        }
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing).map_err(|e| header_err(e.to_string()))? != 0 {
            return Err(Error::Parse {
                line: count + 1,
                msg: "trailing bytes after the last record".into(),
            });
        }
        Ok(Self {
            state_dim: sd,
            action_dim: ad,
            transitions,
        })
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&(self.action_dim as u32).to_le_bytes())?;
        w.write_all(&(self.transitions.len() as u64).to_le_bytes())?;
        for t in &self.transitions {
            let done = if t.done { 1.0f64 } else { 0.0 };
            for v in t
                .state
                .iter()
                .chain(&t.action)
                .chain(std::iter::once(&t.reward))
                .chain(&t.next_state)
                .chain(std::iter::once(&done))
            {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

fn check_transition(t: &Transition, sd: usize, ad: usize) -> std::result::Result<(), String> {
    if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
        return Err(format!(
            "dimension mismatch: expected state {sd} / action {ad}, got s {} a {} s_next {}",
            t.state.len(),
            t.action.len(),
            t.next_state.len()
        ));
    }
    let finite = t
        .state
        .iter()
        .chain(&t.action)
        .chain(&t.next_state)
        .all(|x| x.is_finite())
        && t.reward.is_finite();
    if !finite {
        return Err("non-finite component".into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    JsonLines,
    Binary,
}

impl DataFormat {
    /// Guesses the format from a file extension (`.bin` is binary, anything
    /// else JSON lines).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => DataFormat::Binary,
            _ => DataFormat::JsonLines,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json-lines" => Ok(DataFormat::JsonLines),
            "bin" | "binary" => Ok(DataFormat::Binary),
            _ => Err(Error::Unknown {
                kind: "data format",
                name: s.to_string(),
            }),
        }
    }
}

/// Per-dimension summary of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub state_mean: Vec<f64>,
    pub action_min: Vec<f64>,
    pub action_max: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub reward_min: f64,
    pub reward_max: f64,
    pub reward_mean: f64,
}

#[derive(Clone)]
struct Running {
    min: Vec<f64>,
    max: Vec<f64>,
    sum: Vec<f64>,
}

impl Running {
    fn new(dim: usize) -> Self {
        Self {
            min: vec![f64::INFINITY; dim],
            max: vec![f64::NEG_INFINITY; dim],
            sum: vec![0.0; dim],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        for (k, &x) in xs.iter().enumerate() {
            self.min[k] = self.min[k].min(x);
            self.max[k] = self.max[k].max(x);
            self.sum[k] += x;
        }
    }

    fn finish(self, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mean = self
            .sum
            .iter()
            .zip(self.min.iter().zip(&self.max))
            // a running sum can land a hair outside [min, max]
            .map(|(s, (lo, hi))| (s / n as f64).clamp(*lo, *hi))
            .collect();
        (self.min, self.max, mean)
    }
}

impl DatasetStats {
    /// Statistics over `s` and `a` of every transition. An empty dataset
    /// yields empty vectors and zero reward statistics.
    pub fn compute(dataset: &TransitionDataset) -> Self {
        let n = dataset.len();
        if n == 0 {
            return Self {
                count: 0,
                state_min: vec![],
                state_max: vec![],
                state_mean: vec![],
                action_min: vec![],
                action_max: vec![],
                action_mean: vec![],
                reward_min: 0.0,
                reward_max: 0.0,
                reward_mean: 0.0,
            };
        }
        let mut states = Running::new(dataset.state_dim());
        let mut actions = Running::new(dataset.action_dim());
        let mut rewards = Running::new(1);
        for t in dataset.transitions() {
            states.push(&t.state);
            actions.push(&t.action);
            rewards.push(&[t.reward]);
        }
        let (state_min, state_max, state_mean) = states.finish(n);
        let (action_min, action_max, action_mean) = actions.finish(n);
        let (rmin, rmax, rmean) = rewards.finish(n);
        Self {
            count: n,
            state_min,
            state_max,
            state_mean,
            action_min,
            action_max,
            action_mean,
            reward_min: rmin[0],
            reward_max: rmax[0],
            reward_mean: rmean[0],
        }
    }
}

/// Advisory grid and penalty-scale choice derived from dataset statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperparameterSuggestion {
    pub partitions: u32,
    pub kappa: f64,
}

/// Suggests a partition count placing `sqrt(G)·d_action` near the middle of
/// the recommended `[12, 16]` band, and a penalty scale between the reward
/// midrange and the reward mean. Negative scales are floored at zero.
pub fn suggest_hyperparameters(stats: &DatasetStats, action_dims: usize) -> HyperparameterSuggestion {
    let d = action_dims.max(1) as f64;
    let partitions = (14.0 / d).powi(2).round().clamp(1.0, 64.0) as u32;
    let midrange = 0.5 * (stats.reward_min + stats.reward_max);
    let kappa = (0.5 * (midrange + stats.reward_mean)).max(0.0);
    HyperparameterSuggestion { partitions, kappa }
}

/// Quality level of the behaviour policy that produced a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Random,
    Medium,
    Expert,
    /// Episodes from a behaviour policy whose quality improves from random to
    /// medium over the course of the dataset.
    MediumReplay,
    /// Equal halves of medium and expert data.
    Mixed,
}

impl Tier {
    pub const ALL: [Tier; 5] = [
        Tier::Random,
        Tier::Medium,
        Tier::Expert,
        Tier::MediumReplay,
        Tier::Mixed,
    ];
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Random => "random",
            Tier::Medium => "medium",
            Tier::Expert => "expert",
            Tier::MediumReplay => "medium-replay",
            Tier::Mixed => "mixed",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "tier",
                name: s.to_string(),
            })
    }
}

/// Behaviour policy: with probability `random_mix` take a uniform action,
/// otherwise the expert action plus Gaussian noise.
struct Behaviour {
    random_mix: f64,
    noise_std: f64,
}

impl Behaviour {
    fn act(&self, env: &dyn Env, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        if self.random_mix >= 1.0 || unit_f64(rng) < self.random_mix {
            return env.random_action(rng);
        }
        let mut a = env.expert_action(state);
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("valid std");
            for x in &mut a {
                *x += noise.sample(rng);
            }
        }
        env.clamp_action(&a)
    }
}

fn collect<F>(env: &dyn Env, size: usize, rng: &mut ChaCha8Rng, mut behaviour_for: F) -> Vec<Transition>
where
    F: FnMut(usize) -> Behaviour,
{
    let mut out = Vec::with_capacity(size);
    let mut episode = 0;
    while out.len() < size {
        let behaviour = behaviour_for(episode);
        let mut state = env.reset(rng);
        for t in 1..=env.horizon() {
            if out.len() == size {
                break;
            }
            let action = behaviour.act(env, &state, rng);
            let step = env.step(&state, &action, t);
            out.push(Transition {
                state: std::mem::replace(&mut state, step.next_state.clone()),
                action,
                reward: step.reward,
                next_state: step.next_state,
                done: step.done,
            });
            if step.done {
                break;
            }
        }
        episode += 1;
    }
    out
}

/// Rolls out the tier's behaviour policy until `size` transitions have been
/// collected. Deterministic in `seed`.
pub fn generate_dataset(env: &dyn Env, tier: Tier, size: usize, seed: u64) -> Result<TransitionDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let medium = || Behaviour {
        random_mix: MEDIUM_RANDOM_MIX,
        noise_std: MEDIUM_NOISE_STD,
    };
    let expert = || Behaviour {
        random_mix: 0.0,
        noise_std: 0.0,
    };
    let transitions = match tier {
        Tier::Random => collect(env, size, &mut rng, |_| Behaviour {
            random_mix: 1.0,
            noise_std: 0.0,
        }),
        Tier::Medium => collect(env, size, &mut rng, |_| medium()),
        Tier::Expert => collect(env, size, &mut rng, |_| expert()),
        Tier::MediumReplay => {
            let episodes = size.div_ceil(env.horizon()).max(1);
            collect(env, size, &mut rng, |ep| {
                let progress = (ep as f64 / episodes as f64).min(1.0);
                Behaviour {
                    random_mix: 1.0 - (1.0 - MEDIUM_RANDOM_MIX) * progress,
                    noise_std: MEDIUM_NOISE_STD,
                }
            })
        }
        Tier::Mixed => {
            let half = size / 2;
            let mut out = collect(env, half, &mut rng, |_| medium());
            out.extend(collect(env, size - half, &mut rng, |_| expert()));
            out
        }
    };
    TransitionDataset::new(transitions)
}
