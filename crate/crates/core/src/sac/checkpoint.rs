//! A checkpoint is a directory: `manifest.json`, `config.json`,
//! `counts.json`, and one `.bin` file per network and optimizer.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::trainer::{Critic, Trainer};
use crate::count::CountSnapshot;
use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::nn::{read_adam, read_mlp, write_adam, write_mlp, AdamState, Mlp, PolicyHead};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    /// Next epoch to run.
    pub epoch: u64,
    pub grad_steps: u64,
    pub dataset_len: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub rng: ChaCha8Rng,
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn save_net(dir: &Path, name: &str, net: &Mlp) -> Result<()> {
    write_file(&dir.join(name), |w| write_mlp(w, net))
}

fn save_adam(dir: &Path, name: &str, adam: &AdamState) -> Result<()> {
    write_file(&dir.join(name), |w| write_adam(w, adam))
}

fn load_net(dir: &Path, name: &str) -> Result<Mlp> {
    read_mlp(&mut open(&dir.join(name))?)
}

fn load_adam(dir: &Path, name: &str) -> Result<AdamState> {
    read_adam(&mut open(&dir.join(name))?)
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Writes the full trainer state into `dir`, creating it if needed.
pub fn save_checkpoint(trainer: &Trainer, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, c) in trainer.critics.iter().enumerate() {
        save_net(dir, &format!("q{k}.bin"), &c.net)?;
        save_net(dir, &format!("q{k}_target.bin"), &c.target)?;
        save_adam(dir, &format!("q{k}_adam.bin"), &c.adam)?;
    }
    save_net(dir, "policy.bin", &trainer.policy.net)?;
    save_adam(dir, "policy_adam.bin", &trainer.policy_adam)?;
    CountSnapshot::new(&trainer.grid, trainer.state_mode(), &trainer.counts).save(dir.join("counts.json"))?;
    save_json(&dir.join("config.json"), &trainer.config)?;
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config_hash: trainer.config.hash(),
        epoch: trainer.epoch,
        grad_steps: trainer.grad_steps,
        dataset_len: trainer.dataset_len(),
        action_low: trainer.policy.action_low(),
        action_high: trainer.policy.action_high(),
        rng: trainer.rng.clone(),
    };
    save_json(&dir.join("manifest.json"), &manifest)
}

/// Reads only the policy of a checkpoint, for evaluation.
pub fn load_policy(dir: impl AsRef<Path>) -> Result<PolicyHead> {
    let dir = dir.as_ref();
    let manifest: Manifest = load_json(&dir.join("manifest.json"))?;
    PolicyHead::from_net(load_net(dir, "policy.bin")?, &manifest.action_low, &manifest.action_high)
}

/// Restores a trainer saved by [`save_checkpoint`]; training resumes exactly
/// where it stopped given the same dataset.
pub fn load_checkpoint(dir: impl AsRef<Path>, dataset: &TransitionDataset) -> Result<Trainer> {
    let dir = dir.as_ref();
    let manifest: Manifest = load_json(&dir.join("manifest.json"))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let config: TrainerConfig = load_json(&dir.join("config.json"))?;
    if config.hash() != manifest.config_hash {
        return Err(Error::Config(format!(
            "config.json in {} does not match the manifest hash",
            dir.display()
        )));
    }
    if manifest.dataset_len != dataset.len() {
        return Err(Error::Config(format!(
            "checkpoint was trained on {} transitions, dataset has {}",
            manifest.dataset_len,
            dataset.len()
        )));
    }
    let snapshot = CountSnapshot::load(dir.join("counts.json"))?;
    if snapshot.state_mode != config.state_mode {
        return Err(Error::Config("count table state mode differs from config".into()));
    }
    let grid = snapshot.grid.clone();
    let counts = snapshot.into_table()?;
    let critic = |k: usize| -> Result<Critic> {
        Ok(Critic {
            net: load_net(dir, &format!("q{k}.bin"))?,
            target: load_net(dir, &format!("q{k}_target.bin"))?,
            adam: load_adam(dir, &format!("q{k}_adam.bin"))?,
        })
    };
    let critics = [critic(0)?, critic(1)?];
    let policy = PolicyHead::from_net(load_net(dir, "policy.bin")?, &manifest.action_low, &manifest.action_high)?;
    let policy_adam = load_adam(dir, "policy_adam.bin")?;
    Trainer::from_parts(
        config,
        dataset,
        critics,
        policy,
        policy_adam,
        grid,
        counts,
        manifest.epoch,
        manifest.grad_steps,
        manifest.rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Tier};
    use crate::envs::{Env, PointReachEnv};

    #[test]
    fn resume_continues_the_same_run() {
        let env = PointReachEnv::new(2);
        let data = generate_dataset(&env, Tier::Medium, 200, 1).unwrap();
        let config = TrainerConfig {
            steps_per_epoch: 3,
            batch_size: 8,
            q_hidden: vec![8],
            policy_hidden: vec![8],
            ..Default::default()
        };
        let mut straight = Trainer::new(config.clone(), &data, env.action_low(), env.action_high()).unwrap();
        let mut first = straight.clone();
        straight.train_epoch().unwrap();
        let expected = straight.train_epoch().unwrap();

        first.train_epoch().unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&first, dir.path()).unwrap();
        let mut resumed = load_checkpoint(dir.path(), &data).unwrap();
        assert_eq!(resumed.train_epoch().unwrap(), expected);
        let flat = |net: &Mlp| net.slices().flatten().copied().collect::<Vec<_>>();
        assert_eq!(flat(&resumed.policy.net), flat(&straight.policy.net));
        for k in 0..2 {
            assert_eq!(flat(&resumed.critics[k].target), flat(&straight.critics[k].target));
        }
        assert_eq!(resumed.counts.sorted_entries(), straight.counts.sorted_entries());
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let env = PointReachEnv::new(1);
        let data = generate_dataset(&env, Tier::Random, 50, 1).unwrap();
        let config = TrainerConfig {
            q_hidden: vec![4],
            policy_hidden: vec![4],
            ..Default::default()
        };
        let t = Trainer::new(config, &data, env.action_low(), env.action_high()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&t, dir.path()).unwrap();
        let other = generate_dataset(&env, Tier::Random, 60, 1).unwrap();
        assert!(load_checkpoint(dir.path(), &other).is_err());
    }
}
