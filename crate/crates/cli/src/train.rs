use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gpc_core::data::{DataFormat, TransitionDataset};
use gpc_core::envs::make_env;
use gpc_core::sac::{evaluate, load_checkpoint, normalized_score, reference_returns, save_checkpoint, Trainer};

use crate::config::RunConfig;
use crate::metrics::{CsvLog, MetricsRow, TimingRow};

pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS: &str = "metrics.csv";
pub const TIMING: &str = "timing.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Trains for `config.trainer.epochs` epochs (or what remains of them when
/// resuming), writing the config echo, metrics, timings and checkpoints
/// into `config.out`.
pub fn run(config: &RunConfig, resume: Option<&Path>) -> Result<Vec<MetricsRow>> {
    let Some(dataset_path) = &config.dataset else {
        bail!("no dataset given (use --dataset or the `dataset` key)");
    };
    let dataset = TransitionDataset::load(dataset_path, DataFormat::from_path(dataset_path))
        .with_context(|| format!("loading {}", dataset_path.display()))?;
    let env = make_env(&config.env)?;
    if (env.state_dim(), env.action_dim()) != (dataset.state_dim(), dataset.action_dim()) {
        bail!(
            "dataset has state/action dims ({}, {}) but {} has ({}, {})",
            dataset.state_dim(),
            dataset.action_dim(),
            config.env,
            env.state_dim(),
            env.action_dim()
        );
    }
    let out = &config.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut trainer = match resume {
        Some(dir) => {
            let mut t = load_checkpoint(dir, &dataset)?;
            // only the epoch budget may change on resume
            t.config.epochs = config.trainer.epochs;
            if t.config != config.trainer {
                bail!("trainer settings differ from the checkpoint in {}", dir.display());
            }
            t
        }
        None => Trainer::new(config.trainer.clone(), &dataset, env.action_low(), env.action_high())?,
    };
    fs::write(out.join(CONFIG_ECHO), config.to_toml()?).context("writing config echo")?;

    let (mut metrics, mut timing) = if resume.is_some() && out.join(METRICS).exists() {
        (CsvLog::append(&out.join(METRICS))?, CsvLog::append(&out.join(TIMING))?)
    } else {
        (CsvLog::create(&out.join(METRICS))?, CsvLog::create(&out.join(TIMING))?)
    };

    let references = reference_returns(env.as_ref(), config.eval_episodes, config.eval_seed);
    let epochs = config.trainer.epochs as u64;
    let mut rows = Vec::new();
    while trainer.epoch <= epochs {
        let started = Instant::now();
        let m = trainer.train_epoch()?;
        let wall = started.elapsed().as_secs_f64();
        let evaluate_now = config.eval_every > 0 && (m.epoch % config.eval_every as u64 == 0 || m.epoch == epochs);
        let (mean_return, score) = if evaluate_now {
            let r = evaluate(&trainer.policy, env.as_ref(), config.eval_episodes, config.eval_seed)?;
            (Some(r.mean_return), Some(normalized_score(r.mean_return, references)))
        } else {
            (None, None)
        };
        let row = MetricsRow {
            epoch: m.epoch,
            mean_return,
            normalized_score: score,
            q_mean: m.q_mean,
            u_mean: m.u_mean,
            loss_in: m.loss_in,
            loss_ood: m.loss_ood,
            policy_loss: m.policy_loss,
            wall_time_s: config.record_wall_time.then_some(wall),
        };
        metrics.write(&row)?;
        timing.write(&TimingRow {
            epoch: m.epoch,
            wall_time_s: wall,
        })?;
        if config.log_every > 0 && m.epoch % config.log_every as u64 == 0 {
            log::info!(
                "epoch {} q {:.3} u {:.4} L_in {:.4} L_ood {:.4} score {}",
                m.epoch,
                m.q_mean,
                m.u_mean,
                m.loss_in,
                m.loss_ood,
                score.map_or("-".into(), |s| format!("{s:.1}"))
            );
        }
        if config.checkpoint_every > 0 && m.epoch % config.checkpoint_every as u64 == 0 {
            save_checkpoint(&trainer, out.join(CHECKPOINT_DIR))?;
        }
        rows.push(row);
    }
    save_checkpoint(&trainer, out.join(CHECKPOINT_DIR))?;
    Ok(rows)
}
