//! Full training-state persistence: per-channel model and optimizer files in
//! the shared container format, plus a small JSON state document carrying the
//! curriculum position. Round trips are bit-exact, so a resumed run replays
//! the loss sequence of an uninterrupted one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::mae1d::{
    read_container, read_model, write_container, write_model, CheckpointError, Mae1dModel,
};
use crate::numcore::{AdamWState, Tensor};

use super::config::TrainConfig;
use super::seeds::init_seed;
use super::step::optimizer_for;
use super::TrainError;

pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub version: u32,
    /// Next epoch to run; equals `epochs` when training finished.
    pub epoch_next: u32,
    /// Global steps completed.
    pub global_step: u64,
    pub master_seed: u64,
    pub channels: usize,
    /// Hash of the serialized config; resume refuses a changed config.
    pub config_hash: String,
}

/// FNV-1a over the canonical JSON serialization.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

pub fn model_path(dir: &Path, channel: usize) -> PathBuf {
    dir.join(format!("model_c{channel:02}.mr1d"))
}

pub fn optim_path(dir: &Path, channel: usize) -> PathBuf {
    dir.join(format!("optim_c{channel:02}.mr1d"))
}

#[derive(Serialize, Deserialize)]
struct OptimMeta {
    step_count: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
}

/// Serializes one optimizer state into the shared container format:
/// hyperparameters and step count in the metadata blob, moments as entries
/// named after their parameters.
pub fn write_optimizer_file(path: &Path, model: &Mae1dModel, opt: &AdamWState) -> Result<(), CheckpointError> {
    let meta = serde_json::to_string(&OptimMeta {
        step_count: opt.step_count,
        beta1: opt.beta1,
        beta2: opt.beta2,
        epsilon: opt.epsilon,
        weight_decay: opt.weight_decay,
    })?;
    let mut entries = Vec::new();
    let mut idx = 0;
    model.params.for_each_named(&mut |name, _| {
        entries.push((format!("first_moment.{name}"), opt.first_moment[idx].clone()));
        entries.push((format!("second_moment.{name}"), opt.second_moment[idx].clone()));
        idx += 1;
    });
    write_container(path, &meta, &entries)
}

fn read_optimizer(path: &Path, model: &Mae1dModel) -> Result<AdamWState, CheckpointError> {
    let (meta, entries) = read_container(path)?;
    let meta: OptimMeta = serde_json::from_str(&meta)?;
    let mut by_name: std::collections::BTreeMap<String, Tensor> = entries.into_iter().collect();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut missing = None;
    model.params.for_each_named(&mut |name, param| {
        for (prefix, bucket) in
            [("first_moment", &mut first), ("second_moment", &mut second)]
        {
            match by_name.remove(&format!("{prefix}.{name}")) {
                Some(t) if t.shape() == param.shape() => bucket.push(t),
                Some(_) | None => {
                    missing.get_or_insert(format!("{prefix}.{name}"));
                }
            }
        }
    });
    if let Some(name) = missing {
        return Err(CheckpointError::MissingParam(name));
    }
    Ok(AdamWState {
        step_count: meta.step_count,
        beta1: meta.beta1,
        beta2: meta.beta2,
        epsilon: meta.epsilon,
        weight_decay: meta.weight_decay,
        first_moment: first,
        second_moment: second,
    })
}

/// Writes the whole training state: `state.json` plus one model and one
/// optimizer file per channel.
pub fn save_checkpoint(
    dir: &Path,
    cfg: &TrainConfig,
    models: &[Mae1dModel],
    opts: &[AdamWState],
    epoch_next: u32,
    global_step: u64,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| TrainError::Config(format!("cannot create {}: {e}", dir.display())))?;
    for (channel, (model, opt)) in models.iter().zip(opts.iter()).enumerate() {
        write_model(&model_path(dir, channel), model)?;
        write_optimizer_file(&optim_path(dir, channel), model, opt)?;
    }
    let state = TrainState {
        version: 1,
        epoch_next,
        global_step,
        master_seed: cfg.master_seed,
        channels: models.len(),
        config_hash: config_hash(cfg),
    };
    let json = serde_json::to_string_pretty(&state).expect("state serializes");
    std::fs::write(dir.join(STATE_FILE), json.as_bytes())
        .map_err(|e| TrainError::Config(format!("cannot write state: {e}")))?;
    Ok(())
}

/// Loads a full checkpoint for resuming. Returns `None` when the directory
/// holds no state file.
#[allow(clippy::type_complexity)]
pub fn load_checkpoint(
    dir: &Path,
    cfg: &TrainConfig,
) -> Result<Option<(Vec<Mae1dModel>, Vec<AdamWState>, TrainState)>, TrainError> {
    let state_path = dir.join(STATE_FILE);
    if !state_path.exists() {
        return Ok(None);
    }
    let state: TrainState = serde_json::from_str(
        &std::fs::read_to_string(&state_path)
            .map_err(|e| TrainError::Config(format!("cannot read state: {e}")))?,
    )
    .map_err(|e| TrainError::Config(format!("malformed state.json: {e}")))?;
    if state.config_hash != config_hash(cfg) {
        return Err(TrainError::Config(
            "checkpoint was written under a different configuration".into(),
        ));
    }
    let mut models = Vec::with_capacity(state.channels);
    let mut opts = Vec::with_capacity(state.channels);
    for channel in 0..state.channels {
        let model = read_model(&model_path(dir, channel))?;
        let opt = read_optimizer(&optim_path(dir, channel), &model)?;
        models.push(model);
        opts.push(opt);
    }
    Ok(Some((models, opts, state)))
}

/// Loads one channel's model and optimizer (the worker-side resume path).
pub fn load_channel_checkpoint(
    dir: &Path,
    cfg: &TrainConfig,
    channel: usize,
) -> Result<Option<(Mae1dModel, AdamWState, TrainState)>, TrainError> {
    let state_path = dir.join(STATE_FILE);
    if !state_path.exists() {
        return Ok(None);
    }
    let state: TrainState = serde_json::from_str(
        &std::fs::read_to_string(&state_path)
            .map_err(|e| TrainError::Config(format!("cannot read state: {e}")))?,
    )
    .map_err(|e| TrainError::Config(format!("malformed state.json: {e}")))?;
    if state.config_hash != config_hash(cfg) {
        return Err(TrainError::Config(
            "checkpoint was written under a different configuration".into(),
        ));
    }
    let model = read_model(&model_path(dir, channel))?;
    let opt = read_optimizer(&optim_path(dir, channel), &model)?;
    Ok(Some((model, opt, state)))
}

/// Fresh (or resumed) per-channel state at the start of a run.
pub fn init_or_resume(
    cfg: &TrainConfig,
) -> Result<(Vec<Mae1dModel>, Vec<AdamWState>, u32, u64), TrainError> {
    if !cfg.out_dir.is_empty() {
        if let Some((models, opts, state)) = load_checkpoint(Path::new(&cfg.out_dir), cfg)? {
            return Ok((models, opts, state.epoch_next, state.global_step));
        }
    }
    let mut models = Vec::with_capacity(cfg.channels);
    let mut opts = Vec::with_capacity(cfg.channels);
    for channel in 0..cfg.channels {
        let model = Mae1dModel::init(&cfg.model, init_seed(cfg.master_seed, channel))?;
        opts.push(optimizer_for(cfg, &model));
        models.push(model);
    }
    Ok((models, opts, 0, 0))
}
