//! Checkpoint directories: everything needed to resume a run exactly.
//!
//! ```text
//! config.kv        resolved run config
//! params.txt       current policy
//! reference.txt    KL reference policy
//! novelty.txt      pseudo-count store
//! memory/<env>.txt one tip buffer per family
//! state.json       iteration, env steps, rng stream cursors
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Streams, TrainConfig, TrainError, Trainer};
use crate::memory::{NoveltyStore, TipMemory};
use crate::policy::{load_params, save_params};
use crate::rollout::{TemplateTips, TipMemories};
use crate::scalar::Scalar;

/// Word positions of the four rng streams, as decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursors {
    pub task: String,
    pub mode: String,
    pub action: String,
    pub eval: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct State {
    iteration: u64,
    env_steps: u64,
    cursors: RngCursors,
}

fn ck(msg: impl std::fmt::Display) -> TrainError {
    TrainError::Checkpoint(msg.to_string())
}

fn read_state(dir: &Path) -> Result<State, TrainError> {
    let text = std::fs::read_to_string(dir.join("state.json")).map_err(|e| ck(format!("{}: {e}", dir.display())))?;
    serde_json::from_str(&text).map_err(|e| ck(format!("state.json: {e}")))
}

/// Iteration a checkpoint directory was taken at.
pub fn checkpoint_iteration(dir: &Path) -> Result<u64, TrainError> {
    Ok(read_state(dir)?.iteration)
}

impl<T: Scalar + Serialize + serde::de::DeserializeOwned> Trainer<T> {
    /// Writes a checkpoint directory, replacing any existing one at `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        let tmp = dir.with_extension("tmp");
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(tmp.join("memory"))?;
        std::fs::write(tmp.join("config.kv"), self.cfg.to_kv())?;
        save_params(&self.params, &tmp.join("params.txt"))?;
        save_params(&self.reference, &tmp.join("reference.txt"))?;
        std::fs::write(tmp.join("novelty.txt"), self.novelty.to_snapshot())?;
        for (env, mem) in &self.mems {
            mem.save(&tmp.join("memory").join(format!("{env}.txt")))?;
        }
        let s = &self.streams;
        let state = State {
            iteration: self.iteration,
            env_steps: self.env_steps,
            cursors: RngCursors {
                task: s.task.get_word_pos().to_string(),
                mode: s.mode.get_word_pos().to_string(),
                action: s.action.get_word_pos().to_string(),
                eval: s.eval.get_word_pos().to_string(),
            },
        };
        std::fs::write(tmp.join("state.json"), serde_json::to_string_pretty(&state).map_err(ck)? + "\n")?;
        if dir.exists() {
            std::fs::remove_dir_all(dir)?;
        }
        std::fs::rename(&tmp, dir)?;
        Ok(())
    }

    /// Restores a trainer exactly as it was saved.
    pub fn load_checkpoint(dir: &Path) -> Result<Self, TrainError> {
        let kv = std::fs::read_to_string(dir.join("config.kv")).map_err(|e| ck(format!("{}: {e}", dir.display())))?;
        let cfg = TrainConfig::<T>::from_kv(&kv)?;
        let state = read_state(dir)?;
        let params = load_params(&dir.join("params.txt"))?;
        let reference = load_params(&dir.join("reference.txt"))?;
        if params.dims() != cfg.dims || reference.dims() != cfg.dims {
            return Err(ck("parameter dimensions disagree with config"));
        }
        let novelty = NoveltyStore::from_snapshot(&std::fs::read_to_string(dir.join("novelty.txt"))?)?;
        let mut mems = TipMemories::new();
        for entry in std::fs::read_dir(dir.join("memory"))? {
            let path = entry?.path();
            let Some(env) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            mems.insert(env.to_string(), TipMemory::load(&path)?);
        }
        let mut streams = Streams::new(cfg.seed, cfg.eval_seed);
        let pos = |s: &str| s.parse::<u128>().map_err(|e| ck(format!("rng cursor '{s}': {e}")));
        let c = &state.cursors;
        streams.task.set_word_pos(pos(&c.task)?);
        streams.mode.set_word_pos(pos(&c.mode)?);
        streams.action.set_word_pos(pos(&c.action)?);
        streams.eval.set_word_pos(pos(&c.eval)?);
        Ok(Trainer {
            cfg,
            params,
            reference,
            mems,
            novelty,
            streams,
            iteration: state.iteration,
            env_steps: state.env_steps,
            tips: Box::new(TemplateTips),
            dump_dir: None,
        })
    }
}
