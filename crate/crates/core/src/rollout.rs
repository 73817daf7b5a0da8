//! Group rollouts: B tasks × N environment copies under one rollout mode.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::{make_env, ActionId, EnvError, Observation, TaskSpec};
use crate::memory::{embed, NoveltyStore, Tip, TipMemory};
use crate::policy::{featurize, greedy_action, sample_action, ContextFeatures, FeatureDims, PolicyParams};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("probability {name}={value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("group size {0} too small, need at least 2")]
    GroupSize(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RolloutMode {
    WithoutMemory,
    MemoryAugmented,
}

/// One tip buffer per environment family.
pub type TipMemories<T> = BTreeMap<String, TipMemory<T>>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<(), RolloutError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(RolloutError::Probability { name, value })
    }
}

/// `MemoryAugmented` with probability `p`. Always consumes exactly one draw.
pub fn sample_rollout_mode<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<RolloutMode, RolloutError> {
    check_probability("p", p)?;
    let u: f64 = rng.gen();
    Ok(if u < p { RolloutMode::MemoryAugmented } else { RolloutMode::WithoutMemory })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct StepRecord<T> {
    pub obs: Observation,
    pub action: ActionId,
    pub admissible_count: usize,
    /// Token lists of the admissible actions, in id order.
    pub actions: Vec<Vec<String>>,
    pub reward_ext: T,
    pub reward_int: T,
    pub behavior_logprob: T,
    /// Sequence numbers of the tips retrieved for this decision.
    pub tip_ids: Vec<u64>,
    /// Features the behaviour policy sampled from.
    pub ctx: ContextFeatures<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Trajectory<T> {
    pub task: TaskSpec,
    pub steps: Vec<StepRecord<T>>,
    pub final_obs: Observation,
    pub return_ext: T,
    pub return_total: T,
    pub mode: RolloutMode,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub group_size: usize,
    pub max_steps: usize,
    pub dims: FeatureDims,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { group_size: 8, max_steps: 30, dims: FeatureDims::default() }
    }
}

/// How an episode picks actions.
#[derive(Debug, Clone)]
pub enum Selection {
    Sample(ChaCha8Rng),
    Greedy,
}

/// Runs one episode. With `memory` set, tips are retrieved afresh at every
/// step from the current observation and fed to the tip channel.
pub fn run_episode<T: Scalar>(
    task: &TaskSpec,
    params: &PolicyParams<T>,
    memory: Option<&TipMemory<T>>,
    mut selection: Selection,
    max_steps: usize,
    dims: FeatureDims,
) -> Result<Trajectory<T>, EnvError> {
    let mut env = make_env(task)?;
    let mut obs = env.reset();
    let mut steps = Vec::new();
    let mut ret = T::zero();
    let mut success = false;
    let mode = if memory.is_some() { RolloutMode::MemoryAugmented } else { RolloutMode::WithoutMemory };
    while !env.is_done() && steps.len() < max_steps {
        let actions: Vec<Vec<String>> = env.admissible_actions()?.into_iter().map(|(_, t)| t).collect();
        let tips: Vec<&Tip<T>> = match memory {
            Some(m) => m.retrieve(&embed::<T>(&obs.tokens)),
            None => Vec::new(),
        };
        let ctx = featurize(&obs, task, &actions, &tips, dims);
        let (action, lp) = match &mut selection {
            Selection::Sample(rng) => sample_action(params, &ctx, rng),
            Selection::Greedy => {
                let a = greedy_action(params, &ctx);
                (a, crate::policy::logprob(params, &ctx, a))
            }
        };
        let out = env.step(action)?;
        let r = T::lit(out.reward);
        ret = ret + r;
        success = out.success;
        steps.push(StepRecord {
            obs: std::mem::replace(&mut obs, out.next_obs),
            action,
            admissible_count: actions.len(),
            actions,
            reward_ext: r,
            reward_int: T::zero(),
            behavior_logprob: lp,
            tip_ids: tips.iter().map(|t| t.seq).collect(),
            ctx,
        });
    }
    Ok(Trajectory {
        task: task.clone(),
        steps,
        final_obs: obs,
        return_ext: ret,
        return_total: ret,
        mode,
        success,
    })
}

/// Runs `group_size` sampled episodes per task, ordered task-major.
/// Per-trajectory rng seeds are drawn from `rng` in order before any episode
/// starts, so the result does not depend on thread scheduling.
pub fn run_group<T: Scalar, R: Rng + ?Sized>(
    tasks: &[TaskSpec],
    params_old: &PolicyParams<T>,
    mems: &TipMemories<T>,
    mode: RolloutMode,
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<Vec<Trajectory<T>>, RolloutError> {
    if cfg.group_size < 2 {
        return Err(RolloutError::GroupSize(cfg.group_size));
    }
    let jobs: Vec<(usize, u64)> = (0..tasks.len() * cfg.group_size).map(|i| (i / cfg.group_size, rng.gen())).collect();
    let empty = TipMemory::new();
    jobs.into_par_iter()
        .map(|(t, seed)| {
            let task = &tasks[t];
            let memory = match mode {
                RolloutMode::MemoryAugmented => Some(mems.get(&task.env_id).unwrap_or(&empty)),
                RolloutMode::WithoutMemory => None,
            };
            let sel = Selection::Sample(ChaCha8Rng::seed_from_u64(seed));
            let mut traj = run_episode(task, params_old, memory, sel, cfg.max_steps, cfg.dims)?;
            traj.mode = mode;
            Ok(traj)
        })
        .collect()
}

/// Turns a finished trajectory into a memory tip.
pub trait TipGenerator<T: Scalar>: Sync {
    fn generate(&self, traj: &Trajectory<T>) -> Result<Tip<T>, EnvError>;
}

/// Template reflection: `missing milestones: <list>; last action: <tokens>; score <return>`.
/// Keyed on the final observation plus the task description.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateTips;

impl<T: Scalar> TipGenerator<T> for TemplateTips {
    fn generate(&self, traj: &Trajectory<T>) -> Result<Tip<T>, EnvError> {
        let env = make_env(&traj.task)?;
        let missing: Vec<String> =
            env.missing_milestones(traj.final_obs.milestone_flags).into_iter().map(|m| m.join(" ")).collect();
        let missing = if missing.is_empty() { "none".to_string() } else { missing.join(", ") };
        let last = traj
            .steps
            .last()
            .map(|s| s.actions[s.action.0].join(" "))
            .unwrap_or_else(|| "none".to_string());
        let room = &traj.final_obs.tokens[0];
        let content =
            format!("missing milestones: {missing}; last action: {last}; last room: {room}; score {}", traj.return_ext);
        let mut key_tokens = traj.final_obs.tokens.clone();
        key_tokens.extend(traj.task.description.iter().cloned());
        Ok(Tip::new(content, embed(&key_tokens), traj.return_ext))
    }
}

/// Scores every visited state against the novelty store, in visit order.
pub fn assign_intrinsic<T: Scalar>(traj: &mut Trajectory<T>, store: &mut NoveltyStore<T>, lambda_int: T) {
    let mut sum = T::zero();
    for s in &mut traj.steps {
        s.reward_int = store.novelty_reward(&embed::<T>(&s.obs.tokens));
        sum = sum + s.reward_int;
    }
    traj.return_total = traj.return_ext + lambda_int * sum;
}

/// Writes trajectories as JSON lines.
pub fn dump_trajectories<T: Scalar + Serialize, W: Write>(trajs: &[Trajectory<T>], mut out: W) -> std::io::Result<()>
where
    T: serde::de::DeserializeOwned,
{
    for t in trajs {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
