//! Memory-free evaluation and frozen-weight adaptation.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{EnvError, TaskSpec};
use crate::memory::{MemoryError, TipMemory};
use crate::policy::PolicyParams;
use crate::rollout::{run_episode, Selection, TipGenerator, Trajectory};
use crate::scalar::Scalar;

/// How evaluation picks actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    /// Argmax, lowest id on ties.
    Greedy,
    /// Sampled, one rng stream seeded here.
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub env: String,
    pub variants: Vec<u64>,
    pub episodes: usize,
    pub mean_return: f64,
    pub median_return: f64,
    pub success_rate: f64,
    /// Per-episode extrinsic returns, variant-major.
    pub returns: Vec<f64>,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn summarize<T: Scalar>(env: &str, variants: Vec<u64>, trajs: &[Trajectory<T>]) -> EvalSummary {
    let returns: Vec<f64> = trajs.iter().map(|t| t.return_ext.as_f64()).collect();
    let successes = trajs.iter().filter(|t| t.success).count();
    EvalSummary {
        env: env.to_string(),
        variants,
        episodes: trajs.len(),
        mean_return: mean(&returns),
        median_return: median(&returns),
        success_rate: if trajs.is_empty() { 0.0 } else { successes as f64 / trajs.len() as f64 },
        returns,
    }
}

/// Runs `episodes` episodes on every variant. `memory = None` strips tip
/// retrieval entirely.
pub fn evaluate<T: Scalar>(
    params: &PolicyParams<T>,
    env: &str,
    variants: Range<u64>,
    memory: Option<&TipMemory<T>>,
    episodes: usize,
    policy: EvalPolicy,
    max_steps: usize,
) -> Result<EvalSummary, EnvError> {
    let trajs = evaluation_episodes(params, env, variants.clone(), memory, episodes, policy, max_steps)?;
    Ok(summarize(env, variants.collect(), &trajs))
}

/// The episodes behind [`evaluate`], variant-major.
pub fn evaluation_episodes<T: Scalar>(
    params: &PolicyParams<T>,
    env: &str,
    variants: Range<u64>,
    memory: Option<&TipMemory<T>>,
    episodes: usize,
    policy: EvalPolicy,
    max_steps: usize,
) -> Result<Vec<Trajectory<T>>, EnvError> {
    let mut rng = match policy {
        EvalPolicy::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        EvalPolicy::Greedy => None,
    };
    let mut trajs = Vec::new();
    for v in variants.clone() {
        let task = TaskSpec::new(env, v)?;
        for _ in 0..episodes {
            let sel = match &mut rng {
                Some(r) => Selection::Sample(ChaCha8Rng::seed_from_u64(r.gen())),
                None => Selection::Greedy,
            };
            trajs.push(run_episode(&task, params, memory, sel, max_steps, params.dims())?);
        }
    }
    Ok(trajs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    /// Buffer size when the trial started.
    pub memory_size: usize,
    pub returns: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("trials must be at least 1")]
    NoTrials,
}

/// One greedy pass over `variants` with memory, then one tip per episode
/// appended in variant order. Parameters are only borrowed.
pub fn adapt_trial<T: Scalar>(
    params: &PolicyParams<T>,
    env: &str,
    variants: Range<u64>,
    trial: usize,
    mem: &mut TipMemory<T>,
    tips: &dyn TipGenerator<T>,
    max_steps: usize,
) -> Result<TrialSummary, AdaptError> {
    let memory_size = mem.len();
    let mut trajs = Vec::new();
    for v in variants.clone() {
        let task = TaskSpec::new(env, v)?;
        trajs.push(run_episode(&task, params, Some(&*mem), Selection::Greedy, max_steps, params.dims())?);
    }
    for t in &trajs {
        mem.add(tips.generate(t)?)?;
    }
    let s = summarize(env, variants.collect(), &trajs);
    Ok(TrialSummary { trial, mean_return: s.mean_return, success_rate: s.success_rate, memory_size, returns: s.returns })
}

/// `trials` consecutive adaptation trials starting from `mem` (empty for a
/// fresh run).
pub fn adapt<T: Scalar>(
    params: &PolicyParams<T>,
    env: &str,
    variants: Range<u64>,
    trials: usize,
    mem: &mut TipMemory<T>,
    tips: &dyn TipGenerator<T>,
    max_steps: usize,
) -> Result<Vec<TrialSummary>, AdaptError> {
    if trials == 0 {
        return Err(AdaptError::NoTrials);
    }
    (0..trials).map(|k| adapt_trial(params, env, variants.clone(), k, mem, tips, max_steps)).collect()
}
