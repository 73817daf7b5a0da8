//! Random inputs shared by the oracle comparisons.

use empo_core::envsim::{ActionId, Observation, TaskSpec, CHAIN_CORRIDOR};
use empo_core::memory::{Tip, KEY_DIM};
use empo_core::policy::{ContextFeatures, FeatureDims, PolicyParams, Sparse};
use empo_core::rollout::{RolloutMode, StepRecord, Trajectory};
use rand::seq::index::sample;
use rand::Rng;

use crate::policy::naive_logprob;

fn sparse<R: Rng>(rng: &mut R, dim: usize, max: usize) -> Sparse<f64> {
    let k = rng.gen_range(0..=max);
    let mut idx: Vec<u32> = sample(rng, dim, k).into_iter().map(|i| i as u32).collect();
    idx.sort_unstable();
    idx.into_iter().map(|i| (i, 1.0)).collect()
}

/// 1–8 actions over small feature spaces so buckets are shared between actions.
pub fn random_context<R: Rng>(rng: &mut R, dims: FeatureDims) -> ContextFeatures<f64> {
    let n = rng.gen_range(1..=8);
    let tip_present = rng.gen_bool(0.5);
    let base = (0..n).map(|_| sparse(rng, dims.base, 6)).collect();
    let tip = (0..n).map(|_| if tip_present { sparse(rng, dims.tip, 3) } else { Vec::new() }).collect();
    ContextFeatures { base, tip, tip_present }
}

pub fn random_params<R: Rng>(rng: &mut R, dims: FeatureDims, scale: f64) -> PolicyParams<f64> {
    let mut p = PolicyParams::zeros(dims);
    p.w.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
    p.v.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
    p
}

/// Unit key near one of `centers` random directions, so that many pairs
/// land on both sides of the retrieval threshold.
pub fn clustered_key<R: Rng>(rng: &mut R, centers: &[Vec<f64>], noise: f64) -> Vec<f64> {
    let c = &centers[rng.gen_range(0..centers.len())];
    let v: Vec<f64> = c.iter().map(|x| x + rng.gen_range(-noise..noise)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_direction<R: Rng>(rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..KEY_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Tip with a random key, an integer score in [-100, 100] (so ties occur)
/// and content drawn from `distinct` possibilities (so duplicates occur).
pub fn random_tip<R: Rng>(rng: &mut R, centers: &[Vec<f64>], distinct: u32) -> Tip<f64> {
    let key = clustered_key(rng, centers, 0.2);
    let score = rng.gen_range(-100..=100) as f64;
    Tip::new(format!("tip {}", rng.gen_range(0..distinct)), key, score)
}

/// Trajectory over the given (context, action) steps whose behaviour
/// log-probabilities are recomputed under `behaviour`; extrinsic and total
/// return both `ret`.
pub fn hand_trajectory(
    steps: &[(ContextFeatures<f64>, usize)],
    behaviour: &PolicyParams<f64>,
    ret: f64,
    mode: RolloutMode,
) -> Trajectory<f64> {
    let obs = Observation { tokens: vec!["hallway".into()], room_id: 0, milestone_flags: 0 };
    let steps = steps
        .iter()
        .map(|(ctx, a)| StepRecord {
            obs: obs.clone(),
            action: ActionId(*a),
            admissible_count: ctx.base.len(),
            actions: (0..ctx.base.len()).map(|i| vec![format!("a{i}")]).collect(),
            reward_ext: 0.0,
            reward_int: 0.0,
            behavior_logprob: naive_logprob(behaviour, ctx, ActionId(*a)),
            tip_ids: if ctx.tip_present { vec![0] } else { Vec::new() },
            ctx: ctx.clone(),
        })
        .collect();
    Trajectory {
        task: TaskSpec::new(CHAIN_CORRIDOR, 0).expect("builtin family"),
        steps,
        final_obs: obs,
        return_ext: ret,
        return_total: ret,
        mode,
        success: false,
    }
}

/// Two-action context: base bucket 0 on action 0, base bucket 1 on action 1,
/// tip bucket 1 on action 1 when tips are present.
pub fn two_action_context(tips: bool) -> ContextFeatures<f64> {
    ContextFeatures {
        base: vec![vec![(0, 1.0)], vec![(1, 1.0)]],
        tip: if tips { vec![Vec::new(), vec![(1, 1.0)]] } else { vec![Vec::new(); 2] },
        tip_present: tips,
    }
}
