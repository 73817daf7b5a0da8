//! Update phase: group-relative advantages, ratio construction, the masked
//! dual-clip surrogate and the SGD step.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    accumulate_grad_kl, accumulate_grad_logprob, entropy, kl_to_ref, logprob, ContextFeatures, Gradient, PolicyError, PolicyParams,
};
use crate::rollout::{check_probability, RolloutError, RolloutMode, Trajectory};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("group size {0} too small, need at least 2")]
    GroupSize(usize),
    #[error("batch of {len} trajectories is not a whole number of groups of {group_size}")]
    Ragged { len: usize, group_size: usize },
    #[error("off-policy update requested for a trajectory rolled out without memory (index {0})")]
    OffPolicyWithoutMemory(usize),
    #[error("invalid update config: {0}")]
    Config(String),
    #[error("non-finite {what} at trajectory {traj}, step {step}")]
    NonFinite { what: &'static str, traj: usize, step: usize },
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateMode {
    OnPolicy,
    OffPolicy,
}

/// Off-policy ratio construction.
///
/// `Table3`: current side without tips, old side keeps the recorded
/// with-tip behaviour log-probability.
/// `Alg1`: both sides without tips; the old side is recomputed from the
/// behaviour parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OffPolicyRatio {
    #[default]
    Table3,
    Alg1,
}

impl std::str::FromStr for OffPolicyRatio {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table3" => Ok(OffPolicyRatio::Table3),
            "alg1" => Ok(OffPolicyRatio::Alg1),
            other => Err(format!("unknown off-policy ratio '{other}' (expected table3 or alg1)")),
        }
    }
}

impl std::fmt::Display for OffPolicyRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OffPolicyRatio::Table3 => "table3",
            OffPolicyRatio::Alg1 => "alg1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig<T> {
    pub eps_low: T,
    pub eps_high: T,
    pub dual_clip_c: T,
    pub beta: T,
    pub delta: T,
    pub lr: T,
    pub eps_std: T,
    /// Horizon used in the `1/(N·T)` normaliser.
    pub t_max: usize,
    pub offpolicy_ratio: OffPolicyRatio,
}

impl<T: Scalar> Default for UpdateConfig<T> {
    fn default() -> Self {
        UpdateConfig {
            eps_low: T::lit(0.2),
            eps_high: T::lit(0.3),
            dual_clip_c: T::lit(10.0),
            beta: T::zero(),
            delta: T::lit(1e-6),
            lr: T::lit(2.0),
            eps_std: T::lit(1e-8),
            t_max: 30,
            offpolicy_ratio: OffPolicyRatio::Table3,
        }
    }
}

impl<T: Scalar> UpdateConfig<T> {
    pub fn validate(&self) -> Result<(), OptimError> {
        let open01 = |x: T| x > T::zero() && x < T::one();
        let bad = |m: &str| Err(OptimError::Config(m.to_string()));
        if !open01(self.eps_low) || !open01(self.eps_high) {
            return bad("eps_low and eps_high must lie in (0, 1)");
        }
        if !(self.dual_clip_c > T::one()) {
            return bad("dual_clip_c must exceed 1");
        }
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return bad("beta must be finite and >= 0");
        }
        if !open01(self.delta) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.lr > T::zero()) || !self.lr.is_finite() {
            return bad("lr must be finite and > 0");
        }
        if !(self.eps_std >= T::zero()) {
            return bad("eps_std must be >= 0");
        }
        if self.t_max == 0 {
            return bad("t_max must be positive");
        }
        Ok(())
    }
}

/// Standardises one group's returns with the population mean and std.
/// A group whose std falls below `eps_std` gets all-zero advantages.
pub fn group_advantages<T: Scalar>(returns: &[T], eps_std: T) -> Result<Vec<T>, OptimError> {
    let n = returns.len();
    if n < 2 {
        return Err(OptimError::GroupSize(n));
    }
    let nf = T::lit(n as f64);
    let mean = returns.iter().copied().sum::<T>() / nf;
    let var = returns.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / nf;
    let std = var.sqrt();
    if std < eps_std || std == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    Ok(returns.iter().map(|&r| (r - mean) / std).collect())
}

/// Trajectories rolled out without memory always update on-policy. Always
/// consumes exactly one draw.
pub fn select_update_mode<R: Rng + ?Sized>(
    q: f64,
    rng: &mut R,
    traj_mode: RolloutMode,
) -> Result<UpdateMode, OptimError> {
    check_probability("q", q)?;
    let u: f64 = rng.gen();
    Ok(match traj_mode {
        RolloutMode::MemoryAugmented if u < q => UpdateMode::OffPolicy,
        _ => UpdateMode::OnPolicy,
    })
}

/// B groups of N trajectories each, stored group-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch<T> {
    pub trajectories: Vec<Trajectory<T>>,
    pub group_size: usize,
    /// One advantage per trajectory, shared by all of its actions.
    pub advantages: Vec<T>,
    /// Per trajectory, per step.
    pub old_logprobs: Vec<Vec<T>>,
    pub mode: UpdateMode,
}

impl<T: Scalar> GroupBatch<T> {
    /// Computes advantages from `return_total`; old log-probabilities start
    /// as the recorded behaviour values.
    pub fn new(trajectories: Vec<Trajectory<T>>, group_size: usize, eps_std: T) -> Result<Self, OptimError> {
        if group_size < 2 {
            return Err(OptimError::GroupSize(group_size));
        }
        if trajectories.len() % group_size != 0 {
            return Err(OptimError::Ragged { len: trajectories.len(), group_size });
        }
        let mut advantages = Vec::with_capacity(trajectories.len());
        for g in trajectories.chunks(group_size) {
            let returns: Vec<T> = g.iter().map(|t| t.return_total).collect();
            advantages.extend(group_advantages(&returns, eps_std)?);
        }
        let old_logprobs = trajectories.iter().map(|t| t.steps.iter().map(|s| s.behavior_logprob).collect()).collect();
        Ok(GroupBatch { trajectories, group_size, advantages, old_logprobs, mode: UpdateMode::OnPolicy })
    }

    pub fn num_groups(&self) -> usize {
        self.trajectories.len() / self.group_size
    }

    /// Context the current policy is evaluated under for one step.
    pub fn current_context(&self, traj: usize, step: usize) -> ContextFeatures<T> {
        let ctx = &self.trajectories[traj].steps[step].ctx;
        match self.mode {
            UpdateMode::OnPolicy => ctx.clone(),
            UpdateMode::OffPolicy => ctx.without_tips(),
        }
    }
}

/// Fixes the old side of every ratio for the chosen update mode.
pub fn prepare_old_logprobs<T: Scalar>(
    mut batch: GroupBatch<T>,
    mode: UpdateMode,
    params_old: &PolicyParams<T>,
    ratio: OffPolicyRatio,
) -> Result<GroupBatch<T>, OptimError> {
    if mode == UpdateMode::OffPolicy {
        if let Some(i) = batch.trajectories.iter().position(|t| t.mode != RolloutMode::MemoryAugmented) {
            return Err(OptimError::OffPolicyWithoutMemory(i));
        }
    }
    batch.mode = mode;
    batch.old_logprobs = batch
        .trajectories
        .iter()
        .map(|t| {
            t.steps
                .iter()
                .map(|s| match (mode, ratio) {
                    (UpdateMode::OffPolicy, OffPolicyRatio::Alg1) => logprob(params_old, &s.ctx.without_tips(), s.action),
                    _ => s.behavior_logprob,
                })
                .collect()
        })
        .collect();
    Ok(batch)
}

fn ratio_from<T: Scalar>(lp_cur: T, lp_old: T) -> T {
    (lp_cur - lp_old).exp()
}

/// `ρ` for step `t` of trajectory `i`: current policy under the mode's
/// current-side context over the prepared old log-probability.
pub fn importance_ratio<T: Scalar>(batch: &GroupBatch<T>, params: &PolicyParams<T>, i: usize, t: usize) -> T {
    let step = &batch.trajectories[i].steps[t];
    ratio_from(logprob(params, &batch.current_context(i, t), step.action), batch.old_logprobs[i][t])
}

/// Which piece of the clipped surrogate is active for one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermBranch {
    /// `ρ·A`, differentiable.
    Ratio,
    /// Ratio clipped to `1 ± ε`, constant.
    Clipped,
    /// Floored at `c·A` for negative advantages, constant.
    DualClipped,
    /// Zero advantage.
    Zero,
}

/// Value and active branch of `max(min(ρA, clip(ρ)A), cA)` (the floor only for A < 0).
pub fn clipped_term<T: Scalar>(rho: T, adv: T, eps_low: T, eps_high: T, c: T) -> (T, TermBranch) {
    if adv == T::zero() {
        return (T::zero(), TermBranch::Zero);
    }
    let clipped = rho.max(T::one() - eps_low).min(T::one() + eps_high);
    let (a, b) = (rho * adv, clipped * adv);
    let (mut term, mut branch) = if a <= b { (a, TermBranch::Ratio) } else { (b, TermBranch::Clipped) };
    if adv < T::zero() && c * adv > term {
        term = c * adv;
        branch = TermBranch::DualClipped;
    }
    (term, branch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStats {
    pub mean_abs_ratio_dev: f64,
    pub clip_fraction: f64,
    pub mask_fraction: f64,
    pub kl: f64,
    /// Mean no-tip entropy of the current policy over visited states.
    pub entropy: f64,
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate<T> {
    pub objective: T,
    pub gradient: Gradient<T>,
    pub stats: SurrogateStats,
}

/// Masked, asymmetrically clipped, dual-clipped surrogate minus `β·KL`,
/// with its exact gradient. Summation order is fixed (group, trajectory,
/// step) so results are bit-reproducible.
pub fn surrogate_objective<T: Scalar>(
    batch: &GroupBatch<T>,
    params: &PolicyParams<T>,
    reference: &PolicyParams<T>,
    cfg: &UpdateConfig<T>,
) -> Result<Surrogate<T>, OptimError> {
    cfg.validate()?;
    if params.dims() != reference.dims() {
        return Err(PolicyError::DimensionMismatch(format!("{:?} vs {:?}", params.dims(), reference.dims())).into());
    }
    let scale = T::one() / T::lit((batch.num_groups() * batch.group_size * cfg.t_max) as f64);
    let mut grad = Gradient::zeros(params.dims());
    let mut kl_grad = Gradient::zeros(params.dims());
    let mut objective = T::zero();
    let (mut kl_sum, mut ent_sum, mut dev_sum) = (T::zero(), T::zero(), T::zero());
    let (mut n, mut clipped, mut masked) = (0usize, 0usize, 0usize);
    for (i, traj) in batch.trajectories.iter().enumerate() {
        let adv = batch.advantages[i];
        for (t, step) in traj.steps.iter().enumerate() {
            let ctx = batch.current_context(i, t);
            let no_tip = step.ctx.without_tips();
            let lp_cur = logprob(params, &ctx, step.action);
            let lp_plain = if ctx.tip_present { logprob(params, &no_tip, step.action) } else { lp_cur };
            let rho = ratio_from(lp_cur, batch.old_logprobs[i][t]);
            if !rho.is_finite() || !lp_plain.is_finite() {
                return Err(OptimError::NonFinite { what: "importance ratio", traj: i, step: t });
            }
            n += 1;
            dev_sum = dev_sum + (rho - T::one()).abs();
            ent_sum = ent_sum + entropy(params, &no_tip);
            if lp_plain.exp() < cfg.delta {
                masked += 1;
            } else {
                let (term, branch) = clipped_term(rho, adv, cfg.eps_low, cfg.eps_high, cfg.dual_clip_c);
                objective = objective + scale * term;
                match branch {
                    TermBranch::Ratio => accumulate_grad_logprob(params, &ctx, step.action, scale * rho * adv, &mut grad),
                    TermBranch::Clipped | TermBranch::DualClipped => clipped += 1,
                    TermBranch::Zero => {}
                }
            }
            kl_sum = kl_sum
                + if cfg.beta > T::zero() {
                    accumulate_grad_kl(params, reference, &ctx, T::one(), &mut kl_grad)
                } else {
                    kl_to_ref(params, reference, &ctx)?
                };
        }
    }
    let mean_kl = if n > 0 { kl_sum / T::lit(n as f64) } else { T::zero() };
    if cfg.beta > T::zero() && n > 0 {
        objective = objective - cfg.beta * mean_kl;
        grad.add_scaled(&kl_grad, -cfg.beta / T::lit(n as f64));
    }
    if !objective.is_finite() || !grad.is_finite() {
        return Err(OptimError::NonFinite { what: "objective or gradient", traj: batch.trajectories.len(), step: 0 });
    }
    let frac = |k: usize| if n > 0 { k as f64 / n as f64 } else { 0.0 };
    let mean = |x: T| if n > 0 { x.as_f64() / n as f64 } else { 0.0 };
    Ok(Surrogate {
        objective,
        gradient: grad,
        stats: SurrogateStats {
            mean_abs_ratio_dev: mean(dev_sum),
            clip_fraction: frac(clipped),
            mask_fraction: frac(masked),
            kl: mean_kl.as_f64(),
            entropy: mean(ent_sum),
            actions: n,
        },
    })
}

/// One SGD ascent step.
pub fn apply_update<T: Scalar>(
    params: &PolicyParams<T>,
    gradient: &Gradient<T>,
    lr: T,
) -> Result<PolicyParams<T>, PolicyError> {
    if params.dims() != (crate::policy::FeatureDims { base: gradient.w.len(), tip: gradient.v.len() }) {
        return Err(PolicyError::DimensionMismatch("gradient does not match parameters".into()));
    }
    if !gradient.is_finite() {
        return Err(PolicyError::NonFinite { version: params.version });
    }
    let step = |w: &[T], g: &[T]| w.iter().zip(g).map(|(&w, &g)| w + lr * g).collect::<Vec<T>>();
    let out = PolicyParams { w: step(&params.w, &gradient.w), v: step(&params.v, &gradient.v), version: params.version + 1 };
    if !out.is_finite() {
        return Err(PolicyError::NonFinite { version: out.version });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl GroupStats {
    pub fn of<T: Scalar>(xs: impl IntoIterator<Item = T>) -> Self {
        let xs: Vec<f64> = xs.into_iter().map(|x| x.as_f64()).collect();
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        GroupStats { mean, std, min, max }
    }
}

/// One line of the update report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub iteration: u64,
    pub objective: f64,
    pub grad_norm: f64,
    pub mean_abs_ratio_dev: f64,
    pub clip_fraction: f64,
    pub mask_fraction: f64,
    pub kl: f64,
    pub entropy: f64,
    pub rollout_mode: RolloutMode,
    pub update_mode: UpdateMode,
    /// Extrinsic return statistics, one entry per task group.
    pub groups: Vec<GroupStats>,
}

impl UpdateReport {
    pub fn new<T: Scalar>(iteration: u64, batch: &GroupBatch<T>, s: &Surrogate<T>, rollout_mode: RolloutMode) -> Self {
        UpdateReport {
            iteration,
            objective: s.objective.as_f64(),
            grad_norm: s.gradient.norm().as_f64(),
            mean_abs_ratio_dev: s.stats.mean_abs_ratio_dev,
            clip_fraction: s.stats.clip_fraction,
            mask_fraction: s.stats.mask_fraction,
            kl: s.stats.kl,
            entropy: s.stats.entropy,
            rollout_mode,
            update_mode: batch.mode,
            groups: batch.trajectories.chunks(batch.group_size).map(|g| GroupStats::of(g.iter().map(|t| t.return_ext))).collect(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")
    }
}
