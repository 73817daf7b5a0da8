//! Plain REINFORCE-with-advantage gradient of the group-relative objective
//! at ρ = 1, written out without clipping, masking or KL.

use empo_core::optimizer::GroupBatch;
use empo_core::policy::{ContextFeatures, PolicyParams};

use crate::policy::naive_probs;

/// `(R − mean) / std` per group with the population std; all zero when the
/// std is below `eps_std`.
pub fn oracle_advantages(returns: &[f64], group_size: usize, eps_std: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(returns.len());
    for g in returns.chunks(group_size) {
        let n = g.len() as f64;
        let mean = g.iter().sum::<f64>() / n;
        let var = g.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        for r in g {
            out.push(if std < eps_std { 0.0 } else { (r - mean) / std });
        }
    }
    out
}

fn add_grad_logprob(params: &PolicyParams<f64>, ctx: &ContextFeatures<f64>, a: usize, scale: f64, gw: &mut [f64], gv: &mut [f64]) {
    let probs = naive_probs(params, ctx);
    for (b, pb) in probs.iter().enumerate() {
        let coef = if b == a { 1.0 - pb } else { -pb };
        for &(i, x) in &ctx.base[b] {
            gw[i as usize] += scale * coef * x;
        }
        if ctx.tip_present {
            for &(i, x) in &ctx.tip[b] {
                gv[i as usize] += scale * coef * x;
            }
        }
    }
}

/// `1/(B·N·t_max) · Σ_i A_i Σ_t ∇ log π(a_t | ctx_t)` with advantages
/// recomputed from the trajectories' total returns.
pub fn oracle_grpo_step(
    batch: &GroupBatch<f64>,
    params: &PolicyParams<f64>,
    t_max: usize,
    eps_std: f64,
) -> (Vec<f64>, Vec<f64>) {
    let returns: Vec<f64> = batch.trajectories.iter().map(|t| t.return_total).collect();
    let adv = oracle_advantages(&returns, batch.group_size, eps_std);
    let scale = 1.0 / (batch.trajectories.len() * t_max) as f64;
    let mut gw = vec![0.0; params.w.len()];
    let mut gv = vec![0.0; params.v.len()];
    for (traj, a) in batch.trajectories.iter().zip(&adv) {
        for s in &traj.steps {
            add_grad_logprob(params, &s.ctx, s.action.0, scale * a, &mut gw, &mut gv);
        }
    }
    (gw, gv)
}
