//! Softmax-linear policy recomputed term by term.

use empo_core::envsim::ActionId;
use empo_core::policy::{ContextFeatures, PolicyParams};

fn score(params: &PolicyParams<f64>, ctx: &ContextFeatures<f64>, a: usize) -> f64 {
    let mut s = 0.0;
    for &(i, x) in &ctx.base[a] {
        s += params.w[i as usize] * x;
    }
    if ctx.tip_present {
        for &(i, x) in &ctx.tip[a] {
            s += params.v[i as usize] * x;
        }
    }
    s
}

/// Action probabilities, shifted by the maximum score before exponentiating.
pub fn naive_probs(params: &PolicyParams<f64>, ctx: &ContextFeatures<f64>) -> Vec<f64> {
    let scores: Vec<f64> = (0..ctx.base.len()).map(|a| score(params, ctx, a)).collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn naive_logprob(params: &PolicyParams<f64>, ctx: &ContextFeatures<f64>, a: ActionId) -> f64 {
    let scores: Vec<f64> = (0..ctx.base.len()).map(|b| score(params, ctx, b)).collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    scores[a.0] - m - z.ln()
}

/// Central differences of `f` in every coordinate of `w` then `v`.
pub fn central_difference(
    params: &PolicyParams<f64>,
    h: f64,
    f: impl Fn(&PolicyParams<f64>) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut p = params.clone();
    let mut gw = vec![0.0; p.w.len()];
    for i in 0..p.w.len() {
        let x = p.w[i];
        p.w[i] = x + h;
        let up = f(&p);
        p.w[i] = x - h;
        let down = f(&p);
        p.w[i] = x;
        gw[i] = (up - down) / (2.0 * h);
    }
    let mut gv = vec![0.0; p.v.len()];
    for i in 0..p.v.len() {
        let x = p.v[i];
        p.v[i] = x + h;
        let up = f(&p);
        p.v[i] = x - h;
        let down = f(&p);
        p.v[i] = x;
        gv[i] = (up - down) / (2.0 * h);
    }
    (gw, gv)
}
