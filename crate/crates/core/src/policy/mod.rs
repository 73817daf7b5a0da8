//! Softmax-linear policy over hashed features.
//!
//! `score(a) = w·φ(a) + v·ψ(a)`, `log π(a) = score(a) − logsumexp(scores)`.
//! The tip block `v` only participates when the context carries tips, so a
//! context without tips and one with an all-zero tip channel score identically.

mod checkpoint;
pub mod features;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_params, read_params, save_params, write_params};
pub use features::{featurize, ContextFeatures, FeatureDims, Sparse};

use crate::envsim::ActionId;
use crate::hashing::FEATURE_SALT;
use crate::scalar::{logsumexp, Scalar};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite parameters after update (version {version})")]
    NonFinite { version: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct PolicyParams<T> {
    pub w: Vec<T>,
    pub v: Vec<T>,
    pub version: u64,
}

impl<T: Scalar> PolicyParams<T> {
    pub fn zeros(dims: FeatureDims) -> Self {
        PolicyParams { w: vec![T::zero(); dims.base], v: vec![T::zero(); dims.tip], version: 0 }
    }

    pub fn dims(&self) -> FeatureDims {
        FeatureDims { base: self.w.len(), tip: self.v.len() }
    }

    pub fn salt(&self) -> u64 {
        FEATURE_SALT
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Dense gradient over both weight blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub w: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros(dims: FeatureDims) -> Self {
        Gradient { w: vec![T::zero(); dims.base], v: vec![T::zero(); dims.tip] }
    }

    pub fn norm(&self) -> T {
        self.w.iter().chain(&self.v).map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn add_scaled(&mut self, other: &Gradient<T>, scale: T) {
        for (a, &b) in self.w.iter_mut().zip(&other.w) {
            *a = *a + scale * b;
        }
        for (a, &b) in self.v.iter_mut().zip(&other.v) {
            *a = *a + scale * b;
        }
    }
}

fn dot<T: Scalar>(weights: &[T], f: &Sparse<T>) -> T {
    f.iter().fold(T::zero(), |acc, &(i, x)| acc + weights[i as usize] * x)
}

/// Raw scores for every admissible action.
pub fn scores<T: Scalar>(params: &PolicyParams<T>, ctx: &ContextFeatures<T>) -> Vec<T> {
    (0..ctx.num_actions())
        .map(|a| {
            let mut s = dot(&params.w, &ctx.base[a]);
            if ctx.tip_present {
                s = s + dot(&params.v, &ctx.tip[a]);
            }
            s
        })
        .collect()
}

/// Log-probabilities of every admissible action.
pub fn log_probs<T: Scalar>(params: &PolicyParams<T>, ctx: &ContextFeatures<T>) -> Vec<T> {
    let s = scores(params, ctx);
    let lse = logsumexp(&s);
    s.into_iter().map(|x| x - lse).collect()
}

pub fn logprob<T: Scalar>(params: &PolicyParams<T>, ctx: &ContextFeatures<T>, a: ActionId) -> T {
    log_probs(params, ctx)[a.0]
}

/// Draws an action by inverse CDF and returns it with its exact log-probability.
pub fn sample_action<T: Scalar, R: Rng + ?Sized>(
    params: &PolicyParams<T>,
    ctx: &ContextFeatures<T>,
    rng: &mut R,
) -> (ActionId, T) {
    let lp = log_probs(params, ctx);
    let u = T::lit(rng.gen::<f64>());
    let mut acc = T::zero();
    let mut pick = None;
    for (i, &l) in lp.iter().enumerate() {
        let p = l.exp();
        if p > T::zero() {
            pick = Some(i);
        }
        acc = acc + p;
        if u < acc && p > T::zero() {
            return (ActionId(i), l);
        }
    }
    // rounding left u above the accumulated mass
    let i = pick.unwrap_or(0);
    (ActionId(i), lp[i])
}

/// Highest-scoring action, lowest id on ties.
pub fn greedy_action<T: Scalar>(params: &PolicyParams<T>, ctx: &ContextFeatures<T>) -> ActionId {
    let s = scores(params, ctx);
    let mut best = 0;
    for (i, &x) in s.iter().enumerate() {
        if x > s[best] {
            best = i;
        }
    }
    ActionId(best)
}

/// Adds `scale · ∇ log π(a)` into `grad`.
pub fn accumulate_grad_logprob<T: Scalar>(
    params: &PolicyParams<T>,
    ctx: &ContextFeatures<T>,
    a: ActionId,
    scale: T,
    grad: &mut Gradient<T>,
) {
    let lp = log_probs(params, ctx);
    for (b, &l) in lp.iter().enumerate() {
        let mut coef = -l.exp();
        if b == a.0 {
            coef = coef + T::one();
        }
        let coef = coef * scale;
        for &(i, x) in &ctx.base[b] {
            grad.w[i as usize] = grad.w[i as usize] + coef * x;
        }
        if ctx.tip_present {
            for &(i, x) in &ctx.tip[b] {
                grad.v[i as usize] = grad.v[i as usize] + coef * x;
            }
        }
    }
}

/// `∇ log π(a) = f(a) − Σ_b π(b) f(b)` per weight block.
pub fn grad_logprob<T: Scalar>(params: &PolicyParams<T>, ctx: &ContextFeatures<T>, a: ActionId) -> Gradient<T> {
    let mut g = Gradient::zeros(params.dims());
    accumulate_grad_logprob(params, ctx, a, T::one(), &mut g);
    g
}

/// Shannon entropy in nats.
pub fn entropy<T: Scalar>(params: &PolicyParams<T>, ctx: &ContextFeatures<T>) -> T {
    let h: T = log_probs(params, ctx)
        .into_iter()
        .map(|l| if l.is_infinite() { T::zero() } else { -l.exp() * l })
        .sum();
    h.max(T::zero())
}

/// Exact categorical KL(π_params ‖ π_ref) at one state.
pub fn kl_to_ref<T: Scalar>(
    params: &PolicyParams<T>,
    reference: &PolicyParams<T>,
    ctx: &ContextFeatures<T>,
) -> Result<T, PolicyError> {
    if params.dims() != reference.dims() {
        return Err(PolicyError::DimensionMismatch(format!("{:?} vs {:?}", params.dims(), reference.dims())));
    }
    let lp = log_probs(params, ctx);
    let lr = log_probs(reference, ctx);
    let kl: T = lp
        .iter()
        .zip(&lr)
        .map(|(&p, &r)| if p.is_infinite() { T::zero() } else { p.exp() * (p - r) })
        .sum();
    Ok(kl.max(T::zero()))
}

/// Adds `scale · ∇ KL(π_params ‖ π_ref)` into `grad`.
pub(crate) fn accumulate_grad_kl<T: Scalar>(
    params: &PolicyParams<T>,
    reference: &PolicyParams<T>,
    ctx: &ContextFeatures<T>,
    scale: T,
    grad: &mut Gradient<T>,
) -> T {
    let lp = log_probs(params, ctx);
    let lr = log_probs(reference, ctx);
    let kl: T = lp.iter().zip(&lr).map(|(&p, &r)| p.exp() * (p - r)).sum();
    // ∂KL/∂score_b = π_b (log π_b − log r_b − KL)
    for b in 0..lp.len() {
        let coef = scale * lp[b].exp() * (lp[b] - lr[b] - kl);
        for &(i, x) in &ctx.base[b] {
            grad.w[i as usize] = grad.w[i as usize] + coef * x;
        }
        if ctx.tip_present {
            for &(i, x) in &ctx.tip[b] {
                grad.v[i as usize] = grad.v[i as usize] + coef * x;
            }
        }
    }
    kl
}
