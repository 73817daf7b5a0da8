//! Run configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

use crate::envsim::{env_def, EnvError};
use crate::optimizer::{OffPolicyRatio, UpdateConfig};
use crate::policy::FeatureDims;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for {key}: '{value}' ({msg})")]
    Value { key: String, value: String, msg: String },
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("invalid config: {key}: {msg}")]
    Invalid { key: String, msg: String },
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub env: String,
    pub train_variants: Range<u64>,
    pub test_variants: Range<u64>,
    /// Tasks sampled per iteration (B).
    pub batch_tasks: usize,
    /// Rollouts per task (N).
    pub group_size: usize,
    pub max_steps: usize,
    pub iterations: u64,
    /// Probability of a memory-augmented rollout iteration.
    pub p: f64,
    /// Probability of an off-policy update for a memory-augmented iteration.
    pub q: f64,
    pub lambda_int: T,
    pub state_threshold: T,
    pub update: UpdateConfig<T>,
    pub dims: FeatureDims,
    pub seed: u64,
    pub eval_seed: u64,
    /// Evaluate every this many iterations; 0 disables evaluation.
    pub eval_every: u64,
    /// Sample actions during evaluation instead of taking the argmax.
    pub eval_sampled: bool,
    pub eval_episodes: usize,
    /// Initial weight on "finalize the object the task names" (the literal-instruction bias).
    pub prior_literal: T,
    /// Initial strength of following reflections (avoid a failed last action, retry a successful one).
    pub prior_reflection: T,
    /// Save a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            env: crate::envsim::LIGHTBULB_WORLD.to_string(),
            train_variants: 0..5,
            test_variants: 5..25,
            batch_tasks: 4,
            group_size: 8,
            max_steps: 30,
            iterations: 300,
            p: 0.25,
            q: 2.0 / 3.0,
            lambda_int: T::one(),
            state_threshold: T::lit(crate::memory::DEFAULT_STATE_THRESHOLD),
            update: UpdateConfig::default(),
            dims: FeatureDims::default(),
            seed: 0,
            eval_seed: 0,
            eval_every: 1,
            eval_sampled: false,
            eval_episodes: 1,
            prior_literal: T::lit(4.0),
            prior_reflection: T::lit(4.0),
            checkpoint_every: 0,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: std::fmt::Display,
{
    value.parse().map_err(|e: V::Err| ConfigError::Value { key: key.into(), value: value.into(), msg: e.to_string() })
}

fn scalar<T: Scalar>(key: &str, value: &str) -> Result<T, ConfigError> {
    parse::<f64>(key, value).map(T::lit)
}

fn parse_range(key: &str, value: &str) -> Result<Range<u64>, ConfigError> {
    let err = |msg: &str| ConfigError::Value { key: key.into(), value: value.into(), msg: msg.into() };
    let (a, b) = value.split_once("..").ok_or_else(|| err("expected start..end"))?;
    let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| err("bad start"))?, b.trim().parse().map_err(|_| err("bad end"))?);
    if a >= b {
        return Err(err("empty range"));
    }
    Ok(a..b)
}

pub const KEYS: &[&str] = &[
    "env",
    "train_variants",
    "test_variants",
    "batch_tasks",
    "group_size",
    "max_steps",
    "iterations",
    "p",
    "q",
    "lambda_int",
    "state_threshold",
    "eps_low",
    "eps_high",
    "dual_clip_c",
    "beta",
    "delta",
    "lr",
    "eps_std",
    "offpolicy_ratio",
    "dim_base",
    "dim_tip",
    "seed",
    "eval_seed",
    "eval_every",
    "eval_sampled",
    "eval_episodes",
    "prior_literal",
    "prior_reflection",
    "checkpoint_every",
];

impl<T: Scalar> TrainConfig<T> {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "env" => self.env = v.to_string(),
            "train_variants" => self.train_variants = parse_range(key, v)?,
            "test_variants" => self.test_variants = parse_range(key, v)?,
            "batch_tasks" => self.batch_tasks = parse(key, v)?,
            "group_size" => self.group_size = parse(key, v)?,
            "max_steps" => {
                self.max_steps = parse(key, v)?;
                self.update.t_max = self.max_steps;
            }
            "iterations" => self.iterations = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            "q" => self.q = parse(key, v)?,
            "lambda_int" => self.lambda_int = scalar(key, v)?,
            "state_threshold" => self.state_threshold = scalar(key, v)?,
            "eps_low" => self.update.eps_low = scalar(key, v)?,
            "eps_high" => self.update.eps_high = scalar(key, v)?,
            "dual_clip_c" => self.update.dual_clip_c = scalar(key, v)?,
            "beta" => self.update.beta = scalar(key, v)?,
            "delta" => self.update.delta = scalar(key, v)?,
            "lr" => self.update.lr = scalar(key, v)?,
            "eps_std" => self.update.eps_std = scalar(key, v)?,
            "offpolicy_ratio" => self.update.offpolicy_ratio = parse::<OffPolicyRatio>(key, v)?,
            "dim_base" => self.dims.base = parse(key, v)?,
            "dim_tip" => self.dims.tip = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_sampled" => self.eval_sampled = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "prior_literal" => self.prior_literal = scalar(key, v)?,
            "prior_reflection" => self.prior_reflection = scalar(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Current value of one field in its text form.
    pub fn get(&self, key: &str) -> Option<String> {
        let range = |r: &Range<u64>| format!("{}..{}", r.start, r.end);
        Some(match key {
            "env" => self.env.clone(),
            "train_variants" => range(&self.train_variants),
            "test_variants" => range(&self.test_variants),
            "batch_tasks" => self.batch_tasks.to_string(),
            "group_size" => self.group_size.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "iterations" => self.iterations.to_string(),
            "p" => self.p.to_string(),
            "q" => self.q.to_string(),
            "lambda_int" => self.lambda_int.to_string(),
            "state_threshold" => self.state_threshold.to_string(),
            "eps_low" => self.update.eps_low.to_string(),
            "eps_high" => self.update.eps_high.to_string(),
            "dual_clip_c" => self.update.dual_clip_c.to_string(),
            "beta" => self.update.beta.to_string(),
            "delta" => self.update.delta.to_string(),
            "lr" => self.update.lr.to_string(),
            "eps_std" => self.update.eps_std.to_string(),
            "offpolicy_ratio" => self.update.offpolicy_ratio.to_string(),
            "dim_base" => self.dims.base.to_string(),
            "dim_tip" => self.dims.tip.to_string(),
            "seed" => self.seed.to_string(),
            "eval_seed" => self.eval_seed.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_sampled" => self.eval_sampled.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "prior_literal" => self.prior_literal.to_string(),
            "prior_reflection" => self.prior_reflection.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every key with its resolved value, one per line, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::Invalid { key: key.into(), msg });
        let def = match env_def(&self.env) {
            Ok(d) => d,
            Err(EnvError::UnknownEnv(e)) => return bad("env", format!("unknown environment '{e}'")),
            Err(e) => return bad("env", e.to_string()),
        };
        for (key, r) in [("train_variants", &self.train_variants), ("test_variants", &self.test_variants)] {
            if r.start >= r.end || r.end > def.variants {
                return bad(key, format!("{}..{} not within 0..{}", r.start, r.end, def.variants));
            }
        }
        if self.train_variants.start < self.test_variants.end && self.test_variants.start < self.train_variants.end {
            return bad("test_variants", "overlaps train_variants".into());
        }
        if self.batch_tasks == 0 {
            return bad("batch_tasks", "must be positive".into());
        }
        if self.group_size < 2 {
            return bad("group_size", "must be at least 2".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps", "must be positive".into());
        }
        for (key, x) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&x) {
                return bad(key, format!("{x} outside [0, 1]"));
            }
        }
        if !(self.lambda_int >= T::zero()) || !self.lambda_int.is_finite() {
            return bad("lambda_int", "must be finite and >= 0".into());
        }
        if !(self.state_threshold > T::zero() && self.state_threshold <= T::one()) {
            return bad("state_threshold", "must lie in (0, 1]".into());
        }
        if !self.prior_literal.is_finite() || !self.prior_reflection.is_finite() {
            return bad("prior_literal", "priors must be finite".into());
        }
        if self.dims.base == 0 || self.dims.tip == 0 {
            return bad("dim_base", "feature dimensions must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes", "must be positive".into());
        }
        if self.update.t_max != self.max_steps {
            return bad("max_steps", "update horizon disagrees with max_steps".into());
        }
        self.update.validate().map_err(|e| ConfigError::Invalid { key: "update".into(), msg: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::<f64>::default();
        c.set("p", "0.4").unwrap();
        c.set("offpolicy_ratio", "alg1").unwrap();
        c.set("test_variants", "10..20").unwrap();
        let back = TrainConfig::<f64>::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_has_a_value() {
        let c = TrainConfig::<f64>::default();
        for k in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
        assert_eq!(c.to_kv().lines().count(), KEYS.len());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainConfig::<f64>::from_kv("# run\n\nseed = 7  # master\niterations=12\n").unwrap();
        assert_eq!((c.seed, c.iterations), (7, 12));
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = TrainConfig::<f64>::default();
        assert_eq!(c.set("bogus", "1"), Err(ConfigError::UnknownKey("bogus".into())));
        assert!(matches!(c.set("lr", "fast"), Err(ConfigError::Value { ref key, .. }) if key == "lr"));
        assert!(matches!(TrainConfig::<f64>::from_kv("p = 1.5"), Err(ConfigError::Invalid { ref key, .. }) if key == "p"));
        assert!(matches!(TrainConfig::<f64>::from_kv("seed 3"), Err(ConfigError::Syntax { line: 1 })));
    }

    #[test]
    fn overlapping_variants_rejected() {
        let r = TrainConfig::<f64>::from_kv("train_variants = 0..6\ntest_variants = 5..25");
        assert!(matches!(r, Err(ConfigError::Invalid { ref key, .. }) if key == "test_variants"));
        assert!(TrainConfig::<f64>::from_kv("test_variants = 5..26").is_err());
        assert!(TrainConfig::<f64>::from_kv("env = nowhere").is_err());
    }
}
