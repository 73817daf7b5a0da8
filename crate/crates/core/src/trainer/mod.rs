//! The training loop: rollouts, tips, intrinsic rewards, one update per
//! iteration, periodic evaluation, checkpoints.

mod checkpoint;
pub mod config;
pub mod eval;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{checkpoint_iteration, RngCursors};
pub use config::{ConfigError, TrainConfig};
pub use eval::{adapt, adapt_trial, evaluate, evaluation_episodes, mean, median, AdaptError, EvalPolicy, EvalSummary, TrialSummary};

use crate::envsim::{EnvError, TaskSpec};
use crate::hashing::splitmix64;
use crate::memory::{MemoryError, NoveltyStore, TipMemory};
use crate::optimizer::{
    apply_update, prepare_old_logprobs, select_update_mode, surrogate_objective, GroupBatch, OptimError, UpdateMode,
    UpdateReport,
};
use crate::policy::features::{base_bucket, tip_bucket};
use crate::policy::{PolicyError, PolicyParams};
use crate::rollout::{
    assign_intrinsic, dump_trajectories, run_group, sample_rollout_mode, RolloutConfig, RolloutError, RolloutMode,
    TemplateTips, TipGenerator, TipMemories,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("training diverged at iteration {iteration}: {detail}{}", dump.as_ref().map(|d| format!(" (state dumped to {})", d.display())).unwrap_or_default())]
    Diverged { iteration: u64, detail: String, dump: Option<PathBuf> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    /// Environment steps taken by training rollouts so far.
    pub env_steps: u64,
    pub train_mean_return: f64,
    pub train_median_return: f64,
    pub train_success_rate: f64,
    pub train_mean_return_total: f64,
    pub eval_mean_return: Option<f64>,
    pub eval_median_return: Option<f64>,
    pub eval_success_rate: Option<f64>,
    pub entropy: f64,
    pub mask_fraction: f64,
    pub clip_fraction: f64,
    pub memory_rollout: bool,
    pub off_policy_update: bool,
    pub memory_size: usize,
    pub novelty_states: usize,
}

impl MetricsRecord {
    pub fn write_jsonl<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, self)?;
        out.write_all(b"\n")
    }
}

/// Everything one iteration produced.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub metrics: MetricsRecord,
    pub report: UpdateReport,
}

pub(crate) struct Streams {
    pub task: ChaCha8Rng,
    pub mode: ChaCha8Rng,
    pub action: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl Streams {
    /// Independent streams fanned out from the master seed; the eval stream
    /// only depends on the eval seed.
    pub fn new(seed: u64, eval_seed: u64) -> Streams {
        let mut s = seed;
        let task = ChaCha8Rng::seed_from_u64(splitmix64(&mut s));
        let mode = ChaCha8Rng::seed_from_u64(splitmix64(&mut s));
        let action = ChaCha8Rng::seed_from_u64(splitmix64(&mut s));
        let mut e = eval_seed ^ 0x6576_616c_0000_0000;
        let eval = ChaCha8Rng::seed_from_u64(splitmix64(&mut e));
        Streams { task, mode, action, eval }
    }
}

/// Starting parameters: zeros plus the two configured priors.
pub fn initial_params<T: Scalar>(cfg: &TrainConfig<T>) -> PolicyParams<T> {
    let mut p = PolicyParams::zeros(cfg.dims);
    let lit = base_bucket(&["ta-all", "focus"], cfg.dims);
    p.w[lit] = p.w[lit] + cfg.prior_literal;
    let r = cfg.prior_reflection;
    let follow = [(["tl", "fail"], -T::one()), (["tl", "done"], T::one())]
        .into_iter()
        .chain(["fail", "stuck", "done"].map(|s| (["tm", s], T::one())));
    for (parts, sign) in follow {
        let i = tip_bucket(&parts, cfg.dims);
        p.v[i] = p.v[i] + sign * r;
    }
    p
}

pub struct Trainer<T: Scalar> {
    cfg: TrainConfig<T>,
    params: PolicyParams<T>,
    reference: PolicyParams<T>,
    mems: TipMemories<T>,
    novelty: NoveltyStore<T>,
    streams: Streams,
    iteration: u64,
    env_steps: u64,
    tips: Box<dyn TipGenerator<T>>,
    dump_dir: Option<PathBuf>,
}

impl<T: Scalar + Serialize + serde::de::DeserializeOwned> Trainer<T> {
    /// Fresh run: initial parameters, empty buffers.
    pub fn new(cfg: TrainConfig<T>) -> Result<Self, TrainError> {
        cfg.validate()?;
        let params = initial_params(&cfg);
        Ok(Trainer {
            reference: params.clone(),
            params,
            mems: TipMemories::new(),
            novelty: NoveltyStore::new(cfg.state_threshold),
            streams: Streams::new(cfg.seed, cfg.eval_seed),
            iteration: 0,
            env_steps: 0,
            tips: Box::new(TemplateTips),
            dump_dir: None,
            cfg,
        })
    }

    pub fn with_tip_generator(mut self, tips: Box<dyn TipGenerator<T>>) -> Self {
        self.tips = tips;
        self
    }

    /// Where to write the diagnostic dump if training diverges.
    pub fn set_dump_dir(&mut self, dir: Option<PathBuf>) {
        self.dump_dir = dir;
    }

    pub fn config(&self) -> &TrainConfig<T> {
        &self.cfg
    }

    pub fn params(&self) -> &PolicyParams<T> {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams<T> {
        &self.reference
    }

    pub fn memories(&self) -> &TipMemories<T> {
        &self.mems
    }

    pub fn novelty(&self) -> &NoveltyStore<T> {
        &self.novelty
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Changes the iteration budget, e.g. to extend a resumed run.
    pub fn with_iterations(mut self, iterations: u64) -> Self {
        self.cfg.iterations = iterations;
        self
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig { group_size: self.cfg.group_size, max_steps: self.cfg.max_steps, dims: self.cfg.dims }
    }

    /// Memory-free evaluation on the configured test variants.
    pub fn evaluate_now(&mut self) -> Result<EvalSummary, TrainError> {
        let policy = if self.cfg.eval_sampled {
            EvalPolicy::Sampled { seed: self.streams.eval.gen() }
        } else {
            EvalPolicy::Greedy
        };
        Ok(evaluate(
            &self.params,
            &self.cfg.env,
            self.cfg.test_variants.clone(),
            None,
            self.cfg.eval_episodes,
            policy,
            self.cfg.max_steps,
        )?)
    }

    /// One full iteration.
    pub fn step(&mut self) -> Result<IterationOutput, TrainError> {
        let cfg = &self.cfg;
        let params_old = self.params.clone();
        let mode = sample_rollout_mode(cfg.p, &mut self.streams.mode)?;
        let update_mode = select_update_mode(cfg.q, &mut self.streams.mode, mode)?;
        let tasks = (0..cfg.batch_tasks)
            .map(|_| TaskSpec::new(&cfg.env, self.streams.task.gen_range(cfg.train_variants.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut trajs = run_group(&tasks, &params_old, &self.mems, mode, &self.rollout_config(), &mut self.streams.action)?;

        let mem = self.mems.entry(cfg.env.clone()).or_insert_with(TipMemory::new);
        for t in &trajs {
            mem.add(self.tips.generate(t)?)?;
        }
        for t in &mut trajs {
            assign_intrinsic(t, &mut self.novelty, cfg.lambda_int);
        }

        let ext: Vec<f64> = trajs.iter().map(|t| t.return_ext.as_f64()).collect();
        let total: Vec<f64> = trajs.iter().map(|t| t.return_total.as_f64()).collect();
        let successes = trajs.iter().filter(|t| t.success).count();
        let steps: usize = trajs.iter().map(|t| t.steps.len()).sum();

        let batch = GroupBatch::new(trajs, cfg.group_size, cfg.update.eps_std)?;
        let batch = prepare_old_logprobs(batch, update_mode, &params_old, cfg.update.offpolicy_ratio)?;
        let next = surrogate_objective(&batch, &self.params, &self.reference, &cfg.update)
            .map_err(TrainError::from)
            .and_then(|s| {
                let p = apply_update(&self.params, &s.gradient, cfg.update.lr)?;
                Ok((s, p))
            });
        let (surrogate, params) = match next {
            Ok(x) => x,
            Err(e @ (TrainError::Optim(OptimError::NonFinite { .. }) | TrainError::Policy(PolicyError::NonFinite { .. }))) => {
                let dump = self.dump_divergence(&batch, &params_old)?;
                return Err(TrainError::Diverged { iteration: self.iteration + 1, detail: e.to_string(), dump });
            }
            Err(e) => return Err(e),
        };
        self.params = params;
        self.iteration += 1;
        self.env_steps += steps as u64;

        let eval = if self.cfg.eval_every > 0 && self.iteration % self.cfg.eval_every == 0 {
            Some(self.evaluate_now()?)
        } else {
            None
        };
        let report = UpdateReport::new(self.iteration, &batch, &surrogate, mode);
        let metrics = MetricsRecord {
            iteration: self.iteration,
            env_steps: self.env_steps,
            train_mean_return: mean(&ext),
            train_median_return: median(&ext),
            train_success_rate: successes as f64 / ext.len() as f64,
            train_mean_return_total: mean(&total),
            eval_mean_return: eval.as_ref().map(|e| e.mean_return),
            eval_median_return: eval.as_ref().map(|e| e.median_return),
            eval_success_rate: eval.as_ref().map(|e| e.success_rate),
            entropy: surrogate.stats.entropy,
            mask_fraction: surrogate.stats.mask_fraction,
            clip_fraction: surrogate.stats.clip_fraction,
            memory_rollout: mode == RolloutMode::MemoryAugmented,
            off_policy_update: update_mode == UpdateMode::OffPolicy,
            memory_size: self.mems.values().map(TipMemory::len).sum(),
            novelty_states: self.novelty.len(),
        };
        Ok(IterationOutput { metrics, report })
    }

    fn dump_divergence(&self, batch: &GroupBatch<T>, params_old: &PolicyParams<T>) -> Result<Option<PathBuf>, TrainError> {
        let Some(dir) = &self.dump_dir else {
            return Ok(None);
        };
        let dir = dir.join(format!("diverged-{}", self.iteration + 1));
        std::fs::create_dir_all(&dir)?;
        dump_trajectories(&batch.trajectories, std::io::BufWriter::new(std::fs::File::create(dir.join("trajectories.jsonl"))?))?;
        crate::policy::save_params(params_old, &dir.join("params_old.txt"))?;
        std::fs::write(dir.join("config.kv"), self.cfg.to_kv())?;
        Ok(Some(dir))
    }

    /// Runs until the configured iteration count, streaming metrics and
    /// optional update reports, checkpointing into `ckpt_dir` at the
    /// configured cadence.
    pub fn run(
        &mut self,
        metrics: &mut dyn Write,
        mut reports: Option<&mut dyn Write>,
        ckpt_dir: Option<&Path>,
    ) -> Result<(), TrainError> {
        while !self.is_finished() {
            let out = self.step()?;
            out.metrics.write_jsonl(metrics)?;
            if let Some(r) = reports.as_deref_mut() {
                out.report.write_jsonl(&mut *r)?;
            }
            if let Some(dir) = ckpt_dir {
                if self.cfg.checkpoint_every > 0 && self.iteration % self.cfg.checkpoint_every == 0 {
                    metrics.flush()?;
                    self.save_checkpoint(&dir.join(format!("iter-{:06}", self.iteration)))?;
                }
            }
        }
        metrics.flush()?;
        Ok(())
    }
}

/// Trains from scratch, writing metrics to `metrics`; returns the finished trainer.
pub fn train<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    cfg: TrainConfig<T>,
    metrics: &mut dyn Write,
) -> Result<Trainer<T>, TrainError> {
    let mut t = Trainer::new(cfg)?;
    t.run(metrics, None, None)?;
    Ok(t)
}

#[cfg(test)]
mod tests;
