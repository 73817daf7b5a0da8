//! Subcommand bodies.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use anyhow::{anyhow, bail, Context as _, Result};
use rayon::prelude::*;

use empo_core::rollout::TemplateTips;
use empo_core::trainer::{self, ConfigError, EvalPolicy, MetricsRecord};
use empo_core::{Config, Memory, Runner};

use crate::manifest::{resolve_out, RunManifest};
use crate::{AblateArgs, AdaptArgs, Algo, EvalArgs, RunArgs, TrainArgs};

/// Command-line spelling of a config key.
pub fn flag_for(key: &str) -> String {
    match key {
        "iterations" => "--iters".into(),
        "p" | "q" | "delta" | "beta" | "lr" | "seed" | "env" | "lambda_int" | "checkpoint_every" => {
            format!("--{}", key.replace('_', "-"))
        }
        other => format!("config key '{other}'"),
    }
}

fn config_error(e: ConfigError) -> anyhow::Error {
    match e {
        ConfigError::Invalid { key, msg } => anyhow!("invalid value for {}: {msg}", flag_for(&key)),
        ConfigError::Value { key, value, msg } => anyhow!("invalid value for {}: '{value}' ({msg})", flag_for(&key)),
        other => anyhow!(other),
    }
}

/// Config file, then flags, then the algorithm's forced settings.
pub fn build_config(args: &RunArgs) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_kv(&text).map_err(config_error)?;
    }
    let flags: [(&str, Option<String>); 10] = [
        ("env", args.env.clone()),
        ("p", args.p.map(|x| x.to_string())),
        ("q", args.q.map(|x| x.to_string())),
        ("delta", args.delta.map(|x| x.to_string())),
        ("lambda_int", args.lambda_int.map(|x| x.to_string())),
        ("beta", args.beta.map(|x| x.to_string())),
        ("lr", args.lr.map(|x| x.to_string())),
        ("seed", args.seed.map(|x| x.to_string())),
        ("iterations", args.iters.map(|x| x.to_string())),
        ("checkpoint_every", args.checkpoint_every.map(|x| x.to_string())),
    ];
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{kv}'"))?;
        cfg.set(k.trim(), v.trim()).map_err(config_error)?;
    }
    for (k, v) in flags.iter() {
        if let Some(v) = v {
            cfg.set(k, v).map_err(config_error)?;
        }
    }
    if args.algo == Algo::Grpo {
        for (flag, v) in [("--p", args.p), ("--lambda-int", args.lambda_int)] {
            if v.is_some_and(|x| x != 0.0) {
                bail!("{flag} conflicts with --algo grpo, which fixes it at 0");
            }
        }
        cfg.p = 0.0;
        cfg.lambda_int = 0.0;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn parse_range(s: &str, flag: &str) -> Result<Range<u64>> {
    let (a, b) = s.split_once("..").ok_or_else(|| anyhow!("{flag} expects a..b, got '{s}'"))?;
    let r = a.trim().parse::<u64>().map_err(|e| anyhow!("{flag}: {e}"))?..b.trim().parse::<u64>().map_err(|e| anyhow!("{flag}: {e}"))?;
    if r.is_empty() {
        bail!("{flag}: empty range '{s}'");
    }
    Ok(r)
}

/// Keeps the metrics lines at or before `iteration`.
fn truncate_jsonl(path: &Path, iteration: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let v: serde_json::Value = serde_json::from_str(&line).with_context(|| format!("parsing {}", path.display()))?;
        if v.get("iteration").and_then(|i| i.as_u64()).is_some_and(|i| i <= iteration) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}

fn open_append(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = std::fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    Ok(BufWriter::new(f))
}

/// Trains into `out`, writing the manifest first.
pub fn run_training(mut trainer: Runner, out: &Path, command: &str, resumed: bool) -> Result<Runner> {
    let manifest = RunManifest::new(command)
        .with_config(trainer.config())
        .output("config", "config.kv")
        .output("metrics", "metrics.jsonl")
        .output("updates", "updates.jsonl")
        .output("checkpoints", "checkpoints")
        .output("final", "final");
    manifest.write(out)?;
    std::fs::write(out.join("config.kv"), trainer.config().to_kv())?;
    let (metrics_path, updates_path) = (out.join("metrics.jsonl"), out.join("updates.jsonl"));
    if resumed {
        truncate_jsonl(&metrics_path, trainer.iteration())?;
        truncate_jsonl(&updates_path, trainer.iteration())?;
    }
    let mut metrics = open_append(&metrics_path, resumed)?;
    let mut updates = open_append(&updates_path, resumed)?;
    trainer.set_dump_dir(Some(out.to_path_buf()));
    trainer.run(&mut metrics, Some(&mut updates), Some(&out.join("checkpoints")))?;
    metrics.flush()?;
    updates.flush()?;
    trainer.save_checkpoint(&out.join("final"))?;
    Ok(trainer)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let out = resolve_out(&args.out);
    let (trainer, resumed) = match &args.resume {
        Some(dir) => {
            let mut t = Runner::load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
            if let Some(iters) = args.run.iters {
                t = t.with_iterations(iters);
            }
            (t, true)
        }
        None => (Runner::new(build_config(&args.run)?)?, false),
    };
    let t = run_training(trainer, &out, "train", resumed)?;
    let c = t.config();
    let last = trainer::evaluate(t.params(), &c.env, c.test_variants.clone(), None, 1, EvalPolicy::Greedy, c.max_steps)?;
    println!(
        "trained {} iterations on {}: eval mean return {:.3}, success {:.3}; outputs in {}",
        t.iteration(),
        t.config().env,
        last.mean_return,
        last.success_rate,
        out.display()
    );
    Ok(())
}

/// Config and parameters of a checkpoint directory.
fn load_checkpoint(dir: &Path) -> Result<(Config, empo_core::Params)> {
    let kv = std::fs::read_to_string(dir.join("config.kv"))
        .with_context(|| format!("missing or unreadable checkpoint {}", dir.display()))?;
    let cfg = Config::from_kv(&kv).map_err(|e| anyhow!("corrupt checkpoint config in {}: {e}", dir.display()))?;
    let params = empo_core::policy::load_params(&dir.join("params.txt"))
        .map_err(|e| anyhow!("corrupt checkpoint parameters in {}: {e}", dir.display()))?;
    Ok((cfg, params))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let out = resolve_out(&args.out);
    let (cfg, params) = load_checkpoint(&args.checkpoint)?;
    let env = args.env.clone().unwrap_or(cfg.env.clone());
    let variants = match &args.variants {
        Some(s) => parse_range(s, "--variants")?,
        None => cfg.test_variants.clone(),
    };
    if args.episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let mut manifest = RunManifest::new("eval").with_config(&cfg).output("summary", "eval.json");
    if args.dump_trajectories {
        manifest = manifest.output("trajectories", "trajectories.jsonl");
    }
    manifest.config.insert("eval.env".into(), env.clone());
    manifest.config.insert("eval.variants".into(), format!("{}..{}", variants.start, variants.end));
    manifest.config.insert("eval.use_memory".into(), args.use_memory.to_string());
    manifest.write(&out)?;
    let memory = if args.use_memory {
        let path = args.checkpoint.join("memory").join(format!("{env}.txt"));
        Some(if path.exists() { Memory::load(&path)? } else { Memory::new() })
    } else {
        None
    };
    let policy = match args.sampled_seed {
        Some(seed) => EvalPolicy::Sampled { seed },
        None => EvalPolicy::Greedy,
    };
    let trajs = trainer::evaluation_episodes(&params, &env, variants.clone(), memory.as_ref(), args.episodes, policy, cfg.max_steps)?;
    if args.dump_trajectories {
        empo_core::rollout::dump_trajectories(&trajs, BufWriter::new(File::create(out.join("trajectories.jsonl"))?))?;
    }
    let s = trainer::evaluate(&params, &env, variants, memory.as_ref(), args.episodes, policy, cfg.max_steps)?;
    if !s.mean_return.is_finite() {
        bail!("evaluation produced a non-finite return");
    }
    let json = serde_json::to_string_pretty(&s)?;
    std::fs::write(out.join("eval.json"), json.clone() + "\n")?;
    println!("{json}");
    Ok(())
}

pub fn adapt(args: AdaptArgs) -> Result<()> {
    let out = resolve_out(&args.out);
    let (cfg, params) = load_checkpoint(&args.checkpoint)?;
    empo_core::envsim::env_def(&args.env).map_err(|e| anyhow!("--env: {e}"))?;
    let variants = match &args.variants {
        Some(s) => parse_range(s, "--variants")?,
        None => cfg.test_variants.clone(),
    };
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let mut manifest = RunManifest::new("adapt")
        .with_config(&cfg)
        .output("curve", "adapt.csv")
        .output("memory", "memory.txt");
    manifest.config.insert("adapt.env".into(), args.env.clone());
    manifest.config.insert("adapt.trials".into(), args.trials.to_string());
    manifest.config.insert("adapt.variants".into(), format!("{}..{}", variants.start, variants.end));
    manifest.write(&out)?;
    let mem_path = out.join("memory.txt");
    let mut csv = BufWriter::new(File::create(out.join("adapt.csv"))?);
    writeln!(csv, "trial,mean_return,success_rate,memory_size")?;
    let version = params.version;
    for k in 0..args.trials {
        // memory round-trips through its snapshot between trials
        let mut mem = if k == 0 { Memory::new() } else { Memory::load(&mem_path)? };
        let t = trainer::adapt_trial(&params, &args.env, variants.clone(), k, &mut mem, &TemplateTips, cfg.max_steps)?;
        mem.save(&mem_path)?;
        if !t.mean_return.is_finite() {
            bail!("trial {k} produced a non-finite return");
        }
        writeln!(csv, "{},{},{},{}", t.trial, t.mean_return, t.success_rate, t.memory_size)?;
        println!("trial {k}: mean return {:.3}, success {:.3}", t.mean_return, t.success_rate);
    }
    csv.flush()?;
    assert_eq!(params.version, version);
    Ok(())
}

fn sweep_key(s: &str) -> Result<&'static str> {
    match s {
        "p" => Ok("p"),
        "q" => Ok("q"),
        "lambda-int" | "lambda_int" => Ok("lambda_int"),
        other => bail!("--sweep must be p, q or lambda-int, got '{other}'"),
    }
}

/// Summary of one finished sweep cell from its metrics stream.
struct CellSummary {
    final_eval_return: f64,
    final_eval_success: f64,
    final_train_return: f64,
    mean_entropy: f64,
}

const SUMMARY_WINDOW: usize = 50;

fn summarize_cell(metrics: &Path) -> Result<CellSummary> {
    let recs: Vec<MetricsRecord> = BufReader::new(File::open(metrics)?)
        .lines()
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect::<Result<_>>()?;
    let tail = &recs[recs.len().saturating_sub(SUMMARY_WINDOW)..];
    let avg = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| {
        let xs: Vec<f64> = tail.iter().filter_map(f).collect();
        trainer::mean(&xs)
    };
    Ok(CellSummary {
        final_eval_return: avg(&|m| m.eval_mean_return),
        final_eval_success: avg(&|m| m.eval_success_rate),
        final_train_return: avg(&|m| Some(m.train_mean_return)),
        mean_entropy: avg(&|m| Some(m.entropy)),
    })
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let key = sweep_key(&args.sweep)?;
    if args.values.is_empty() {
        bail!("--values is empty: nothing to sweep");
    }
    if args.seeds.is_empty() {
        bail!("--seeds is empty");
    }
    if args.run.algo == Algo::Grpo && key != "q" {
        bail!("--sweep {} conflicts with --algo grpo", args.sweep);
    }
    let base = build_config(&args.run)?;
    let out = resolve_out(&args.out);
    let mut cells = Vec::new();
    for &v in &args.values {
        for &seed in &args.seeds {
            let mut cfg = base.clone();
            cfg.set(key, &v.to_string()).map_err(config_error)?;
            cfg.seed = seed;
            cfg.validate().map_err(|e| anyhow!("--values {v}: {}", config_error(e)))?;
            cells.push((v, seed, out.join(format!("{}-{}", args.sweep, v)).join(format!("seed-{seed}")), cfg));
        }
    }
    let mut manifest = RunManifest::new("ablate").with_config(&base).output("summary", "summary.csv");
    manifest.config.insert("ablate.sweep".into(), key.to_string());
    manifest.config.insert("ablate.values".into(), args.values.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    manifest.config.insert("ablate.seeds".into(), args.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    for (v, seed, dir, _) in &cells {
        let rel = dir.strip_prefix(&out).unwrap_or(dir).display().to_string();
        manifest.outputs.insert(format!("cell {key}={v} seed={seed}"), rel);
    }
    manifest.write(&out)?;

    cells.par_iter().try_for_each(|(v, seed, dir, cfg)| -> Result<()> {
        if is_complete(dir, cfg) {
            eprintln!("skipping completed cell {key}={v} seed={seed}");
            return Ok(());
        }
        run_training(Runner::new(cfg.clone())?, dir, "ablate-cell", false)?;
        std::fs::write(dir.join("DONE"), "")?;
        Ok(())
    })?;

    let mut csv = BufWriter::new(File::create(out.join("summary.csv"))?);
    writeln!(csv, "sweep,value,seed,final_eval_return,final_eval_success,final_train_return,mean_entropy")?;
    for (v, seed, dir, _) in &cells {
        let s = summarize_cell(&dir.join("metrics.jsonl"))?;
        writeln!(
            csv,
            "{key},{v},{seed},{},{},{},{}",
            s.final_eval_return, s.final_eval_success, s.final_train_return, s.mean_entropy
        )?;
    }
    csv.flush()?;
    println!("sweep over {key}: {} cells, summary in {}", cells.len(), out.join("summary.csv").display());
    Ok(())
}

/// A cell is complete when it finished and was produced by the same config.
fn is_complete(dir: &Path, cfg: &Config) -> bool {
    dir.join("DONE").exists() && RunManifest::read(dir).is_ok_and(|m| m.config_kv() == RunManifest::new("").with_config(cfg).config_kv())
}
