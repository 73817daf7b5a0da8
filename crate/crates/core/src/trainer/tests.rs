use super::*;
use crate::envsim::{CHAIN_CORRIDOR, LIGHTBULB_WORLD, PAINT_MIX};

fn small(seed: u64) -> TrainConfig<f64> {
    let mut c = TrainConfig::default();
    c.iterations = 6;
    c.batch_tasks = 2;
    c.group_size = 4;
    c.seed = seed;
    c.p = 0.5;
    c.test_variants = 5..9;
    c
}

fn run_metrics(cfg: TrainConfig<f64>) -> (Vec<u8>, Trainer<f64>) {
    let mut buf = Vec::new();
    let t = train(cfg, &mut buf).unwrap();
    (buf, t)
}

#[test]
fn same_seed_same_metrics() {
    let (a, _) = run_metrics(small(3));
    let (b, _) = run_metrics(small(3));
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 6);
}

#[test]
fn iterations_strictly_increase() {
    let (a, _) = run_metrics(small(4));
    let its: Vec<u64> = String::from_utf8(a)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<MetricsRecord>(l).unwrap().iteration)
        .collect();
    assert_eq!(its, (1..=6).collect::<Vec<_>>());
}

#[test]
fn eval_seed_does_not_touch_training() {
    let mut c = small(5);
    c.eval_sampled = true;
    let mut d = c.clone();
    d.eval_seed = 99;
    let strip = |buf: Vec<u8>| -> Vec<(f64, f64, usize)> {
        String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| {
                let m: MetricsRecord = serde_json::from_str(l).unwrap();
                (m.train_mean_return, m.entropy, m.memory_size)
            })
            .collect()
    };
    let (a, ta) = run_metrics(c);
    let (b, tb) = run_metrics(d);
    assert_eq!(strip(a), strip(b));
    assert_eq!(ta.params(), tb.params());
}

#[test]
fn tip_budget_and_version() {
    let (_, t) = run_metrics(small(6));
    assert_eq!(t.params().version, 6);
    let size: usize = t.memories().values().map(TipMemory::len).sum();
    assert!(size <= (6 * 2 * 4).min(1000));
    assert!(size >= 1);
}

#[test]
fn resume_reproduces_tail() {
    let dir = tempfile::tempdir().unwrap();
    let (full, _) = run_metrics(small(7));
    let mut c = small(7);
    c.checkpoint_every = 3;
    let mut t = Trainer::new(c).unwrap();
    let mut head = Vec::new();
    t.run(&mut head, None, Some(dir.path())).unwrap();
    let ck = dir.path().join("iter-000003");
    assert_eq!(checkpoint_iteration(&ck).unwrap(), 3);
    let mut resumed = Trainer::<f64>::load_checkpoint(&ck).unwrap();
    let mut tail = Vec::new();
    resumed.run(&mut tail, None, None).unwrap();
    let full = String::from_utf8(full).unwrap();
    let expected: Vec<&str> = full.lines().skip(3).collect();
    assert_eq!(String::from_utf8(tail).unwrap().lines().collect::<Vec<_>>(), expected);
    assert_eq!(resumed.params(), t.params());
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut t) = run_metrics(small(8));
    t.save_checkpoint(dir.path()).unwrap();
    let mut back = Trainer::<f64>::load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.evaluate_now().unwrap(), t.evaluate_now().unwrap());
    assert_eq!(back.memories(), t.memories());
    assert_eq!(back.config(), t.config());
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Trainer::<f64>::load_checkpoint(&dir.path().join("nope")), Err(TrainError::Checkpoint(_))));
}

#[test]
fn priors_land_on_their_features() {
    let mut c = TrainConfig::<f64>::default();
    c.prior_literal = 2.0;
    c.prior_reflection = 1.5;
    let p = initial_params(&c);
    assert_eq!(p.w[base_bucket(&["ta-all", "focus"], c.dims)], 2.0);
    assert_eq!(p.v[tip_bucket(&["tl", "fail"], c.dims)], -1.5);
    assert_eq!(p.w.iter().filter(|&&x| x != 0.0).count(), 1);
}

#[test]
fn evaluation_is_deterministic_and_memory_free_by_default() {
    let p = PolicyParams::<f64>::zeros(Default::default());
    let a = evaluate(&p, LIGHTBULB_WORLD, 5..25, None, 1, EvalPolicy::Greedy, 30).unwrap();
    let b = evaluate(&p, LIGHTBULB_WORLD, 5..25, None, 1, EvalPolicy::Greedy, 30).unwrap();
    assert_eq!(a, b);
    let empty = TipMemory::new();
    let c = evaluate(&p, LIGHTBULB_WORLD, 5..25, Some(&empty), 1, EvalPolicy::Greedy, 30).unwrap();
    assert_eq!(a, c);
    assert_eq!(a.returns.len(), 20);
}

#[test]
fn untrained_policy_loses_on_lightbulb_world() {
    let p = PolicyParams::<f64>::zeros(Default::default());
    let s = evaluate(&p, LIGHTBULB_WORLD, 5..25, None, 1, EvalPolicy::Greedy, 30).unwrap();
    assert!(s.mean_return < 0.0, "{s:?}");
}

#[test]
fn sampled_evaluation_depends_on_seed_only() {
    let p = PolicyParams::<f64>::zeros(Default::default());
    let run = |seed| evaluate(&p, CHAIN_CORRIDOR, 0..5, None, 4, EvalPolicy::Sampled { seed }, 30).unwrap();
    assert_eq!(run(1), run(1));
    assert_eq!(run(1).episodes, 20);
}

#[test]
fn single_trial_adaptation_matches_evaluation() {
    let (_, t) = run_metrics(small(9));
    let mut mem = TipMemory::new();
    let curve = adapt(t.params(), PAINT_MIX, 5..15, 1, &mut mem, &TemplateTips, 30).unwrap();
    let e = evaluate(t.params(), PAINT_MIX, 5..15, None, 1, EvalPolicy::Greedy, 30).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(curve[0].returns, e.returns);
    assert_eq!(curve[0].memory_size, 0);
    assert!((1..=10).contains(&mem.len()));
}

#[test]
fn adaptation_with_reloaded_memory_matches_in_process() {
    let mut c = small(10);
    c.prior_reflection = 3.0;
    let (_, t) = run_metrics(c);
    let dir = tempfile::tempdir().unwrap();
    let mut mem = TipMemory::new();
    let whole = adapt(t.params(), PAINT_MIX, 5..10, 4, &mut mem, &TemplateTips, 30).unwrap();
    let path = dir.path().join("mem.txt");
    let mut piecewise = Vec::new();
    for k in 0..4 {
        let mut m = if k == 0 { TipMemory::new() } else { TipMemory::load(&path).unwrap() };
        piecewise.push(adapt_trial(t.params(), PAINT_MIX, 5..10, k, &mut m, &TemplateTips, 30).unwrap());
        m.save(&path).unwrap();
    }
    assert_eq!(whole, piecewise);
    assert!(matches!(adapt(t.params(), PAINT_MIX, 5..10, 0, &mut mem, &TemplateTips, 30), Err(AdaptError::NoTrials)));
}

#[test]
fn diverging_run_aborts_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small(11)).unwrap();
    t.params.w.iter_mut().for_each(|x| *x = f64::NAN);
    t.set_dump_dir(Some(dir.path().to_path_buf()));
    let mut sink = Vec::new();
    let err = t.run(&mut sink, None, None).unwrap_err();
    match err {
        TrainError::Diverged { dump: Some(d), .. } => {
            assert!(d.join("trajectories.jsonl").exists());
            assert!(d.join("params_old.txt").exists());
        }
        other => panic!("unexpected {other}"),
    }
}
