use empo_core::envsim::{ActionId, TaskSpec, LIGHTBULB_WORLD};
use empo_core::memory::NoveltyStore;
use empo_core::optimizer::{
    group_advantages, importance_ratio, prepare_old_logprobs, surrogate_objective, GroupBatch, OffPolicyRatio,
    UpdateConfig, UpdateMode,
};
use empo_core::policy::{grad_logprob, FeatureDims, Gradient, PolicyParams};
use empo_core::rollout::{assign_intrinsic, run_group, RolloutConfig, RolloutMode, TipMemories, Trajectory};
use empo_oracles::fixtures::{hand_trajectory, random_context, random_params};
use empo_oracles::{naive_logprob, oracle_advantages, oracle_grpo_step, OracleReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lightbulb_batch(params: &PolicyParams<f64>, seed: u64) -> Vec<Trajectory<f64>> {
    let tasks: Vec<TaskSpec> = (0..2).map(|v| TaskSpec::new(LIGHTBULB_WORLD, v).unwrap()).collect();
    let cfg = RolloutConfig { group_size: 8, max_steps: 30, dims: FeatureDims::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajs =
        run_group(&tasks, params, &TipMemories::new(), RolloutMode::WithoutMemory, &cfg, &mut rng).unwrap();
    let mut store = NoveltyStore::new(0.95);
    for t in &mut trajs {
        assign_intrinsic(t, &mut store, 1.0);
    }
    trajs
}

fn assert_close(case: &str, got: &Gradient<f64>, want: &(Vec<f64>, Vec<f64>), tol: f64) {
    for (k, (x, y)) in got.w.iter().zip(&want.0).chain(got.v.iter().zip(&want.1)).enumerate() {
        let r = OracleReport::new(format!("{case}[{k}]"), *y, *x);
        assert!(r.abs_err <= tol, "{}", r.to_json());
    }
}

#[test]
fn update_gradient_at_ratio_one_matches_plain_policy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for seed in 0..5 {
        let params = random_params(&mut rng, FeatureDims::default(), 0.5);
        let batch = GroupBatch::new(lightbulb_batch(&params, seed), 8, 1e-8).unwrap();
        let cfg = UpdateConfig::default();
        let s = surrogate_objective(&batch, &params, &params, &cfg).unwrap();
        assert_eq!(s.stats.mask_fraction, 0.0);
        assert_eq!(s.stats.clip_fraction, 0.0);
        assert!(s.gradient.norm() > 0.0);
        assert_close("grad", &s.gradient, &oracle_grpo_step(&batch, &params, cfg.t_max, cfg.eps_std), 1e-10);
    }
}

#[test]
fn equal_returns_give_zero_gradient() {
    let params = random_params(&mut ChaCha8Rng::seed_from_u64(42), FeatureDims::default(), 0.5);
    let mut trajs = lightbulb_batch(&params, 9);
    trajs.iter_mut().for_each(|t| t.return_total = 7.0);
    let batch = GroupBatch::new(trajs, 8, 1e-8).unwrap();
    let s = surrogate_objective(&batch, &params, &params, &UpdateConfig::default()).unwrap();
    assert!(s.gradient.w.iter().chain(&s.gradient.v).all(|&g| g == 0.0));
    let (w, v) = oracle_grpo_step(&batch, &params, 30, 1e-8);
    assert!(w.iter().chain(&v).all(|&g| g == 0.0));
}

#[test]
fn unit_advantage_trajectory_contributes_its_summed_score_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let dims = FeatureDims { base: 16, tip: 8 };
    let params = random_params(&mut rng, dims, 1.0);
    let steps: Vec<_> = (0..4)
        .map(|_| {
            let ctx = random_context(&mut rng, dims);
            let a = rng.gen_range(0..ctx.base.len());
            (ctx, a)
        })
        .collect();
    let good = hand_trajectory(&steps, &params, 1.0, RolloutMode::WithoutMemory);
    let empty = hand_trajectory(&[], &params, -1.0, RolloutMode::WithoutMemory);
    let batch = GroupBatch::new(vec![good, empty], 2, 1e-8).unwrap();
    assert_eq!(batch.advantages, [1.0, -1.0]);
    let mut want = Gradient::zeros(dims);
    for (ctx, a) in &steps {
        want.add_scaled(&grad_logprob(&params, ctx, ActionId(*a)), 1.0 / 60.0);
    }
    assert_close("oracle", &want, &oracle_grpo_step(&batch, &params, 30, 1e-8), 1e-12);
}

#[test]
fn ratio_table_rows_match_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let dims = FeatureDims { base: 16, tip: 8 };
    for _ in 0..50 {
        let old = random_params(&mut rng, dims, 1.0);
        let cur = random_params(&mut rng, dims, 1.0);
        let mut ctx = random_context(&mut rng, dims);
        ctx.tip_present = true;
        ctx.tip.iter_mut().for_each(|t| t.push((7, 1.0)));
        let a = rng.gen_range(0..ctx.base.len());
        let plain = ctx.without_tips();
        let lp = |p: &PolicyParams<f64>, c| naive_logprob(p, c, ActionId(a));
        let rows = [
            (RolloutMode::WithoutMemory, UpdateMode::OnPolicy, OffPolicyRatio::Table3, &plain, &plain),
            (RolloutMode::MemoryAugmented, UpdateMode::OnPolicy, OffPolicyRatio::Table3, &ctx, &ctx),
            (RolloutMode::MemoryAugmented, UpdateMode::OffPolicy, OffPolicyRatio::Table3, &plain, &ctx),
            (RolloutMode::MemoryAugmented, UpdateMode::OffPolicy, OffPolicyRatio::Alg1, &plain, &plain),
        ];
        for (rollout, update, variant, cur_ctx, old_ctx) in rows {
            let sampled = if rollout == RolloutMode::MemoryAugmented { &ctx } else { &plain };
            let t = hand_trajectory(&[(sampled.clone(), a)], &old, 1.0, rollout);
            let u = hand_trajectory(&[], &old, 0.0, rollout);
            let batch = GroupBatch::new(vec![t, u], 2, 1e-8).unwrap();
            let batch = prepare_old_logprobs(batch, update, &old, variant).unwrap();
            let want = (lp(&cur, cur_ctx) - lp(&old, old_ctx)).exp();
            let got = importance_ratio(&batch, &cur, 0, 0);
            let r = OracleReport::new(format!("{rollout:?}/{update:?}/{variant}"), want, got);
            assert!(r.rel_err <= 1e-12, "{}", r.to_json());
        }
    }
}

#[test]
fn advantages_are_standardized_on_1000_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..1000 {
        let returns: Vec<f64> = (0..8).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let a = group_advantages(&returns, 1e-8).unwrap();
        let mean = a.iter().sum::<f64>() / 8.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        for (x, y) in a.iter().zip(oracle_advantages(&returns, 8, 1e-8)) {
            assert!((x - y).abs() < 1e-12);
        }
        let flat = vec![returns[0]; 8];
        assert_eq!(group_advantages(&flat, 1e-8).unwrap(), [0.0; 8]);
    }
}
