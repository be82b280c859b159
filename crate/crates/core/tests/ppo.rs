use cdmp::compliance::{ComplianceParams, ParamBounds};
use cdmp::contact::CrossSection;
use cdmp::env::{
    hand_tuned_params, run_episode, sample_episode, EnvConfig, EpisodeLimits, ErrorRanges, SUCCESS_REWARD,
};
use cdmp::error::Error;
use cdmp::ppo::{
    collect, collect_on, retrain, train, write_curve_csv, Curriculum, Learner, PolicyNet, RolloutBatch, Sampling,
    TrainConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy(seed: u64) -> PolicyNet {
    PolicyNet::new(3, 2, &[5, 4], -0.3, ParamBounds::default(), &mut rng(seed)).unwrap()
}

/// A batch whose behaviour log-probs differ from the current policy by
/// `offsets`, so that some rows are clipped and some are not.
fn toy_batch(policy: &PolicyNet, offsets: &[f64], seed: u64) -> RolloutBatch {
    let mut r = rng(seed);
    let mut batch = RolloutBatch::default();
    for (i, off) in offsets.iter().enumerate() {
        let obs: Vec<f64> = (0..3).map(|k| ((i * 3 + k) as f64 * 0.37).sin()).collect();
        let s = policy.sample(&obs, Sampling::Stochastic, &mut r).unwrap();
        batch.observations.push(obs);
        batch.log_probs.push(s.log_prob + off);
        batch.actions.push(s.action);
        batch.values.push(s.value);
        batch.returns.push((i as f64 * 0.9).cos());
        batch.rewards.push(0.0);
        batch.successes.push(false);
        batch.completion_s.push(None);
        batch.diagnostics.push(None);
    }
    batch.advantages = (0..offsets.len()).map(|i| if i % 3 == 0 { -1.3 } else { 0.8 + 0.1 * i as f64 }).collect();
    batch
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let policy = toy(1);
    // offsets of ±0.05 stay inside the clip range; ±0.6 push rows outside it
    let offsets = [0.05, -0.04, 0.6, -0.6, 0.02, 0.6, -0.6, 0.0, 0.03];
    let batch = toy_batch(&policy, &offsets, 2);
    let rows: Vec<usize> = (0..offsets.len()).collect();
    for entropy in [0.0, 0.01] {
        let (_, grad, stats) = policy.surrogate(&batch, &rows, 0.2, entropy).unwrap();
        assert!(stats.clip_fraction > 0.0 && stats.clip_fraction < 1.0);
        let x = policy.policy_params();
        let f = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_policy_params(p).unwrap();
            q.surrogate(&batch, &rows, 0.2, entropy).unwrap().0
        };
        let fd = central_difference(f, &x, 1e-6);
        let err = relative_error(&grad, &fd);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn value_gradient_matches_finite_differences() {
    let policy = toy(4);
    let batch = toy_batch(&policy, &[0.0; 6], 5);
    let rows: Vec<usize> = (0..6).collect();
    let (_, grad) = policy.value_loss(&batch, &rows).unwrap();
    let f = |p: &[f64]| {
        let mut q = policy.clone();
        q.value.assign(p).unwrap();
        q.value_loss(&batch, &rows).unwrap().0
    };
    let fd = central_difference(f, &policy.value.flatten(), 1e-6);
    assert!(relative_error(&grad, &fd) < 1e-4);
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden: vec![5, 4],
        ..TrainConfig::default()
    }
}

#[test]
fn zero_advantages_leave_the_policy_unchanged() {
    let policy = toy(6);
    let mut batch = toy_batch(&policy, &[0.1, -0.1, 0.0, 0.2], 7);
    batch.advantages = vec![0.0; 4];
    let before = policy.policy_params();
    let mut learner = Learner::new(policy, &small_cfg());
    learner.update(&batch, &small_cfg()).unwrap();
    assert_eq!(learner.policy.policy_params(), before);
    assert_eq!(learner.policy.generation, 1);
}

#[test]
fn positive_advantage_raises_the_action_probability() {
    for seed in 0..5 {
        let policy = toy(seed);
        let mut batch = toy_batch(&policy, &[0.0], seed + 10);
        batch.advantages = vec![1.0];
        let before = policy.log_prob(&batch.observations[0], &batch.actions[0]).unwrap();
        let mut learner = Learner::new(policy, &small_cfg());
        learner.update(&batch, &small_cfg()).unwrap();
        let after = learner.policy.log_prob(&batch.observations[0], &batch.actions[0]).unwrap();
        assert!(after > before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn stale_batches_are_rejected() {
    let policy = toy(8);
    let batch = toy_batch(&policy, &[0.0, 0.1, -0.1], 9);
    let mut learner = Learner::new(policy, &small_cfg());
    learner.update(&batch, &small_cfg()).unwrap();
    match learner.update(&batch, &small_cfg()) {
        Err(Error::StaleBatch { batch: 0, policy: 1 }) => {}
        other => panic!("expected a stale batch error, got {other:?}"),
    }
}

#[test]
fn non_finite_advantages_abort_the_update() {
    let policy = toy(10);
    let mut batch = toy_batch(&policy, &[0.0, 0.1], 11);
    batch.advantages[1] = f64::NAN;
    let before = policy.clone();
    let mut learner = Learner::new(policy, &small_cfg());
    assert!(matches!(learner.update(&batch, &small_cfg()), Err(Error::UpdateAborted(_))));
    assert_eq!(learner.policy, before);
}

#[test]
fn bandit_converges_to_the_optimum() {
    // reward −(a − a*)² for a one-dimensional action and a constant observation
    let target = 0.7;
    let cfg = TrainConfig {
        hidden: vec![8],
        learning_rate: 3e-3,
        batch_size: 64,
        minibatch_size: 64,
        epochs: 10,
        ..TrainConfig::default()
    };
    let policy = PolicyNet::new(1, 1, &cfg.hidden, 0.0, ParamBounds::default(), &mut rng(12)).unwrap();
    let mut learner = Learner::new(policy, &cfg);
    let mut r = rng(13);
    let obs = vec![1.0];
    let mut means = Vec::new();
    for _ in 0..400 {
        let mut batch = RolloutBatch {
            generation: learner.policy.generation,
            ..Default::default()
        };
        for _ in 0..cfg.batch_size {
            let s = learner.policy.sample(&obs, Sampling::Stochastic, &mut r).unwrap();
            let reward = -(s.action[0] - target).powi(2);
            batch.observations.push(obs.clone());
            batch.actions.push(s.action);
            batch.log_probs.push(s.log_prob);
            batch.values.push(s.value);
            batch.rewards.push(reward);
            batch.returns.push(reward);
            batch.successes.push(false);
            batch.completion_s.push(None);
            batch.diagnostics.push(None);
        }
        batch.compute_advantages();
        learner.update(&batch, &cfg).unwrap();
        means.push(learner.policy.mean_action(&obs).unwrap()[0]);
    }
    // iterate average over the last quarter of training
    let tail = &means[300..];
    let avg = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((avg - target).abs() < 0.01 * target, "averaged mean action {avg}");
    assert!((means[0] - target).abs() > 0.5);
    assert!(learner.policy.log_std[0] < -2.0);
}

#[test]
fn batches_have_one_row_per_episode_and_respect_the_bounds() {
    let cfg = EnvConfig::default();
    let policy = PolicyNet::for_compliance(&[8, 8], 0.5, &mut rng(14)).unwrap();
    let batch = collect(&policy, &cfg, &EpisodeLimits::default(), 5, Sampling::Stochastic, &mut rng(15)).unwrap();
    assert_eq!(batch.len(), 5);
    assert_eq!(batch.actions.len(), 5);
    assert_eq!(batch.advantages.len(), 5);
    for a in &batch.actions {
        assert!(policy.bounds.contains(&policy.params_for(a).unwrap()));
    }
    let mean = batch.advantages.iter().sum::<f64>() / 5.0;
    assert!(mean.abs() < 1e-9);
    assert!(collect(&policy, &cfg, &EpisodeLimits::default(), 0, Sampling::Stochastic, &mut rng(15)).is_err());
}

#[test]
fn deterministic_collection_repeats_exactly() {
    let cfg = EnvConfig::default().with_ranges(ErrorRanges::new(2.0, 3.0).unwrap());
    let mut r = rng(16);
    let specs: Vec<_> = (0..4).map(|_| sample_episode(&cfg, &mut r).unwrap()).collect();
    let policy = PolicyNet::for_compliance(&[8], -0.5, &mut rng(17)).unwrap();
    let limits = EpisodeLimits::default();
    let a = collect_on(&policy, &cfg, &limits, &specs, Sampling::Mean, &mut rng(1)).unwrap();
    let b = collect_on(&policy, &cfg, &limits, &specs, Sampling::Mean, &mut rng(2)).unwrap();
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.actions, b.actions);
}

#[test]
fn random_policy_trails_the_hand_tuned_baseline() {
    // with no error every parameter set in the box inserts, so use a moderate range
    let cfg = EnvConfig::default().with_ranges(ErrorRanges::new(4.0, 6.0).unwrap());
    let limits = EpisodeLimits::default();
    let mut r = rng(18);
    let specs: Vec<_> = (0..32).map(|_| sample_episode(&cfg, &mut r).unwrap()).collect();
    let policy = PolicyNet::for_compliance(&[64, 64], 0.0, &mut rng(19)).unwrap();
    let batch = collect_on(&policy, &cfg, &limits, &specs, Sampling::Stochastic, &mut rng(20)).unwrap();
    let random = batch.rewards.iter().sum::<f64>() / 32.0;
    let hand = specs
        .iter()
        .map(|s| run_episode(&cfg, s, &hand_tuned_params(), &limits).unwrap().reward)
        .sum::<f64>()
        / 32.0;
    assert!(random < hand, "random {random} vs hand-tuned {hand}");
}

/// A policy whose mean action is `params` for every observation.
fn constant_policy(params: &ComplianceParams, log_std: f64) -> PolicyNet {
    let mut p = PolicyNet::for_compliance(&[8], log_std, &mut rng(21)).unwrap();
    let out = p.mean.layers.last_mut().unwrap();
    out.weights.fill(0.0);
    out.bias.copy_from_slice(&p.bounds.unsquash(params).unwrap());
    p
}

#[test]
fn constant_policy_reproduces_its_parameters() {
    let p = constant_policy(&hand_tuned_params(), -3.0);
    let spec = sample_episode(&EnvConfig::default(), &mut rng(22)).unwrap();
    let params = p.act(&spec.observation()).unwrap();
    let expected = hand_tuned_params();
    for (a, b) in params.to_flat().iter().zip(expected.to_flat()) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let policy = PolicyNet::for_compliance(&[6, 5], -0.7, &mut rng(23)).unwrap();
    policy.save(&path).unwrap();
    assert_eq!(PolicyNet::load(&path).unwrap(), policy);

    let mut broken = policy.clone();
    broken.obs_dim = 7;
    broken.save(&path).unwrap();
    assert!(matches!(PolicyNet::load(&path), Err(Error::Incompatible(_))));

    let mut future = policy.clone();
    future.version += 1;
    future.save(&path).unwrap();
    assert!(matches!(PolicyNet::load(&path), Err(Error::Incompatible(_))));
}

#[test]
fn retrain_rejects_a_different_observation_width() {
    let base = PolicyNet::new(5, 38, &[4], -1.0, ParamBounds::default(), &mut rng(24)).unwrap();
    let res = retrain(
        base,
        &[CrossSection::Triangle],
        &EnvConfig::default(),
        &EpisodeLimits::default(),
        &small_cfg(),
        &mut (),
    );
    assert!(matches!(res, Err(Error::Incompatible(_))));
}

#[test]
fn warm_start_on_the_same_shapes_is_already_at_threshold() {
    let env = EnvConfig::default();
    let cfg = TrainConfig {
        hidden: vec![8],
        batch_size: 16,
        minibatch_size: 16,
        window: 16,
        total_episodes: 64,
        curriculum: Curriculum::single(ErrorRanges::zero()),
        ..TrainConfig::default()
    };
    let base = constant_policy(&hand_tuned_params(), -4.0);
    let out = retrain(base, &env.shapes, &env, &EpisodeLimits::default(), &cfg, &mut ()).unwrap();
    assert_eq!(out.episodes_to_threshold, Some(cfg.window));
    assert!(out.curve[cfg.window - 1].moving_avg >= cfg.target_fraction * SUCCESS_REWARD);
    assert_eq!(out.policy.generation, 1);
}

#[test]
fn curve_has_one_row_per_episode() {
    let cfg = TrainConfig {
        hidden: vec![4],
        batch_size: 6,
        minibatch_size: 3,
        epochs: 2,
        total_episodes: 15,
        window: 4,
        stop_at_target: false,
        ..TrainConfig::default()
    };
    let out = train(&EnvConfig::default(), &EpisodeLimits::default(), &cfg, &mut ()).unwrap();
    assert_eq!(out.curve.len(), 15);
    assert_eq!(out.updates.len(), 3);
    let episodes: Vec<usize> = out.curve.iter().map(|p| p.episode).collect();
    assert_eq!(episodes, (1..=15).collect::<Vec<_>>());
    let mut csv = Vec::new();
    write_curve_csv(&out.curve, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 16);
    assert!(text.starts_with("episode,reward,moving_avg"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn squashed_samples_always_satisfy_the_bounds(seed in 0u64..1000, ls in -3.0f64..1.0) {
        let policy = PolicyNet::for_compliance(&[4], ls, &mut rng(seed)).unwrap();
        let obs: Vec<f64> = (0..9).map(|k| (seed as f64 + k as f64).sin() * 3.0).collect();
        let s = policy.sample(&obs, Sampling::Stochastic, &mut rng(seed + 1)).unwrap();
        let params = policy.params_for(&s.action).unwrap();
        prop_assert!(policy.bounds.contains(&params));
        prop_assert!(params.validate().is_ok());
    }
}
