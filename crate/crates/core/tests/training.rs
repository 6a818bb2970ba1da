use crowdnav::config::RunConfig;
use crowdnav::dynamics::{generate_scenario, EpisodeStatus, ScenarioConfig};
use crowdnav::parallel::WorkerPool;
use crowdnav::reward::{reward, RewardBranch, RewardContext};
use crowdnav::state::to_robot_frame;
use crowdnav::training::{
    collect_demonstrations, demonstration_pairs, imitation_learning, run_episode, td_pairs, train,
    ReplayBuffer, TrainConfig, VLearner,
};
use crowdnav::valuenet::{NetworkInput, NetworkShape, ValueEstimator, ValueNetwork};
use crowdnav::PerType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Small, fast configuration for end-to-end checks.
fn tiny() -> RunConfig {
    let mut cfg = RunConfig::desk();
    let s = NetworkShape::reduced(true);
    cfg.network.embed = s.embed;
    cfg.network.interaction = s.interaction;
    cfg.network.attention = s.attention;
    cfg.network.value = s.value;
    cfg.training = TrainConfig {
        il_episodes: 6,
        il_epochs: 2,
        rl_episodes: 6,
        validation_interval: 3,
        validation_size: 2,
        target_update_interval: Some(2),
        ..TrainConfig::desk()
    };
    cfg.scenario.counts = PerType {
        adult: 2,
        bicycle: 0,
        child: 1,
        obstacle: 0,
    };
    cfg
}

struct Zero;

impl ValueEstimator for Zero {
    fn include_entity_type(&self) -> bool {
        true
    }
    fn values(&self, inputs: &[NetworkInput]) -> Vec<f64> {
        vec![0.0; inputs.len()]
    }
}

#[test]
fn terminal_step_has_no_bootstrap() {
    let cfg = tiny();
    let net = ValueNetwork::new(cfg.network.shape(), 1).unwrap();
    for index in 0..6 {
        let rollout = run_episode(index, &net, &net, &cfg, 0.5).unwrap();
        let last = rollout.record.transitions.last().unwrap();
        assert_eq!(rollout.pairs.last().unwrap().1, last.reward);
        if let EpisodeStatus::Collision(e) = rollout.record.outcome {
            assert_eq!(last.branch, RewardBranch::Collision(e));
        }
        for (p, t) in rollout.pairs.iter().zip(&rollout.record.transitions) {
            assert!(p.1.is_finite());
            assert_eq!(p.0, NetworkInput::from_joint(&t.state, true));
        }
    }
}

#[test]
fn targets_bootstrap_from_target_network() {
    let cfg = tiny();
    let net = ValueNetwork::new(cfg.network.shape(), 1).unwrap();
    let target = ValueNetwork::new(cfg.network.shape(), 2).unwrap();
    let rollout = run_episode(0, &net, &target, &cfg, 0.0).unwrap();
    let rec = &rollout.record;
    let discount = rec.step_discount(cfg.training.gamma);
    for (k, t) in rec.transitions.iter().enumerate().take(rec.len() - 1) {
        let v = target.forward(&NetworkInput::from_joint(&t.next_state, true)).value;
        assert!((rollout.pairs[k].1 - (t.reward + discount * v)).abs() < 1e-12);
    }
    let zero = td_pairs(rec, &Zero, cfg.training.gamma);
    for (p, t) in zero.iter().zip(&rec.transitions) {
        assert_eq!(p.1, t.reward);
    }
}

#[test]
fn greedy_episode_is_reproducible() {
    let cfg = tiny();
    let net = ValueNetwork::new(cfg.network.shape(), 4).unwrap();
    let a = run_episode(3, &net, &net, &cfg, 0.0).unwrap();
    let b = run_episode(3, &net, &net, &cfg, 0.0).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.pairs, b.pairs);
}

#[test]
fn timeout_step_uses_proximity_reward() {
    let mut cfg = tiny();
    cfg.scenario.counts = PerType::splat(0);
    cfg.scenario.t_max = 2.0;
    cfg.reward.t_good = 1.0;
    cfg.reward.t_max = 2.0;
    // robot that never moves: every greedy score ties, action 0 is the slowest
    let world = generate_scenario(&cfg.scenario, 0).unwrap();
    let mut stop = |_: &_| glam::DVec2::ZERO;
    let rec = crowdnav::episode::run_with(
        world,
        &mut stop,
        &crowdnav::orca::Orca::default(),
        &cfg.reward,
    );
    assert_eq!(rec.outcome, EpisodeStatus::Timeout);
    let last = rec.transitions.last().unwrap();
    assert_eq!(last.branch, RewardBranch::Timeout);
    let ctx = RewardContext {
        t: 2.0,
        d_g: rec.frames.last().unwrap().robot.goal_distance(),
        d_max: rec.d_max,
        dt: rec.dt,
    };
    assert_eq!(last.reward, reward(&last.events, &ctx, &cfg.reward));
    assert_eq!(last.reward, 0.0);
}

#[test]
fn imitation_with_zero_epochs_is_a_no_op() {
    let mut cfg = tiny();
    cfg.training.il_epochs = 0;
    let demos = collect_demonstrations(&cfg, &WorkerPool::new(1)).unwrap();
    let pairs = demonstration_pairs(&demos, 0.9, true);
    let mut net = ValueNetwork::new(cfg.network.shape(), 1).unwrap();
    let before = net.clone();
    let losses = imitation_learning(&mut net, &pairs, &cfg.training, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(losses.is_empty());
    assert_eq!(net, before);
}

#[test]
fn imitation_ranks_goal_states_higher() {
    let mut cfg = tiny();
    cfg.scenario.counts = PerType::splat(0);
    cfg.training.il_episodes = 1;
    cfg.training.il_epochs = 200;
    cfg.training.il_batch_size = 16;
    let demos = collect_demonstrations(&cfg, &WorkerPool::new(1)).unwrap();
    assert_eq!(demos[0].outcome, EpisodeStatus::ReachedGoal);
    let pairs = demonstration_pairs(&demos, 0.9, true);
    let mut net = ValueNetwork::new(cfg.network.shape(), 1).unwrap();
    let losses = imitation_learning(&mut net, &pairs, &cfg.training, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    let first = net.forward(&pairs[0].0).value;
    let last = net.forward(&pairs[pairs.len() - 1].0).value;
    assert!(last > first, "near-goal {last} vs start {first}");
}

#[test]
fn single_worker_matches_sequential_reference() {
    let cfg = tiny();
    let pool = WorkerPool::new(1);
    let demos = collect_demonstrations(&cfg, &pool).unwrap();
    let pairs = demonstration_pairs(&demos, 0.9, true);
    let net = ValueNetwork::new(cfg.network.shape(), 9).unwrap();

    let mut replay = ReplayBuffer::new(cfg.training.replay_capacity);
    replay.extend(pairs.clone());
    let mut learner = VLearner::new(&cfg, &pool, net.clone(), replay);
    for i in 0..4 {
        learner.run_batch(i..i + 1).unwrap();
    }

    // the same loop written out by hand
    let mut main = net.clone();
    let mut target = net;
    let mut replay = ReplayBuffer::new(cfg.training.replay_capacity);
    replay.extend(pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e1a_5eed);
    for i in 0..4u64 {
        let eps = crowdnav::training::epsilon_schedule(i, &cfg.training);
        let r = run_episode(i, &main, &target, &cfg, eps).unwrap();
        replay.extend(r.pairs);
        let batch = replay.sample(cfg.training.batch_size, &mut rng);
        main.train_batch(&batch, cfg.training.rl_lr).unwrap();
        if (i + 1) % 2 == 0 {
            target = main.clone();
        }
    }
    assert_eq!(learner.network.fingerprint(), main.fingerprint());
    assert_eq!(learner.target.fingerprint(), target.fingerprint());
}

#[test]
fn frozen_target_never_changes() {
    let mut cfg = tiny();
    cfg.training.target_update_interval = None;
    let pool = WorkerPool::new(1);
    let net = ValueNetwork::new(cfg.network.shape(), 9).unwrap();
    let mut replay = ReplayBuffer::new(100);
    let w = generate_scenario(&ScenarioConfig::default(), 0).unwrap();
    replay.push((NetworkInput::from_joint(&to_robot_frame(&w.robot, &w.entities), true), 0.5));
    let mut learner = VLearner::new(&cfg, &pool, net.clone(), replay);
    learner.run_batch(0..4).unwrap();
    assert_eq!(learner.target, net);
    assert_ne!(learner.network, net);
}

#[test]
fn target_copies_main_on_schedule() {
    let cfg = tiny();
    let pool = WorkerPool::new(1);
    let net = ValueNetwork::new(cfg.network.shape(), 9).unwrap();
    let mut replay = ReplayBuffer::new(100);
    let w = generate_scenario(&ScenarioConfig::default(), 0).unwrap();
    replay.push((NetworkInput::from_joint(&to_robot_frame(&w.robot, &w.entities), true), 0.5));
    let mut learner = VLearner::new(&cfg, &pool, net, replay);
    learner.run_batch(0..2).unwrap();
    assert_eq!(learner.target.fingerprint(), learner.network.fingerprint());
    learner.run_batch(2..3).unwrap();
    assert_ne!(learner.target.fingerprint(), learner.network.fingerprint());
}

#[test]
fn replay_respects_capacity_and_target_bounds() {
    let mut cfg = tiny();
    cfg.training.replay_capacity = 150;
    let outcome = train(&cfg, None, &mut |_| {}).unwrap();
    assert!(outcome.replay_len <= 150);
    assert_eq!(outcome.log.len(), 6);
    assert_eq!(outcome.validation.iter().map(|v| v.0).collect::<Vec<_>>(), vec![3, 6]);
    assert!([3, 6].contains(&outcome.best_episode));
}

#[test]
fn training_writes_artifacts() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let a = train(&cfg, Some(dir.path()), &mut |_| {}).unwrap();
    for f in [
        "training_log.csv",
        "validation_curve.csv",
        "il_losses.csv",
        "checkpoints/il.ckpt",
        "checkpoints/rl_000003.ckpt",
        "checkpoints/best.ckpt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    assert!(log.starts_with("episode,epsilon,loss,outcome,steps,val_SR,val_CR,val_reward,val_WeightedScore"));
    let b = train(&cfg, None, &mut |_| {}).unwrap();
    assert_eq!(a.best_network.fingerprint(), b.best_network.fingerprint());
}
