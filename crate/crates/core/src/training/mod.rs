//! Imitation bootstrap followed by parallel deep V-learning.

mod replay;

pub use replay::ReplayBuffer;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dynamics::{generate_scenario, EpisodeStatus};
use crate::episode::{run_with, EpisodeRecord};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_value_policy, write_curve_csv, EvalContext, Metrics, ScenarioSet, DEMO_SEED_OFFSET,
};
use crate::orca::{demonstrate_episode, Orca};
use crate::parallel::WorkerPool;
use crate::planner::{PolicyConfig, ValuePolicy};
use crate::valuenet::{save_checkpoint, Checkpoint, NetworkInput, ValueEstimator, ValueNetwork};

const POLICY_STREAM_SALT: u64 = 0x5eed_0f_a11_c0ffee;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub il_episodes: usize,
    pub il_epochs: usize,
    pub il_lr: f64,
    pub il_batch_size: usize,
    pub rl_episodes: u64,
    pub rl_lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// SGD updates applied per collected episode.
    pub updates_per_episode: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: u64,
    /// Episodes between target-network copies; absent means never.
    pub target_update_interval: Option<u64>,
    pub workers: usize,
    pub validation_interval: u64,
    pub validation_size: usize,
    pub replay_capacity: usize,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            il_episodes: 3000,
            il_epochs: 50,
            il_lr: 0.01,
            il_batch_size: 100,
            rl_episodes: 50_000,
            rl_lr: 0.001,
            gamma: 0.9,
            batch_size: 100,
            updates_per_episode: 1,
            epsilon_start: 0.5,
            epsilon_end: 0.1,
            epsilon_decay_episodes: 5000,
            target_update_interval: Some(50),
            workers: 1,
            validation_interval: 1024,
            validation_size: 500,
            replay_capacity: 100_000,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            il_episodes: 300,
            rl_episodes: 2000,
            epsilon_decay_episodes: 1000,
            validation_interval: 256,
            validation_size: 100,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("training: {m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.il_lr > 0.0 && self.rl_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.il_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.replay_capacity == 0 {
            return bad("replay capacity must be positive");
        }
        if self.validation_interval == 0 {
            return bad("validation interval must be positive");
        }
        if self.target_update_interval == Some(0) {
            return bad("target update interval must be positive");
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) {
            return bad("epsilon endpoints must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end`, then constant.
pub fn epsilon_schedule(episode: u64, config: &TrainConfig) -> f64 {
    if episode >= config.epsilon_decay_episodes {
        return config.epsilon_end;
    }
    let frac = episode as f64 / config.epsilon_decay_episodes as f64;
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
}

/// ORCA demonstrations on seeds disjoint from training and test scenarios.
pub fn collect_demonstrations(run: &RunConfig, pool: &WorkerPool) -> Result<Vec<EpisodeRecord>> {
    let base = run.seed.wrapping_add(DEMO_SEED_OFFSET);
    pool.map(0..run.training.il_episodes as u64, |i| {
        let world = generate_scenario(&run.scenario, base.wrapping_add(i))?;
        Ok(demonstrate_episode(world, &run.orca, &run.reward))
    })
    .into_iter()
    .collect()
}

/// Every demo step paired with its discounted return to the end of the demo.
pub fn demonstration_pairs(
    demos: &[EpisodeRecord],
    gamma: f64,
    include_entity_type: bool,
) -> Vec<(NetworkInput, f64)> {
    demos
        .iter()
        .flat_map(|d| {
            d.returns(gamma)
                .into_iter()
                .zip(&d.transitions)
                .map(|(g, t)| (NetworkInput::from_joint(&t.state, include_entity_type), g))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Supervised regression on `pairs`; returns the mean loss of each epoch.
pub fn imitation_learning(
    net: &mut ValueNetwork,
    pairs: &[(NetworkInput, f64)],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no demonstration pairs".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut losses = Vec::with_capacity(config.il_epochs);
    for epoch in 0..config.il_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.il_batch_size) {
            let batch: Vec<(NetworkInput, f64)> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            total += net.train_batch(&batch, config.il_lr).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("imitation epoch {epoch}: {m}")),
                other => other,
            })?;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(losses)
}

/// One RL episode and the replay pairs it produced.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub index: u64,
    pub record: EpisodeRecord,
    pub pairs: Vec<(NetworkInput, f64)>,
}

/// Scenario seed of RL training episode `index`.
pub fn episode_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}

fn policy_rng(base: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ POLICY_STREAM_SALT);
    rng.set_stream(index);
    rng
}

/// Plays training episode `index` epsilon-greedily against `policy` and
/// builds TD targets from `target`. The final step bootstraps from zero.
pub fn run_episode(
    index: u64,
    policy: &ValueNetwork,
    target: &dyn ValueEstimator,
    run: &RunConfig,
    epsilon: f64,
) -> Result<Rollout> {
    let world = generate_scenario(&run.scenario, episode_seed(run.seed, index))?;
    let gamma = run.training.gamma;
    let mut controller = ValuePolicy::new(
        policy,
        &run.reward,
        PolicyConfig { gamma, epsilon },
        policy_rng(run.seed, index),
    );
    let record = run_with(world, &mut controller, &Orca::new(run.orca), &run.reward);
    let pairs = td_pairs(&record, target, gamma);
    Ok(Rollout { index, record, pairs })
}

/// `r_t + gamma^(dt v_pref) V(s_{t+1})` for every step, with no bootstrap
/// on the last one.
pub fn td_pairs(record: &EpisodeRecord, target: &dyn ValueEstimator, gamma: f64) -> Vec<(NetworkInput, f64)> {
    let include = target.include_entity_type();
    let discount = record.step_discount(gamma);
    let n = record.len();
    let next_inputs: Vec<NetworkInput> = record.transitions[..n.saturating_sub(1)]
        .iter()
        .map(|t| NetworkInput::from_joint(&t.next_state, include))
        .collect();
    let next_values = target.values(&next_inputs);
    record
        .transitions
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let bootstrap = next_values.get(k).map_or(0.0, |v| discount * v);
            (NetworkInput::from_joint(&t.state, include), t.reward + bootstrap)
        })
        .collect()
}

fn run_episode_guarded(
    index: u64,
    policy: &ValueNetwork,
    target: &ValueNetwork,
    run: &RunConfig,
    epsilon: f64,
) -> Result<Rollout> {
    let attempt = || catch_unwind(AssertUnwindSafe(|| run_episode(index, policy, target, run, epsilon)));
    match attempt() {
        Ok(r) => r,
        Err(_) => match attempt() {
            Ok(r) => r,
            Err(payload) => {
                let message = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "worker panicked".into());
                Err(Error::WorkerFailure { episode: index, message })
            }
        },
    }
}

/// One row of the per-episode training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub episode: u64,
    pub epsilon: f64,
    /// Mean loss of this episode's updates.
    pub loss: f64,
    pub outcome: EpisodeStatus,
    pub steps: usize,
    pub validation: Option<Metrics>,
}

fn outcome_label(s: EpisodeStatus) -> String {
    match s {
        EpisodeStatus::Running => "running".into(),
        EpisodeStatus::ReachedGoal => "success".into(),
        EpisodeStatus::Collision(e) => format!("collision_{e}"),
        EpisodeStatus::Timeout => "timeout".into(),
    }
}

pub fn write_training_log<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode",
        "epsilon",
        "loss",
        "outcome",
        "steps",
        "val_SR",
        "val_CR",
        "val_reward",
        "val_WeightedScore",
    ])?;
    for r in rows {
        let v = |f: fn(&Metrics) -> f64| r.validation.as_ref().map_or(String::new(), |m| f(m).to_string());
        w.write_record([
            r.episode.to_string(),
            r.epsilon.to_string(),
            r.loss.to_string(),
            outcome_label(r.outcome),
            r.steps.to_string(),
            v(|m| m.sr),
            v(|m| m.cr),
            v(|m| m.reward),
            v(|m| m.weighted_score()),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Progress notifications emitted while training.
#[derive(Clone, Debug)]
pub enum TrainEvent<'a> {
    Demonstrations { episodes: usize, pairs: usize },
    ImitationEpoch { epoch: usize, loss: f64 },
    Episode(&'a LogRow),
    Validation { episode: u64, metrics: &'a Metrics },
}

/// Everything a training run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub il_network: ValueNetwork,
    pub il_losses: Vec<f64>,
    pub il_validation: Metrics,
    pub best_network: ValueNetwork,
    pub best_episode: u64,
    pub final_network: ValueNetwork,
    pub target_network: ValueNetwork,
    pub validation: Vec<(u64, Metrics)>,
    pub log: Vec<LogRow>,
    pub replay_len: usize,
}

/// Files written next to a training run.
pub struct RunFiles {
    dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        Ok(RunFiles { dir: dir.to_path_buf() })
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.dir.join("checkpoints").join(name)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Interleaved collection and learning after the imitation stage.
pub struct VLearner<'a> {
    pub run: &'a RunConfig,
    pub pool: &'a WorkerPool,
    pub network: ValueNetwork,
    pub target: ValueNetwork,
    pub replay: ReplayBuffer,
    rng: ChaCha8Rng,
}

impl<'a> VLearner<'a> {
    pub fn new(run: &'a RunConfig, pool: &'a WorkerPool, network: ValueNetwork, replay: ReplayBuffer) -> Self {
        VLearner {
            run,
            pool,
            target: network.clone(),
            network,
            replay,
            rng: ChaCha8Rng::seed_from_u64(run.seed ^ 0x7e1a_5eed),
        }
    }

    /// Collects episodes `range` in parallel against the current
    /// snapshots, then merges them in index order, updating after each.
    pub fn run_batch(&mut self, range: std::ops::Range<u64>) -> Result<Vec<LogRow>> {
        let (policy, target, run) = (&self.network, &self.target, self.run);
        let rollouts = self.pool.map(range, |i| {
            let eps = epsilon_schedule(i, &run.training);
            run_episode_guarded(i, policy, target, run, eps)
        });
        let mut rows = Vec::with_capacity(rollouts.len());
        for r in rollouts {
            let rollout = r?;
            rows.push(self.absorb(rollout)?);
        }
        Ok(rows)
    }

    fn absorb(&mut self, rollout: Rollout) -> Result<LogRow> {
        let cfg = &self.run.training;
        let steps = rollout.record.len();
        self.replay.extend(rollout.pairs);
        let mut loss = 0.0;
        for _ in 0..cfg.updates_per_episode {
            let batch = self.replay.sample(cfg.batch_size, &mut self.rng);
            loss += self.network.train_batch(&batch, cfg.rl_lr).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("episode {}: {m}", rollout.index)),
                other => other,
            })?;
        }
        let done = rollout.index + 1;
        if cfg.target_update_interval.is_some_and(|k| done % k == 0) {
            self.target = self.network.clone();
        }
        Ok(LogRow {
            episode: rollout.index,
            epsilon: epsilon_schedule(rollout.index, cfg),
            loss: loss / cfg.updates_per_episode.max(1) as f64,
            outcome: rollout.record.outcome,
            steps,
            validation: None,
        })
    }
}

pub fn eval_context(run: &RunConfig) -> EvalContext {
    EvalContext {
        reward: run.reward,
        orca: run.orca,
        gamma: run.training.gamma,
    }
}

/// Imitation learning, then parallel V-learning; the returned best network
/// is the RL checkpoint with the highest validation reward.
pub fn train(
    run: &RunConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    run.validate()?;
    let cfg = &run.training;
    let pool = WorkerPool::new(cfg.workers);
    let files = out_dir.map(RunFiles::new).transpose()?;
    let reward_hash = run.reward.hash();
    let include = run.network.include_entity_type;
    let ctx = eval_context(run);
    let validation_set = ScenarioSet::validation(&run.scenario, run.seed, cfg.validation_size);

    let demos = collect_demonstrations(run, &pool)?;
    let pairs = demonstration_pairs(&demos, cfg.gamma, include);
    progress(TrainEvent::Demonstrations {
        episodes: demos.len(),
        pairs: pairs.len(),
    });
    drop(demos);

    let mut network = ValueNetwork::new(run.network.shape(), run.seed)?;
    let mut il_rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x1a1a_1a1a);
    let il_losses = if pairs.is_empty() {
        Vec::new()
    } else {
        imitation_learning(&mut network, &pairs, cfg, &mut il_rng)?
    };
    for (epoch, &loss) in il_losses.iter().enumerate() {
        progress(TrainEvent::ImitationEpoch { epoch, loss });
    }
    let il_network = network.clone();
    let il_validation = evaluate_value_policy(&il_network, &validation_set, &ctx, &pool)?.metrics;
    progress(TrainEvent::Validation {
        episode: 0,
        metrics: &il_validation,
    });
    if let Some(f) = &files {
        save_checkpoint(&Checkpoint::new(il_network.clone(), reward_hash), &f.checkpoint("il.ckpt"))?;
    }

    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    replay.extend(pairs);
    let mut learner = VLearner::new(run, &pool, network, replay);

    let mut log = Vec::with_capacity(cfg.rl_episodes as usize);
    let mut validation = Vec::new();
    let mut best: Option<(f64, u64, ValueNetwork)> = None;
    let mut next = 0u64;
    while next < cfg.rl_episodes {
        let end = (next + cfg.workers as u64).min(cfg.rl_episodes);
        let rows = learner.run_batch(next..end)?;
        for mut row in rows {
            let done = row.episode + 1;
            if done % cfg.validation_interval == 0 || done == cfg.rl_episodes {
                let m = evaluate_value_policy(&learner.network, &validation_set, &ctx, &pool)?.metrics;
                progress(TrainEvent::Validation {
                    episode: done,
                    metrics: &m,
                });
                if let Some(f) = &files {
                    let ck = Checkpoint::new(learner.network.clone(), reward_hash);
                    save_checkpoint(&ck, &f.checkpoint(&format!("rl_{done:06}.ckpt")))?;
                }
                if best.as_ref().is_none_or(|(r, _, _)| m.reward > *r) {
                    best = Some((m.reward, done, learner.network.clone()));
                }
                validation.push((done, m.clone()));
                row.validation = Some(m);
            }
            progress(TrainEvent::Episode(&row));
            log.push(row);
        }
        next = end;
    }

    let (best_episode, best_network) = match best {
        Some((_, e, n)) => (e, n),
        None => (0, il_network.clone()),
    };
    if let Some(f) = &files {
        save_checkpoint(&Checkpoint::new(best_network.clone(), reward_hash), &f.checkpoint("best.ckpt"))?;
        write_training_log(&log, create(&f.file("training_log.csv"))?)?;
        let mut curve = vec![(0, il_validation.clone())];
        curve.extend(validation.iter().cloned());
        write_curve_csv(&curve, create(&f.file("validation_curve.csv"))?)?;
        let losses = create(&f.file("il_losses.csv"))?;
        let mut w = csv::Writer::from_writer(losses);
        w.write_record(["epoch", "loss"])?;
        for (i, l) in il_losses.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
    }

    Ok(TrainOutcome {
        il_network,
        il_losses,
        il_validation,
        best_network,
        best_episode,
        final_network: learner.network,
        target_network: learner.target,
        validation,
        log,
        replay_len: learner.replay.len(),
    })
}

/// Throughput of RL episode collection with a fixed network.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub workers: usize,
    pub episodes: u64,
    pub seconds: f64,
    pub episodes_per_second: f64,
    /// Digest of every collected pair; equal digests mean identical rollouts.
    pub digest: u64,
}

pub fn bench(run: &RunConfig, workers: usize, episodes: u64) -> Result<BenchReport> {
    use sha2::{Digest, Sha256};
    let pool = WorkerPool::new(workers);
    let net = ValueNetwork::new(run.network.shape(), run.seed)?;
    let start = std::time::Instant::now();
    let rollouts = pool.map(0..episodes, |i| {
        run_episode_guarded(i, &net, &net, run, epsilon_schedule(i, &run.training))
    });
    let seconds = start.elapsed().as_secs_f64();
    let mut hasher = Sha256::new();
    for r in rollouts {
        for (input, target) in r?.pairs {
            for x in input.features {
                hasher.update(x.to_le_bytes());
            }
            hasher.update(target.to_le_bytes());
        }
    }
    let digest = u64::from_le_bytes(hasher.finalize()[..8].try_into().expect("8 bytes"));
    Ok(BenchReport {
        workers,
        episodes,
        seconds,
        episodes_per_second: episodes as f64 / seconds.max(1e-12),
        digest,
    })
}
