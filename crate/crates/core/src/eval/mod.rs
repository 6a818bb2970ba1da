//! Test-time metrics, danger-distance histograms and the evaluation loop.

mod export;

pub use export::{
    histogram_svg, metrics_csv_header, trajectory_svg, write_curve_csv, write_metrics_csv,
    SvgOptions,
};

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::dynamics::{generate_scenario, EpisodeStatus, ScenarioConfig};
use crate::episode::{run_with, EpisodeRecord, RobotController};
use crate::error::Result;
use crate::orca::{Orca, OrcaParams};
use crate::parallel::WorkerPool;
use crate::planner::ValuePolicy;
use crate::reward::RewardConfig;
use crate::state::{EntityType, PerType};
use crate::valuenet::ValueEstimator;

/// Surface separation below which a robot–entity pair counts as dangerous.
pub const DANGER_DISTANCE: f64 = 0.3;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.02;

pub const VALIDATION_SEED_OFFSET: u64 = 1_000_000;
pub const TEST_SEED_OFFSET: u64 = 2_000_000;
pub const DEMO_SEED_OFFSET: u64 = 3_000_000;

/// Fixed list of scenario seeds sharing one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    pub config: ScenarioConfig,
    pub seeds: Vec<u64>,
}

impl ScenarioSet {
    pub fn new(config: ScenarioConfig, seeds: Vec<u64>) -> Self {
        ScenarioSet { config, seeds }
    }

    fn offset(config: &ScenarioConfig, base: u64, offset: u64, n: usize) -> Self {
        let start = base.wrapping_add(offset);
        let seeds = (0..n as u64).map(|i| start.wrapping_add(i)).collect();
        ScenarioSet::new(config.clone(), seeds)
    }

    pub fn validation(config: &ScenarioConfig, base: u64, n: usize) -> Self {
        Self::offset(config, base, VALIDATION_SEED_OFFSET, n)
    }

    pub fn test(config: &ScenarioConfig, base: u64, n: usize) -> Self {
        Self::offset(config, base, TEST_SEED_OFFSET, n)
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// What one evaluation episode contributes to the metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub outcome: EpisodeStatus,
    pub time: f64,
    pub steps: usize,
    pub discounted_reward: f64,
    /// Per-step, per-entity separations in `[0, DANGER_DISTANCE)`.
    pub danger: PerType<Vec<f64>>,
    /// Seconds during which some entity was within the danger distance.
    pub danger_time: f64,
}

impl EpisodeSummary {
    pub fn from_record(seed: u64, record: &EpisodeRecord, gamma: f64) -> Self {
        let mut danger = PerType::<Vec<f64>>::default();
        let mut danger_steps = 0usize;
        let kinds: Vec<EntityType> = record.frames[0].entities.iter().map(|e| e.kind).collect();
        for t in &record.transitions {
            if t.events.d_min < DANGER_DISTANCE {
                danger_steps += 1;
            }
            for (&d, &kind) in t.events.entity_separation.iter().zip(&kinds) {
                if (0.0..DANGER_DISTANCE).contains(&d) {
                    danger[kind].push(d);
                }
            }
        }
        EpisodeSummary {
            seed,
            outcome: record.outcome,
            time: record.duration(),
            steps: record.len(),
            discounted_reward: record.discounted_reward(gamma),
            danger,
            danger_time: danger_steps as f64 * record.dt,
        }
    }
}

/// Running sums; merging in episode order gives the same result for any
/// worker count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub episodes: u64,
    pub successes: u64,
    pub collisions: PerType<u64>,
    pub timeouts: u64,
    pub success_time: f64,
    pub danger_sum: PerType<f64>,
    pub danger_count: PerType<u64>,
    pub danger_time: f64,
    pub reward: f64,
}

impl MetricsAccumulator {
    pub fn push(&mut self, ep: &EpisodeSummary) {
        self.episodes += 1;
        match ep.outcome {
            EpisodeStatus::ReachedGoal => {
                self.successes += 1;
                self.success_time += ep.time;
            }
            EpisodeStatus::Collision(e) => self.collisions[e] += 1,
            EpisodeStatus::Timeout | EpisodeStatus::Running => self.timeouts += 1,
        }
        for e in EntityType::ALL {
            self.danger_sum[e] += ep.danger[e].iter().sum::<f64>();
            self.danger_count[e] += ep.danger[e].len() as u64;
        }
        self.danger_time += ep.danger_time;
        self.reward += ep.discounted_reward;
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.episodes += other.episodes;
        self.successes += other.successes;
        self.timeouts += other.timeouts;
        self.success_time += other.success_time;
        self.danger_time += other.danger_time;
        self.reward += other.reward;
        for e in EntityType::ALL {
            self.collisions[e] += other.collisions[e];
            self.danger_sum[e] += other.danger_sum[e];
            self.danger_count[e] += other.danger_count[e];
        }
    }

    pub fn finish(&self) -> Metrics {
        let n = self.episodes.max(1) as f64;
        let cr_by_type = self.collisions.map(|_, &c| c as f64 / n);
        let cr = cr_by_type.adult + cr_by_type.bicycle + cr_by_type.child + cr_by_type.obstacle;
        Metrics {
            episodes: self.episodes,
            sr: self.successes as f64 / n,
            cr,
            cr_by_type,
            timeout_rate: self.timeouts as f64 / n,
            time: (self.successes > 0).then(|| self.success_time / self.successes as f64),
            dd: PerType::from_fn(|e| {
                (self.danger_count[e] > 0).then(|| self.danger_sum[e] / self.danger_count[e] as f64)
            }),
            danger_time: self.danger_time / n,
            reward: self.reward / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: u64,
    pub sr: f64,
    pub cr: f64,
    pub cr_by_type: PerType<f64>,
    pub timeout_rate: f64,
    /// Mean time to goal over successful episodes; `None` when none succeed.
    pub time: Option<f64>,
    /// Mean danger distance per type; `None` without samples.
    pub dd: PerType<Option<f64>>,
    pub danger_time: f64,
    /// Mean discounted episode reward.
    pub reward: f64,
}

impl Metrics {
    pub fn rates(&self) -> Rates {
        Rates {
            sr: self.sr,
            cr: self.cr_by_type,
        }
    }

    pub fn weighted_score(&self) -> f64 {
        self.rates().weighted_score()
    }
}

/// The success and per-type collision rates the weighted score reads.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rates {
    pub sr: f64,
    pub cr: PerType<f64>,
}

impl Rates {
    pub fn weighted_score(&self) -> f64 {
        weighted_score(self.sr, &self.cr)
    }
}

impl Add for Rates {
    type Output = Rates;

    fn add(self, rhs: Rates) -> Rates {
        Rates {
            sr: self.sr + rhs.sr,
            cr: PerType::from_fn(|e| self.cr[e] + rhs.cr[e]),
        }
    }
}

/// `SR - CR(A) - 4 CR(C) - 2 CR(B) - 0.5 CR(O)`.
pub fn weighted_score(sr: f64, cr: &PerType<f64>) -> f64 {
    sr - cr.adult - 4.0 * cr.child - 2.0 * cr.bicycle - 0.5 * cr.obstacle
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Density per bin over `[0, DANGER_DISTANCE)`; integrates to 1.
    pub densities: Vec<f64>,
    pub count: usize,
}

impl Histogram {
    pub fn bins() -> usize {
        (DANGER_DISTANCE / HISTOGRAM_BIN_WIDTH).round() as usize
    }

    pub fn integral(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_width
    }
}

/// Density histogram of danger distances; values outside
/// `[0, DANGER_DISTANCE)` are ignored and `None` marks no data.
pub fn histogram(values: &[f64]) -> Option<Histogram> {
    let bins = Histogram::bins();
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for &v in values {
        if (0.0..DANGER_DISTANCE).contains(&v) {
            let i = ((v / HISTOGRAM_BIN_WIDTH) as usize).min(bins - 1);
            counts[i] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return None;
    }
    let scale = 1.0 / (total as f64 * HISTOGRAM_BIN_WIDTH);
    Some(Histogram {
        bin_width: HISTOGRAM_BIN_WIDTH,
        densities: counts.iter().map(|&c| c as f64 * scale).collect(),
        count: total,
    })
}

pub fn danger_histogram(distances: &PerType<Vec<f64>>) -> PerType<Option<Histogram>> {
    distances.map(|_, v| histogram(v))
}

/// Everything an evaluation run needs besides the robot policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalContext {
    pub reward: RewardConfig,
    pub orca: OrcaParams,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub episodes: Vec<EpisodeSummary>,
}

impl Evaluation {
    pub fn danger_samples(&self) -> PerType<Vec<f64>> {
        let mut out = PerType::<Vec<f64>>::default();
        for ep in &self.episodes {
            for e in EntityType::ALL {
                out[e].extend_from_slice(&ep.danger[e]);
            }
        }
        out
    }
}

/// Builds a fresh robot controller for the scenario with the given seed.
pub type ControllerFactory<'a> = dyn Fn(u64) -> Box<dyn RobotController + 'a> + Sync + 'a;

/// Plays one scenario with a fresh controller.
pub fn play(
    make_controller: &ControllerFactory<'_>,
    config: &ScenarioConfig,
    seed: u64,
    ctx: &EvalContext,
) -> Result<EpisodeRecord> {
    let world = generate_scenario(config, seed)?;
    let mut controller = make_controller(seed);
    Ok(run_with(world, controller.as_mut(), &Orca::new(ctx.orca), &ctx.reward))
}

/// Runs every scenario of `set` with controllers from `make_controller`.
pub fn evaluate(
    make_controller: &ControllerFactory<'_>,
    set: &ScenarioSet,
    ctx: &EvalContext,
    pool: &WorkerPool,
) -> Result<Evaluation> {
    let results = pool.map(0..set.len() as u64, |i| {
        let seed = set.seeds[i as usize];
        play(make_controller, &set.config, seed, ctx).map(|r| EpisodeSummary::from_record(seed, &r, ctx.gamma))
    });
    let episodes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut acc = MetricsAccumulator::default();
    for ep in &episodes {
        acc.push(ep);
    }
    Ok(Evaluation {
        metrics: acc.finish(),
        episodes,
    })
}

/// Greedy evaluation of a value estimator.
pub fn evaluate_value_policy(
    estimator: &dyn ValueEstimator,
    set: &ScenarioSet,
    ctx: &EvalContext,
    pool: &WorkerPool,
) -> Result<Evaluation> {
    let make = |_| -> Box<dyn RobotController + '_> {
        Box::new(ValuePolicy::greedy(estimator, &ctx.reward, ctx.gamma))
    };
    evaluate(&make, set, ctx, pool)
}
