//! One-step lookahead over the discrete action space.
//!
//! Each candidate action is scored as `R(s, a) + gamma^(dt * v_pref) * V(s')`
//! where `s'` comes from a constant-velocity prediction of the crowd.

use glam::DVec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_with_velocities, StepEvents, WorldState};
use crate::episode::RobotController;
use crate::error::{Error, Result};
use crate::reward::{reward, RewardConfig, RewardContext};
use crate::state::{build_action_space, to_robot_frame, ActionSpace, JointState};
use crate::valuenet::{NetworkInput, ValueEstimator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub gamma: f64,
    pub epsilon: f64,
}

impl PolicyConfig {
    pub fn greedy(gamma: f64) -> Self {
        PolicyConfig { gamma, epsilon: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-step discount for a robot with the given preferred speed.
pub fn step_discount(gamma: f64, dt: f64, v_pref: f64) -> f64 {
    gamma.powf(dt * v_pref)
}

/// World after the robot moves at `velocity` for one step while every
/// entity keeps its current velocity, with the step's proximity events.
pub fn propagate(world: &WorldState, velocity: DVec2) -> (WorldState, StepEvents) {
    let velocities: Vec<DVec2> = world
        .entities
        .iter()
        .map(|e| if e.kind.is_static() { DVec2::ZERO } else { e.state.velocity })
        .collect();
    step_with_velocities(world, velocity, &velocities)
}

/// Predicted robot-centric observation after one step.
pub fn propagate_joint(world: &WorldState, velocity: DVec2) -> JointState {
    let (next, _) = propagate(world, velocity);
    to_robot_frame(&next.robot, &next.entities)
}

/// Lookahead score of every action in index order.
pub fn action_scores(
    world: &WorldState,
    actions: &ActionSpace,
    estimator: &dyn ValueEstimator,
    reward_config: &RewardConfig,
    gamma: f64,
) -> Vec<f64> {
    let discount = step_discount(gamma, world.dt, world.robot.v_pref);
    let include_type = estimator.include_entity_type();
    let mut rewards = Vec::with_capacity(actions.len());
    let mut inputs = Vec::with_capacity(actions.len());
    for action in &actions.actions {
        let (next, events) = propagate(world, action.velocity());
        let ctx = RewardContext {
            t: next.time,
            d_g: next.robot.goal_distance(),
            d_max: world.d_max,
            dt: world.dt,
        };
        rewards.push(reward(&events, &ctx, reward_config));
        let joint = to_robot_frame(&next.robot, &next.entities);
        inputs.push(NetworkInput::from_joint(&joint, include_type));
    }
    let values = estimator.values(&inputs);
    rewards
        .iter()
        .zip(&values)
        .map(|(r, v)| r + discount * v)
        .collect()
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice. The rng is consulted only when `epsilon > 0`.
pub fn select_action(
    world: &WorldState,
    actions: &ActionSpace,
    estimator: &dyn ValueEstimator,
    reward_config: &RewardConfig,
    config: &PolicyConfig,
    rng: &mut impl Rng,
) -> usize {
    if config.epsilon > 0.0 && rng.random::<f64>() < config.epsilon {
        return rng.random_range(0..actions.len());
    }
    argmax(&action_scores(world, actions, estimator, reward_config, config.gamma))
}

/// Robot controller backed by a value estimator.
pub struct ValuePolicy<'a, R: Rng> {
    estimator: &'a dyn ValueEstimator,
    reward_config: &'a RewardConfig,
    config: PolicyConfig,
    actions: Option<ActionSpace>,
    rng: R,
    /// Chosen action indices in episode order.
    pub chosen: Vec<usize>,
}

impl<'a, R: Rng> ValuePolicy<'a, R> {
    pub fn new(
        estimator: &'a dyn ValueEstimator,
        reward_config: &'a RewardConfig,
        config: PolicyConfig,
        rng: R,
    ) -> Self {
        ValuePolicy {
            estimator,
            reward_config,
            config,
            actions: None,
            rng,
            chosen: Vec::new(),
        }
    }
}

impl<'a> ValuePolicy<'a, ChaCha8Rng> {
    /// Pure exploitation; the rng is never consulted.
    pub fn greedy(estimator: &'a dyn ValueEstimator, reward_config: &'a RewardConfig, gamma: f64) -> Self {
        Self::new(estimator, reward_config, PolicyConfig::greedy(gamma), ChaCha8Rng::seed_from_u64(0))
    }
}

impl<R: Rng> RobotController for ValuePolicy<'_, R> {
    fn command(&mut self, world: &WorldState) -> DVec2 {
        let v_pref = world.robot.v_pref;
        if self.actions.as_ref().is_none_or(|a| a.v_pref() != v_pref) {
            self.actions = Some(build_action_space(v_pref).expect("robot v_pref is validated positive"));
        }
        let actions = self.actions.as_ref().expect("just built");
        let index = select_action(
            world,
            actions,
            self.estimator,
            self.reward_config,
            &self.config,
            &mut self.rng,
        );
        self.chosen.push(index);
        actions.actions[index].velocity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{AgentState, Entity, EntityType};

    struct Constant(f64);

    impl ValueEstimator for Constant {
        fn include_entity_type(&self) -> bool {
            true
        }
        fn values(&self, inputs: &[NetworkInput]) -> Vec<f64> {
            vec![self.0; inputs.len()]
        }
    }

    /// Scores states by how close the robot is to its goal.
    struct GoalSeeking;

    impl ValueEstimator for GoalSeeking {
        fn include_entity_type(&self) -> bool {
            false
        }
        fn values(&self, inputs: &[NetworkInput]) -> Vec<f64> {
            inputs.iter().map(|i| -i.robot[0]).collect()
        }
    }

    fn world(entities: Vec<Entity>) -> WorldState {
        WorldState {
            step: 0,
            time: 0.0,
            dt: 0.25,
            t_max: 30.0,
            robot: AgentState {
                position: DVec2::new(0.0, -5.0),
                velocity: DVec2::ZERO,
                radius: 0.3,
                goal: DVec2::new(0.0, 5.0),
                v_pref: 1.0,
                heading: std::f64::consts::FRAC_PI_2,
            },
            entities,
            invisible_robot: true,
            d_max: 10.0,
        }
    }

    fn entity(p: (f64, f64), v: (f64, f64), kind: EntityType) -> Entity {
        Entity {
            state: AgentState {
                position: DVec2::new(p.0, p.1),
                velocity: DVec2::new(v.0, v.1),
                radius: 0.3,
                goal: DVec2::new(p.0 + 10.0 * v.0, p.1 + 10.0 * v.1),
                v_pref: if kind.is_static() { 0.0 } else { 1.0 },
                heading: 0.0,
            },
            kind,
        }
    }

    #[test]
    fn goalward_step_on_static_scene() {
        let w = world(vec![entity((4.0, 0.0), (0.0, 0.0), EntityType::Obstacle)]);
        let next = propagate_joint(&w, DVec2::new(0.0, 1.0));
        assert!((next.robot.goal_distance - (10.0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn co_moving_entity_keeps_relative_position() {
        let w = world(vec![entity((2.0, -5.0), (0.0, 1.0), EntityType::Adult)]);
        let before = to_robot_frame(&w.robot, &w.entities);
        let after = propagate_joint(&w, DVec2::new(0.0, 1.0));
        assert!((before.entities[0].px - after.entities[0].px).abs() < 1e-12);
        assert!((before.entities[0].py - after.entities[0].py).abs() < 1e-12);
    }

    #[test]
    fn zero_action_twice_matches_double_step() {
        let mut w = world(vec![entity((2.0, 1.0), (0.3, -0.7), EntityType::Child)]);
        let (once, _) = propagate(&w, DVec2::ZERO);
        let (twice, _) = propagate(&once, DVec2::ZERO);
        w.dt *= 2.0;
        let (double, _) = propagate(&w, DVec2::ZERO);
        let a = twice.entities[0].state.position;
        let b = double.entities[0].state.position;
        assert!((a - b).length() < 1e-12);
    }

    #[test]
    fn zero_value_empty_scene_picks_first_action() {
        let w = world(vec![]);
        let actions = build_action_space(1.0).unwrap();
        let scores = action_scores(&w, &actions, &Constant(0.0), &RewardConfig::default(), 0.9);
        assert_eq!(scores.len(), 80);
        assert!(scores.iter().all(|&s| s == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PolicyConfig::greedy(0.9);
        assert_eq!(select_action(&w, &actions, &Constant(0.0), &RewardConfig::default(), &cfg, &mut rng), 0);
    }

    #[test]
    fn constant_shift_keeps_argmax() {
        let w = world(vec![entity((0.5, -3.0), (0.0, -1.0), EntityType::Adult)]);
        let actions = build_action_space(1.0).unwrap();
        let base = action_scores(&w, &actions, &GoalSeeking, &RewardConfig::default(), 0.9);
        let shifted: Vec<f64> = base.iter().map(|s| s + 123.0).collect();
        assert_eq!(argmax(&base), argmax(&shifted));
    }

    #[test]
    fn goal_seeking_value_moves_toward_goal() {
        let w = world(vec![]);
        let actions = build_action_space(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = PolicyConfig::greedy(0.9);
        let i = select_action(&w, &actions, &GoalSeeking, &RewardConfig::default(), &cfg, &mut rng);
        let (next, _) = propagate(&w, actions.actions[i].velocity());
        assert!(next.robot.goal_distance() < w.robot.goal_distance());
    }

    #[test]
    fn full_exploration_is_uniform() {
        let w = world(vec![]);
        let actions = build_action_space(1.0).unwrap();
        let cfg = PolicyConfig { gamma: 0.9, epsilon: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0u32; 80];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&w, &actions, &Constant(0.0), &RewardConfig::default(), &cfg, &mut rng)] += 1;
        }
        let expected = draws as f64 / 80.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 79 degrees of freedom
        assert!(chi2 < 111.1, "chi2 = {chi2}");
    }

    #[test]
    fn discount_depends_on_v_pref() {
        assert!((step_discount(0.9, 0.25, 1.0) - 0.9f64.powf(0.25)).abs() < 1e-15);
        assert!(step_discount(0.9, 0.25, 2.0) < step_discount(0.9, 0.25, 1.0));
    }
}
