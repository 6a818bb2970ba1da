//! Running one episode with an arbitrary robot controller and recording it.

use glam::DVec2;

use crate::dynamics::{self, episode_status, EntityPolicy, EpisodeStatus, StepEvents, WorldState};
use crate::reward::{reward_with_branch, RewardBranch, RewardConfig, RewardContext};
use crate::state::{to_robot_frame, JointState};

/// Chooses the robot's velocity each step.
pub trait RobotController {
    fn command(&mut self, world: &WorldState) -> DVec2;
}

impl<F: FnMut(&WorldState) -> DVec2> RobotController for F {
    fn command(&mut self, world: &WorldState) -> DVec2 {
        self(world)
    }
}

/// `(s_t, a_t, r_t, s_{t+dt})` plus the geometry that produced `r_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: JointState,
    pub velocity: DVec2,
    pub reward: f64,
    pub branch: RewardBranch,
    pub next_state: JointState,
    pub events: StepEvents,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    /// World snapshots; `frames[k + 1]` follows transition `k`.
    pub frames: Vec<WorldState>,
    pub outcome: EpisodeStatus,
    pub dt: f64,
    pub v_pref: f64,
    pub d_max: f64,
}

impl EpisodeRecord {
    pub fn duration(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.time)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Per-step discount `gamma^(dt * v_pref)`.
    pub fn step_discount(&self, gamma: f64) -> f64 {
        gamma.powf(self.dt * self.v_pref)
    }

    /// Discounted return from every step to the end of the episode.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let discount = self.step_discount(gamma);
        let mut out = vec![0.0; self.transitions.len()];
        let mut acc = 0.0;
        for (k, t) in self.transitions.iter().enumerate().rev() {
            acc = t.reward + discount * acc;
            out[k] = acc;
        }
        out
    }

    /// Discounted return of the whole episode.
    pub fn discounted_reward(&self, gamma: f64) -> f64 {
        self.returns(gamma).first().copied().unwrap_or(0.0)
    }
}

/// Plays `world` to termination.
pub fn run_with(
    world: WorldState,
    controller: &mut dyn RobotController,
    entity_policy: &dyn EntityPolicy,
    reward_config: &RewardConfig,
) -> EpisodeRecord {
    let dt = world.dt;
    let v_pref = world.robot.v_pref;
    let d_max = world.d_max;
    let mut transitions = Vec::new();
    let mut state = to_robot_frame(&world.robot, &world.entities);
    let mut frames = vec![world];
    let outcome = loop {
        let current = frames.last().expect("at least the initial frame");
        let velocity = controller.command(current);
        let (next, events) = dynamics::step(current, velocity, entity_policy);
        let ctx = RewardContext {
            t: next.time,
            d_g: next.robot.goal_distance(),
            d_max,
            dt,
        };
        let (reward, branch) = reward_with_branch(&events, &ctx, reward_config);
        let next_state = to_robot_frame(&next.robot, &next.entities);
        let status = episode_status(&events);
        transitions.push(Transition {
            state: std::mem::replace(&mut state, next_state.clone()),
            velocity,
            reward,
            branch,
            next_state,
            events,
        });
        frames.push(next);
        if status.is_terminal() {
            break status;
        }
    };
    EpisodeRecord {
        transitions,
        frames,
        outcome,
        dt,
        v_pref,
        d_max,
    }
}
