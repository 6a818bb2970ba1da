//! Browser bindings: a steppable crowd simulation, the per-type reward
//! landscape and the robot's 80-action lookahead scores.

use glam::DVec2;
use wasm_bindgen::prelude::*;

use crowdnav::dynamics::{
    episode_status, generate_scenario, step, EpisodeStatus, Layout, ScenarioConfig, WorldState,
};
use crowdnav::episode::RobotController;
use crowdnav::orca::{Orca, OrcaController, OrcaParams};
use crowdnav::planner::{action_scores, argmax};
use crowdnav::reward::{reward, RewardConfig, RewardContext};
use crowdnav::state::build_action_space;
use crowdnav::valuenet::{load_checkpoint_bytes, NetworkShape, ValueNetwork};
use crowdnav::{AgentState, Entity, EntityType, PerType};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn status_code(s: EpisodeStatus) -> i32 {
    match s {
        EpisodeStatus::Running => 0,
        EpisodeStatus::ReachedGoal => 1,
        EpisodeStatus::Collision(_) => 2,
        EpisodeStatus::Timeout => 3,
    }
}

/// A crowd scenario stepped on demand from JavaScript.
#[wasm_bindgen]
pub struct Simulation {
    world: WorldState,
    status: EpisodeStatus,
    reward_config: RewardConfig,
    orca: OrcaParams,
    network: Option<ValueNetwork>,
    gamma: f64,
}

#[wasm_bindgen]
impl Simulation {
    /// `layout` is `"square"` or `"circle"`; `size` is the side or radius.
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u64,
        layout: &str,
        size: f64,
        adults: usize,
        bicycles: usize,
        children: usize,
        obstacles: usize,
    ) -> Result<Simulation, JsValue> {
        let layout = match layout {
            "circle" => Layout::CircleCrossing { radius: size },
            _ => Layout::SquareCrossing { side: size },
        };
        let config = ScenarioConfig {
            layout,
            counts: PerType {
                adult: adults,
                bicycle: bicycles,
                child: children,
                obstacle: obstacles,
            },
            ..ScenarioConfig::default()
        };
        let world = generate_scenario(&config, seed).map_err(js_err)?;
        Ok(Simulation {
            world,
            status: EpisodeStatus::Running,
            reward_config: RewardConfig::default(),
            orca: OrcaParams::default(),
            network: None,
            gamma: 0.9,
        })
    }

    /// Uses a trained checkpoint for the robot instead of ORCA.
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), JsValue> {
        let ck = load_checkpoint_bytes(bytes).map_err(js_err)?;
        self.network = Some(ck.network);
        Ok(())
    }

    /// Random, untrained network; shows the lookahead mechanics only.
    pub fn use_random_network(&mut self, seed: u64) -> Result<(), JsValue> {
        self.network = Some(ValueNetwork::new(NetworkShape::standard(true), seed).map_err(js_err)?);
        Ok(())
    }

    pub fn has_network(&self) -> bool {
        self.network.is_some()
    }

    /// Advances one step. Returns 0 running, 1 goal, 2 collision, 3 timeout.
    pub fn step(&mut self) -> i32 {
        if self.status.is_terminal() {
            return status_code(self.status);
        }
        let velocity = match &self.network {
            Some(net) => {
                let actions = build_action_space(self.world.robot.v_pref).expect("positive v_pref");
                let scores = action_scores(&self.world, &actions, net, &self.reward_config, self.gamma);
                actions.actions[argmax(&scores)].velocity()
            }
            None => OrcaController { params: self.orca }.command(&self.world),
        };
        let (next, events) = step(&self.world, velocity, &Orca::new(self.orca));
        self.world = next;
        self.status = episode_status(&events);
        status_code(self.status)
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    /// Flat `[x, y, radius, type_code, goal_x, goal_y]` per agent; the robot
    /// comes first with type code -1.
    pub fn agents(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(6 * (1 + self.world.entities.len()));
        let mut push = |a: &AgentState, code: f64| {
            out.extend_from_slice(&[a.position.x, a.position.y, a.radius, code, a.goal.x, a.goal.y]);
        };
        push(&self.world.robot, -1.0);
        for e in &self.world.entities {
            push(&e.state, e.kind.code() as f64);
        }
        out
    }

    /// Lookahead score of each of the 80 actions at the current state, in
    /// action-index order (speed-major, 16 headings per speed).
    pub fn action_scores(&self) -> Vec<f64> {
        match &self.network {
            Some(net) => {
                let actions = build_action_space(self.world.robot.v_pref).expect("positive v_pref");
                action_scores(&self.world, &actions, net, &self.reward_config, self.gamma)
            }
            None => Vec::new(),
        }
    }
}

/// One-step reward for a robot at every cell of an `n x n` grid spanning
/// `[-extent, extent]^2`, moving toward a goal 5 m above the grid while a
/// single resting entity of `type_code` sits at the origin. Row-major, top
/// row first.
#[wasm_bindgen]
pub fn reward_landscape(type_code: u8, n: usize, extent: f64) -> Result<Vec<f64>, JsValue> {
    landscape(type_code, n, extent).map_err(js_err)
}

fn landscape(type_code: u8, n: usize, extent: f64) -> Result<Vec<f64>, &'static str> {
    let kind = EntityType::from_code(type_code).ok_or("type code must be 0..3")?;
    let config = RewardConfig::default();
    let entity = Entity {
        state: AgentState {
            position: DVec2::ZERO,
            velocity: DVec2::ZERO,
            radius: 0.3,
            goal: DVec2::ZERO,
            v_pref: 0.0,
            heading: 0.0,
        },
        kind,
    };
    let dt = 0.25;
    let goal = DVec2::new(0.0, extent + 5.0);
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let t = |k: usize| -extent + 2.0 * extent * k as f64 / (n.max(2) - 1) as f64;
            let p = DVec2::new(t(col), -t(row));
            let robot = AgentState {
                position: p,
                velocity: DVec2::ZERO,
                radius: 0.3,
                goal,
                v_pref: 1.0,
                heading: 0.0,
            };
            let events = crowdnav::dynamics::transition_events(
                &robot,
                DVec2::ZERO,
                std::slice::from_ref(&entity),
                &[DVec2::ZERO],
                dt,
                dt,
                30.0,
            );
            let ctx = RewardContext {
                t: dt,
                d_g: (goal - p).length(),
                d_max: (goal - p).length(),
                dt,
            };
            out.push(reward(&events, &ctx, &config));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_runs_to_termination() {
        let mut sim = Simulation::new(3, "square", 11.0, 3, 1, 1, 0).unwrap();
        let mut code = 0;
        for _ in 0..200 {
            code = sim.step();
            if code != 0 {
                break;
            }
        }
        assert_ne!(code, 0);
        assert_eq!(sim.agents().len(), 6 * 6);
    }

    #[test]
    fn landscape_penalises_proximity_by_type() {
        let n = 21;
        let adult = landscape(0, n, 1.0).unwrap();
        let child = landscape(2, n, 1.0).unwrap();
        // centre cell overlaps the entity
        let c = n / 2 * n + n / 2;
        assert_eq!(adult[c], -1.0);
        assert_eq!(child[c], -2.0);
        assert!(landscape(9, n, 1.0).is_err());
    }

    #[test]
    fn random_network_scores_all_actions() {
        let mut sim = Simulation::new(1, "circle", 4.0, 2, 0, 1, 0).unwrap();
        assert!(sim.action_scores().is_empty());
        sim.use_random_network(0).unwrap();
        assert_eq!(sim.action_scores().len(), 80);
        sim.step();
    }
}
