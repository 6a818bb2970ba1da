//! The simulated world: scenario layouts, holonomic time stepping,
//! moving-disc separation and episode termination.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use glam::DVec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{AgentState, Entity, EntityType, PerType};

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        UniformRange { min, max }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    SquareCrossing { side: f64 },
    CircleCrossing { radius: f64 },
}

impl Layout {
    fn half_extent(&self) -> f64 {
        match *self {
            Layout::SquareCrossing { side } => side / 2.0,
            Layout::CircleCrossing { radius } => radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub radius: f64,
    pub v_pref: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub layout: Layout,
    pub counts: PerType<usize>,
    pub radius: PerType<UniformRange>,
    pub v_pref: PerType<UniformRange>,
    pub invisible_robot: bool,
    pub robot: RobotSpec,
    pub dt: f64,
    pub t_max: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            layout: Layout::SquareCrossing { side: 11.0 },
            counts: PerType {
                adult: 3,
                bicycle: 1,
                child: 1,
                obstacle: 0,
            },
            radius: PerType {
                adult: UniformRange::new(0.25, 0.40),
                bicycle: UniformRange::new(0.35, 0.60),
                child: UniformRange::new(0.15, 0.30),
                obstacle: UniformRange::new(0.2, 0.5),
            },
            v_pref: PerType {
                adult: UniformRange::new(0.8, 1.4),
                bicycle: UniformRange::new(1.2, 2.4),
                child: UniformRange::new(0.6, 1.6),
                obstacle: UniformRange::new(0.0, 0.0),
            },
            invisible_robot: true,
            robot: RobotSpec {
                radius: 0.3,
                v_pref: 1.0,
            },
            dt: 0.25,
            t_max: 30.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max > 0.0) {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if !(self.robot.radius > 0.0 && self.robot.v_pref > 0.0) {
            return bad("robot radius and v_pref must be positive".into());
        }
        if !(self.layout.half_extent() > 0.0) {
            return bad("layout size must be positive".into());
        }
        for e in EntityType::ALL {
            let r = self.radius[e];
            if !(r.min > 0.0 && r.max >= r.min) {
                return bad(format!("{e} radius range invalid: {r:?}"));
            }
            let v = self.v_pref[e];
            if e.is_static() {
                if v.min != 0.0 || v.max != 0.0 {
                    return bad("obstacle v_pref must be 0".into());
                }
            } else if !(v.min > 0.0 && v.max >= v.min) {
                return bad(format!("{e} v_pref range invalid: {v:?}"));
            }
        }
        Ok(())
    }

    pub fn entity_count(&self) -> usize {
        EntityType::ALL.iter().map(|&e| self.counts[e]).sum()
    }
}

/// Ground truth of one simulation instant.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub step: u32,
    pub time: f64,
    pub dt: f64,
    pub t_max: f64,
    pub robot: AgentState,
    pub entities: Vec<Entity>,
    pub invisible_robot: bool,
    /// Start-to-goal distance of the robot, frozen at t = 0.
    pub d_max: f64,
}

/// Per-step proximity and termination facts.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEvents {
    /// Minimum surface separation per type over the step; `+inf` if absent.
    pub separation: PerType<f64>,
    /// Minimum surface separation per entity, in entity order.
    pub entity_separation: Vec<f64>,
    pub d_min: f64,
    /// Type of the closest entity, `None` in an empty scene.
    pub closest: Option<EntityType>,
    pub reached_goal: bool,
    pub timed_out: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EpisodeStatus {
    Running,
    ReachedGoal,
    Collision(EntityType),
    Timeout,
}

impl EpisodeStatus {
    pub fn is_terminal(&self) -> bool {
        *self != EpisodeStatus::Running
    }
}

/// Minimum over `s in [0, dt]` of the surface distance between two discs
/// moving at constant velocity. Non-positive means contact.
pub fn min_separation(
    pa: DVec2,
    va: DVec2,
    ra: f64,
    pb: DVec2,
    vb: DVec2,
    rb: f64,
    dt: f64,
) -> f64 {
    let p = pa - pb;
    let v = va - vb;
    let vv = v.length_squared();
    let s = if vv > 0.0 {
        (-p.dot(v) / vv).clamp(0.0, dt)
    } else {
        0.0
    };
    (p + v * s).length() - (ra + rb)
}

/// StepEvents for a robot moving at `robot_velocity` from `robot` while
/// each entity moves at `entity_velocities[i]` from its current position.
pub fn transition_events(
    robot: &AgentState,
    robot_velocity: DVec2,
    entities: &[Entity],
    entity_velocities: &[DVec2],
    dt: f64,
    new_time: f64,
    t_max: f64,
) -> StepEvents {
    debug_assert_eq!(entities.len(), entity_velocities.len());
    let mut separation = PerType::splat(f64::INFINITY);
    let mut entity_separation = Vec::with_capacity(entities.len());
    for (e, &v) in entities.iter().zip(entity_velocities) {
        let d = min_separation(
            robot.position,
            robot_velocity,
            robot.radius,
            e.state.position,
            v,
            e.state.radius,
            dt,
        );
        entity_separation.push(d);
        if d < separation[e.kind] {
            separation[e.kind] = d;
        }
    }
    let mut d_min = f64::INFINITY;
    let mut closest = None;
    for e in EntityType::ALL {
        if separation[e] < d_min {
            d_min = separation[e];
            closest = Some(e);
        }
    }
    let end = robot.position + robot_velocity * dt;
    let reached_goal = (end - robot.goal).length() <= robot.radius;
    let timed_out = !reached_goal && new_time >= t_max - 1e-9;
    StepEvents {
        separation,
        entity_separation,
        d_min,
        closest,
        reached_goal,
        timed_out,
    }
}

/// Collision takes precedence over reaching the goal, which takes
/// precedence over timing out.
pub fn episode_status(events: &StepEvents) -> EpisodeStatus {
    if events.d_min <= 0.0 {
        // d_min is finite here, so `closest` is set
        EpisodeStatus::Collision(events.closest.unwrap_or(EntityType::Obstacle))
    } else if events.reached_goal {
        EpisodeStatus::ReachedGoal
    } else if events.timed_out {
        EpisodeStatus::Timeout
    } else {
        EpisodeStatus::Running
    }
}

/// Velocity selection for simulated entities.
pub trait EntityPolicy: Sync {
    fn velocity(&self, agent: &AgentState, neighbors: &[&AgentState], dt: f64) -> DVec2;
}

/// Policy that walks straight to the goal ignoring everyone.
#[derive(Clone, Copy, Debug, Default)]
pub struct StraightLine;

impl EntityPolicy for StraightLine {
    fn velocity(&self, agent: &AgentState, _neighbors: &[&AgentState], dt: f64) -> DVec2 {
        preferred_velocity(agent, dt)
    }
}

/// Unit vector to goal times `v_pref`, shortened so one step cannot
/// overshoot the goal.
pub fn preferred_velocity(agent: &AgentState, dt: f64) -> DVec2 {
    let to_goal = agent.goal - agent.position;
    let dist = to_goal.length();
    if dist <= 0.0 || agent.v_pref <= 0.0 {
        return DVec2::ZERO;
    }
    to_goal / dist * agent.v_pref.min(dist / dt)
}

fn advance(agent: &AgentState, velocity: DVec2, dt: f64) -> AgentState {
    let mut next = *agent;
    next.position += velocity * dt;
    next.velocity = velocity;
    if velocity.length_squared() > 0.0 {
        next.heading = velocity.y.atan2(velocity.x);
    }
    next
}

/// Velocities every entity picks for the next step. Obstacles stay still;
/// the robot is hidden from entities when `invisible_robot` is set.
pub fn entity_velocities(world: &WorldState, policy: &dyn EntityPolicy) -> Vec<DVec2> {
    let mut neighbors: Vec<&AgentState> = Vec::with_capacity(world.entities.len());
    world
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.kind.is_static() {
                return DVec2::ZERO;
            }
            neighbors.clear();
            neighbors.extend(
                world
                    .entities
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, o)| &o.state),
            );
            if !world.invisible_robot {
                neighbors.push(&world.robot);
            }
            policy.velocity(&e.state, &neighbors, world.dt)
        })
        .collect()
}

/// Advances the world by one `dt`.
pub fn step(
    world: &WorldState,
    robot_velocity: DVec2,
    policy: &dyn EntityPolicy,
) -> (WorldState, StepEvents) {
    let velocities = entity_velocities(world, policy);
    step_with_velocities(world, robot_velocity, &velocities)
}

pub(crate) fn step_with_velocities(
    world: &WorldState,
    robot_velocity: DVec2,
    velocities: &[DVec2],
) -> (WorldState, StepEvents) {
    let next_step = world.step + 1;
    let new_time = next_step as f64 * world.dt;
    let events = transition_events(
        &world.robot,
        robot_velocity,
        &world.entities,
        velocities,
        world.dt,
        new_time,
        world.t_max,
    );
    let entities = world
        .entities
        .iter()
        .zip(velocities)
        .map(|(e, &v)| Entity {
            state: advance(&e.state, v, world.dt),
            kind: e.kind,
        })
        .collect();
    let next = WorldState {
        step: next_step,
        time: new_time,
        dt: world.dt,
        t_max: world.t_max,
        robot: advance(&world.robot, robot_velocity, world.dt),
        entities,
        invisible_robot: world.invisible_robot,
        d_max: world.d_max,
    };
    (next, events)
}

const PLACEMENT_ATTEMPTS: usize = 100;
const PLACEMENT_CLEARANCE: f64 = 0.2;

fn clear_of(p: DVec2, r: f64, placed: &[(DVec2, f64)]) -> bool {
    placed
        .iter()
        .all(|&(q, rq)| (p - q).length() - r - rq >= PLACEMENT_CLEARANCE)
}

fn point_on_square_side(side: usize, half: f64, t: f64) -> DVec2 {
    match side {
        0 => DVec2::new(-half, t),
        1 => DVec2::new(half, t),
        2 => DVec2::new(t, -half),
        _ => DVec2::new(t, half),
    }
}

fn opposite_side(side: usize) -> usize {
    side ^ 1
}

/// Seeded scenario: robot crosses the layout along the y-axis, dynamic
/// entities start on the perimeter with goals on the opposite side and
/// obstacles sit still inside.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<WorldState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = config.layout.half_extent();
    let start = DVec2::new(0.0, -half);
    let goal = DVec2::new(0.0, half);
    let robot = AgentState {
        position: start,
        velocity: DVec2::ZERO,
        radius: config.robot.radius,
        goal,
        v_pref: config.robot.v_pref,
        heading: std::f64::consts::FRAC_PI_2,
    };

    // the robot start is kept clear of everything, its goal of obstacles
    let mut placed = vec![(start, robot.radius)];
    let mut entities = Vec::with_capacity(config.entity_count());
    for kind in EntityType::ALL {
        for n in 0..config.counts[kind] {
            let radius = config.radius[kind].sample(&mut rng);
            let v_pref = config.v_pref[kind].sample(&mut rng);
            let mut chosen = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let (p, g) = if kind.is_static() {
                    let inner = 0.8 * half;
                    let p = match config.layout {
                        Layout::SquareCrossing { .. } => DVec2::new(
                            rng.random_range(-inner..=inner),
                            rng.random_range(-inner..=inner),
                        ),
                        Layout::CircleCrossing { .. } => {
                            let a = rng.random_range(0.0..TAU);
                            let rr = inner * rng.random::<f64>().sqrt();
                            DVec2::from_angle(a) * rr
                        }
                    };
                    if !clear_of(p, radius, &[(goal, robot.radius)]) {
                        continue;
                    }
                    (p, p)
                } else {
                    match config.layout {
                        Layout::SquareCrossing { .. } => {
                            let side = rng.random_range(0..4usize);
                            let p = point_on_square_side(side, half, rng.random_range(-half..=half));
                            let g = point_on_square_side(
                                opposite_side(side),
                                half,
                                rng.random_range(-half..=half),
                            );
                            (p, g)
                        }
                        Layout::CircleCrossing { radius: circle } => {
                            let a = rng.random_range(0.0..TAU);
                            let p = DVec2::from_angle(a) * circle;
                            (p, -p)
                        }
                    }
                };
                if clear_of(p, radius, &placed) {
                    chosen = Some((p, g));
                    break;
                }
            }
            let (p, g) = chosen.ok_or_else(|| {
                Error::ScenarioGeneration(format!(
                    "could not place {kind} #{n} after {PLACEMENT_ATTEMPTS} attempts (seed {seed})"
                ))
            })?;
            placed.push((p, radius));
            let to_goal = g - p;
            entities.push(Entity {
                state: AgentState {
                    position: p,
                    velocity: DVec2::ZERO,
                    radius,
                    goal: g,
                    v_pref,
                    heading: if to_goal.length_squared() > 0.0 {
                        to_goal.y.atan2(to_goal.x)
                    } else {
                        0.0
                    },
                },
                kind,
            });
        }
    }

    Ok(WorldState {
        step: 0,
        time: 0.0,
        dt: config.dt,
        t_max: config.t_max,
        d_max: robot.goal_distance(),
        robot,
        entities,
        invisible_robot: config.invisible_robot,
    })
}

/// Writes `t, agent_id, entity_type_code, p_x, p_y, v_x, v_y, r` rows for
/// every frame. The robot is agent 0 with type code -1.
pub fn write_trace_csv<W: Write>(frames: &[WorldState], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent_id", "entity_type_code", "p_x", "p_y", "v_x", "v_y", "r"])?;
    for f in frames {
        let t = format!("{:.4}", f.time);
        let row = |id: usize, code: i32, a: &AgentState| {
            [
                t.clone(),
                id.to_string(),
                code.to_string(),
                format!("{:.6}", a.position.x),
                format!("{:.6}", a.position.y),
                format!("{:.6}", a.velocity.x),
                format!("{:.6}", a.velocity.y),
                format!("{:.6}", a.radius),
            ]
        };
        w.write_record(row(0, -1, &f.robot))?;
        for (i, e) in f.entities.iter().enumerate() {
            w.write_record(row(i + 1, e.kind.code() as i32, &e.state))?;
        }
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

pub fn save_trace_csv(frames: &[WorldState], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(frames, std::io::BufWriter::new(file))
}
