//! Optimal Reciprocal Collision Avoidance for disc agents.
//!
//! Each neighbor contributes one half-plane of permitted velocities built
//! from the truncated velocity-obstacle cone; the new velocity is the
//! permitted velocity closest to the preferred one, found by incremental
//! 2D linear programming over the speed disc. When the half-planes have
//! no common point the densest-feasible velocity is found with the 3D
//! fallback program. Static neighbors (`v_pref == 0`) cannot reciprocate
//! and are avoided with full responsibility.

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{preferred_velocity, EntityPolicy, WorldState};
use crate::episode::{run_with, EpisodeRecord, RobotController};
use crate::reward::RewardConfig;
use crate::state::AgentState;

const LP_EPSILON: f64 = 1e-5;
/// Relative position used when two centers coincide exactly.
const COINCIDENT_OFFSET: DVec2 = DVec2::new(1e-6, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrcaParams {
    pub time_horizon: f64,
    pub time_horizon_obstacle: f64,
    pub neighbor_distance: f64,
    pub max_neighbors: usize,
    pub safety_buffer: f64,
    /// Counter-clockwise rotation, radians, applied to the preferred
    /// velocity whenever neighbors are in range. Every agent turns the
    /// same way, which breaks exactly symmetric encounters that would
    /// otherwise stall head-on.
    #[serde(default = "default_symmetry_rotation")]
    pub symmetry_rotation: f64,
}

fn default_symmetry_rotation() -> f64 {
    1e-3
}

impl Default for OrcaParams {
    fn default() -> Self {
        OrcaParams {
            time_horizon: 5.0,
            time_horizon_obstacle: 5.0,
            neighbor_distance: 10.0,
            max_neighbors: 10,
            safety_buffer: 0.01,
            symmetry_rotation: default_symmetry_rotation(),
        }
    }
}

/// Directed line; permitted velocities lie on its left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub point: DVec2,
    pub direction: DVec2,
}

fn det(a: DVec2, b: DVec2) -> f64 {
    a.perp_dot(b)
}

/// ORCA half-plane `agent` must respect with respect to `other`.
pub fn orca_line(agent: &AgentState, other: &AgentState, params: &OrcaParams, dt: f64) -> Line {
    let is_static = other.v_pref <= 0.0;
    let horizon = if is_static {
        params.time_horizon_obstacle
    } else {
        params.time_horizon
    };
    let inv_horizon = 1.0 / horizon;
    let mut rel_pos = other.position - agent.position;
    if rel_pos.length_squared() == 0.0 {
        rel_pos = COINCIDENT_OFFSET;
    }
    let rel_vel = agent.velocity - other.velocity;
    let dist_sq = rel_pos.length_squared();
    let combined_radius = agent.radius + other.radius + params.safety_buffer;
    let combined_radius_sq = combined_radius * combined_radius;

    let direction;
    let u;
    if dist_sq > combined_radius_sq {
        // vector from cutoff center to relative velocity
        let w = rel_vel - rel_pos * inv_horizon;
        let w_len_sq = w.length_squared();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_radius_sq * w_len_sq {
            // project on the cutoff circle
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = DVec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (combined_radius * inv_horizon - w_len);
        } else {
            // project on a leg of the cone
            let leg = (dist_sq - combined_radius_sq).sqrt();
            direction = if det(rel_pos, w) > 0.0 {
                DVec2::new(
                    rel_pos.x * leg - rel_pos.y * combined_radius,
                    rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -DVec2::new(
                    rel_pos.x * leg + rel_pos.y * combined_radius,
                    -rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            };
            u = direction * rel_vel.dot(direction) - rel_vel;
        }
    } else {
        // already overlapping: resolve within one time step
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.length();
        let unit_w = if w_len > 0.0 { w / w_len } else { DVec2::new(-1.0, 0.0) };
        direction = DVec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (combined_radius * inv_dt - w_len);
    }
    let responsibility = if is_static { 1.0 } else { 0.5 };
    Line {
        point: agent.velocity + u * responsibility,
        direction,
    }
}

/// Optimizes on line `line_no` subject to lines `0..line_no` and the disc.
fn linear_program1(
    lines: &[Line],
    line_no: usize,
    radius: f64,
    opt_velocity: DVec2,
    direction_opt: bool,
    result: &mut DVec2,
) -> bool {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.length_squared();
    if discriminant < 0.0 {
        return false;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denominator = det(line.direction, other.direction);
        let numerator = det(other.direction, line.point - other.point);
        if denominator.abs() <= LP_EPSILON {
            if numerator < 0.0 {
                return false;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    *result = if direction_opt {
        if opt_velocity.dot(line.direction) > 0.0 {
            line.point + line.direction * t_right
        } else {
            line.point + line.direction * t_left
        }
    } else {
        let t = line.direction.dot(opt_velocity - line.point);
        line.point + line.direction * t.clamp(t_left, t_right)
    };
    true
}

/// Returns the index of the first line that could not be satisfied, or
/// `lines.len()` on success.
fn linear_program2(
    lines: &[Line],
    radius: f64,
    opt_velocity: DVec2,
    direction_opt: bool,
    result: &mut DVec2,
) -> usize {
    *result = if direction_opt {
        opt_velocity * radius
    } else if opt_velocity.length_squared() > radius * radius {
        opt_velocity.normalize() * radius
    } else {
        opt_velocity
    };
    for (i, line) in lines.iter().enumerate() {
        if det(line.direction, line.point - *result) > 0.0 {
            let previous = *result;
            if !linear_program1(lines, i, radius, opt_velocity, direction_opt, result) {
                *result = previous;
                return i;
            }
        }
    }
    lines.len()
}

/// Minimizes the maximum violation over lines `begin..` starting from the
/// partial solution of the 2D program.
fn linear_program3(lines: &[Line], begin: usize, radius: f64, result: &mut DVec2) {
    let mut distance = 0.0;
    let mut projected: Vec<Line> = Vec::with_capacity(lines.len());
    for i in begin..lines.len() {
        let li = lines[i];
        if det(li.direction, li.point - *result) <= distance {
            continue;
        }
        projected.clear();
        for lj in &lines[..i] {
            let determinant = det(li.direction, lj.direction);
            let point = if determinant.abs() <= LP_EPSILON {
                if li.direction.dot(lj.direction) > 0.0 {
                    // parallel, same direction
                    continue;
                }
                (li.point + lj.point) * 0.5
            } else {
                li.point + li.direction * (det(lj.direction, li.point - lj.point) / determinant)
            };
            projected.push(Line {
                point,
                direction: (lj.direction - li.direction).normalize(),
            });
        }
        let previous = *result;
        let opt = DVec2::new(-li.direction.y, li.direction.x);
        if linear_program2(&projected, radius, opt, true, result) < projected.len() {
            // should not happen in exact arithmetic; keep the last good value
            *result = previous;
        }
        distance = det(li.direction, li.point - *result);
    }
}

/// Permitted velocity closest to `preferred` under `lines` within `max_speed`.
pub fn solve(lines: &[Line], max_speed: f64, preferred: DVec2) -> DVec2 {
    let mut result = DVec2::ZERO;
    let failed = linear_program2(lines, max_speed, preferred, false, &mut result);
    if failed < lines.len() {
        linear_program3(lines, failed, max_speed, &mut result);
    }
    let speed = result.length();
    if speed > max_speed {
        result *= max_speed / speed;
    }
    result
}

/// New velocity for `agent` avoiding `neighbors`.
///
/// Only neighbors whose centers lie within `neighbor_distance` count, the
/// closest `max_neighbors` of them (ties keep input order).
pub fn orca_velocity(
    agent: &AgentState,
    neighbors: &[&AgentState],
    params: &OrcaParams,
    dt: f64,
) -> DVec2 {
    let preferred = preferred_velocity(agent, dt);
    if agent.v_pref <= 0.0 {
        return DVec2::ZERO;
    }
    let range_sq = params.neighbor_distance * params.neighbor_distance;
    let mut near: Vec<(f64, &AgentState)> = neighbors
        .iter()
        .map(|n| ((n.position - agent.position).length_squared(), *n))
        .filter(|&(d, _)| d < range_sq)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    near.truncate(params.max_neighbors);
    if near.is_empty() {
        return preferred;
    }
    let lines: Vec<Line> = near
        .iter()
        .map(|(_, n)| orca_line(agent, n, params, dt))
        .collect();
    let preferred = DVec2::from_angle(params.symmetry_rotation).rotate(preferred);
    solve(&lines, agent.v_pref, preferred)
}

/// ORCA as the simulator's entity policy.
#[derive(Clone, Copy, Debug, Default)]
pub struct Orca {
    pub params: OrcaParams,
}

impl Orca {
    pub fn new(params: OrcaParams) -> Self {
        Orca { params }
    }
}

impl EntityPolicy for Orca {
    fn velocity(&self, agent: &AgentState, neighbors: &[&AgentState], dt: f64) -> DVec2 {
        orca_velocity(agent, neighbors, &self.params, dt)
    }
}

/// Robot driven by ORCA over every entity it can see.
#[derive(Clone, Copy, Debug, Default)]
pub struct OrcaController {
    pub params: OrcaParams,
}

impl RobotController for OrcaController {
    fn command(&mut self, world: &WorldState) -> DVec2 {
        let neighbors: Vec<&AgentState> = world.entities.iter().map(|e| &e.state).collect();
        orca_velocity(&world.robot, &neighbors, &self.params, world.dt)
    }
}

/// ORCA demonstration: the robot runs ORCA, entities run ORCA among
/// themselves (ignoring the robot in the invisible setting).
pub fn demonstrate_episode(
    setup: WorldState,
    params: &OrcaParams,
    reward_config: &RewardConfig,
) -> EpisodeRecord {
    let mut controller = OrcaController { params: *params };
    run_with(setup, &mut controller, &Orca::new(*params), reward_config)
}
