//! Domain vocabulary: entity types, agent states, the robot-centric joint
//! state and the discrete holonomic action space.

use std::f64::consts::{E, PI, TAU};
use std::fmt;
use std::ops::{Index, IndexMut};

use glam::DVec2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Kind of environmental entity. Integer codes are stable and used by every
/// serialized artifact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityType {
    Adult = 0,
    Bicycle = 1,
    Child = 2,
    Obstacle = 3,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [
        EntityType::Adult,
        EntityType::Bicycle,
        EntityType::Child,
        EntityType::Obstacle,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Single-letter tag used in metric column names (`CR_A`, `DD_C`, ...).
    pub fn letter(self) -> char {
        match self {
            EntityType::Adult => 'A',
            EntityType::Bicycle => 'B',
            EntityType::Child => 'C',
            EntityType::Obstacle => 'O',
        }
    }

    pub fn is_static(self) -> bool {
        self == EntityType::Obstacle
    }

    pub fn one_hot(self) -> [f64; 4] {
        one_hot(self)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EntityType::Adult => "adult",
            EntityType::Bicycle => "bicycle",
            EntityType::Child => "child",
            EntityType::Obstacle => "obstacle",
        };
        f.write_str(name)
    }
}

impl Serialize for EntityType {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for EntityType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let code = u8::deserialize(deserializer)?;
        EntityType::from_code(code)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown entity type code {code}")))
    }
}

/// Unit basis vector at the type's stable code.
pub fn one_hot(entity_type: EntityType) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[entity_type.code() as usize] = 1.0;
    v
}

/// One value per entity type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerType<T> {
    pub adult: T,
    pub bicycle: T,
    pub child: T,
    pub obstacle: T,
}

impl<T> PerType<T> {
    pub fn from_fn(mut f: impl FnMut(EntityType) -> T) -> Self {
        PerType {
            adult: f(EntityType::Adult),
            bicycle: f(EntityType::Bicycle),
            child: f(EntityType::Child),
            obstacle: f(EntityType::Obstacle),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(EntityType, &T) -> U) -> PerType<U> {
        PerType::from_fn(|e| f(e, &self[e]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityType, &T)> {
        EntityType::ALL.into_iter().map(move |e| (e, &self[e]))
    }
}

impl<T: Clone> PerType<T> {
    pub fn splat(value: T) -> Self {
        PerType::from_fn(|_| value.clone())
    }
}

impl<T> Index<EntityType> for PerType<T> {
    type Output = T;

    fn index(&self, e: EntityType) -> &T {
        match e {
            EntityType::Adult => &self.adult,
            EntityType::Bicycle => &self.bicycle,
            EntityType::Child => &self.child,
            EntityType::Obstacle => &self.obstacle,
        }
    }
}

impl<T> IndexMut<EntityType> for PerType<T> {
    fn index_mut(&mut self, e: EntityType) -> &mut T {
        match e {
            EntityType::Adult => &mut self.adult,
            EntityType::Bicycle => &mut self.bicycle,
            EntityType::Child => &mut self.child,
            EntityType::Obstacle => &mut self.obstacle,
        }
    }
}

/// Full kinematic state of one agent in world coordinates.
///
/// `heading` follows the last nonzero commanded velocity. Static obstacles
/// carry `v_pref = 0` and zero velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub position: DVec2,
    pub velocity: DVec2,
    pub radius: f64,
    pub goal: DVec2,
    pub v_pref: f64,
    pub heading: f64,
}

impl AgentState {
    pub fn goal_distance(&self) -> f64 {
        (self.goal - self.position).length()
    }
}

/// An agent together with its entity type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entity {
    pub state: AgentState,
    pub kind: EntityType,
}

/// Robot part of the joint state: `[d_g, v_x, v_y, r, v_pref, theta]`,
/// velocities and heading expressed in the robot frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotStateVector {
    pub goal_distance: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
    pub v_pref: f64,
    pub theta: f64,
}

impl RobotStateVector {
    pub const WIDTH: usize = 6;

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.goal_distance,
            self.vx,
            self.vy,
            self.radius,
            self.v_pref,
            self.theta,
        ]
    }
}

/// Observable state of one entity in the robot frame:
/// `[p_x, p_y, v_x, v_y, r, d, r + r_robot, e]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntityObservation {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
    pub distance: f64,
    pub radius_sum: f64,
    pub kind: EntityType,
}

impl EntityObservation {
    /// Number of numeric features (everything except the type).
    pub const NUMERIC_WIDTH: usize = 7;

    pub fn numeric(&self) -> [f64; 7] {
        [
            self.px,
            self.py,
            self.vx,
            self.vy,
            self.radius,
            self.distance,
            self.radius_sum,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub robot: RobotStateVector,
    pub entities: Vec<EntityObservation>,
}

/// Translation + rotation taking world coordinates into the robot frame
/// (robot at the origin, goal on the positive x-axis).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotFrame {
    pub origin: DVec2,
    pub angle: f64,
    rotation: DVec2,
}

impl RobotFrame {
    pub fn new(origin: DVec2, angle: f64) -> Self {
        // rotating by -angle
        RobotFrame {
            origin,
            angle,
            rotation: DVec2::new(angle.cos(), -angle.sin()),
        }
    }

    /// Frame for `robot`; falls back to the robot's heading when it sits
    /// exactly on its goal.
    pub fn for_robot(robot: &AgentState) -> Self {
        let to_goal = robot.goal - robot.position;
        let angle = if to_goal.length_squared() > 0.0 {
            to_goal.y.atan2(to_goal.x)
        } else {
            robot.heading
        };
        RobotFrame::new(robot.position, angle)
    }

    pub fn point(&self, p: DVec2) -> DVec2 {
        self.rotation.rotate(p - self.origin)
    }

    pub fn vector(&self, v: DVec2) -> DVec2 {
        self.rotation.rotate(v)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Robot-centric joint state of `robot` observing `entities`.
pub fn to_robot_frame(robot: &AgentState, entities: &[Entity]) -> JointState {
    let frame = RobotFrame::for_robot(robot);
    let v = frame.vector(robot.velocity);
    let robot_vec = RobotStateVector {
        goal_distance: robot.goal_distance(),
        vx: v.x,
        vy: v.y,
        radius: robot.radius,
        v_pref: robot.v_pref,
        theta: wrap_angle(robot.heading - frame.angle),
    };
    let entities = entities
        .iter()
        .map(|e| {
            let p = frame.point(e.state.position);
            let v = frame.vector(e.state.velocity);
            EntityObservation {
                px: p.x,
                py: p.y,
                vx: v.x,
                vy: v.y,
                radius: e.state.radius,
                distance: p.length(),
                radius_sum: e.state.radius + robot.radius,
                kind: e.kind,
            }
        })
        .collect();
    JointState {
        robot: robot_vec,
        entities,
    }
}

/// A holonomic velocity command; `heading` is world-frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub speed: f64,
    pub heading: f64,
}

impl Action {
    pub fn velocity(&self) -> DVec2 {
        DVec2::from_angle(self.heading) * self.speed
    }
}

pub const SPEED_SAMPLES: usize = 5;
pub const HEADING_SAMPLES: usize = 16;

/// The 80 discrete actions, indexed `speed_index * 16 + heading_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpace {
    pub speeds: [f64; SPEED_SAMPLES],
    pub headings: [f64; HEADING_SAMPLES],
    pub actions: Vec<Action>,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn v_pref(&self) -> f64 {
        self.speeds[SPEED_SAMPLES - 1]
    }
}

/// Five exponentially spaced speeds in `(0, v_pref]` crossed with sixteen
/// evenly spaced headings in `[0, 2pi)`.
pub fn build_action_space(v_pref: f64) -> Result<ActionSpace> {
    if !(v_pref > 0.0) || !v_pref.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "v_pref must be positive and finite, got {v_pref}"
        )));
    }
    let mut speeds = [0.0; SPEED_SAMPLES];
    for (k, s) in speeds.iter_mut().enumerate() {
        let k = (k + 1) as f64;
        *s = ((k / SPEED_SAMPLES as f64).exp() - 1.0) / (E - 1.0) * v_pref;
    }
    // exp(1) - 1 over e - 1 may round off by an ulp
    speeds[SPEED_SAMPLES - 1] = v_pref;
    let mut headings = [0.0; HEADING_SAMPLES];
    for (k, h) in headings.iter_mut().enumerate() {
        *h = TAU * k as f64 / HEADING_SAMPLES as f64;
    }
    let actions = speeds
        .iter()
        .flat_map(|&speed| headings.iter().map(move |&heading| Action { speed, heading }))
        .collect();
    Ok(ActionSpace {
        speeds,
        headings,
        actions,
    })
}
