//! Entity-aware reward: time reward, goal proximity, typed collision
//! penalties and typed discomfort penalties combined as a first-match
//! cascade.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::StepEvents;
use crate::error::{Error, Result};
use crate::state::{EntityType, PerType};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscomfortTerm {
    /// Separation below which the penalty applies, meters.
    pub distance: f64,
    pub factor: f64,
}

/// Discomfort applies to dynamic entities only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscomfortTable {
    pub adult: DiscomfortTerm,
    pub bicycle: DiscomfortTerm,
    pub child: DiscomfortTerm,
}

impl DiscomfortTable {
    pub fn get(&self, e: EntityType) -> Option<&DiscomfortTerm> {
        match e {
            EntityType::Adult => Some(&self.adult),
            EntityType::Bicycle => Some(&self.bicycle),
            EntityType::Child => Some(&self.child),
            EntityType::Obstacle => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub collision_penalty: PerType<f64>,
    pub discomfort: DiscomfortTable,
    pub t_good: f64,
    pub t_max: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            collision_penalty: PerType {
                adult: -1.0,
                bicycle: -1.5,
                child: -2.0,
                obstacle: -0.5,
            },
            discomfort: DiscomfortTable {
                adult: DiscomfortTerm {
                    distance: 0.1,
                    factor: 0.5,
                },
                bicycle: DiscomfortTerm {
                    distance: 0.2,
                    factor: 1.0,
                },
                child: DiscomfortTerm {
                    distance: 0.2,
                    factor: 1.0,
                },
            },
            t_good: 20.0,
            t_max: 30.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_good < self.t_max) {
            return Err(Error::InvalidConfig(format!(
                "t_good ({}) must be below t_max ({})",
                self.t_good, self.t_max
            )));
        }
        for (e, &p) in self.collision_penalty.iter() {
            if !(p < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "collision penalty for {e} must be negative, got {p}"
                )));
            }
        }
        for e in [EntityType::Adult, EntityType::Bicycle, EntityType::Child] {
            let term = self.discomfort.get(e).expect("dynamic type");
            if !(term.distance > 0.0 && term.factor > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "discomfort distance and factor for {e} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Short stable digest of the serialized config, embedded in every
    /// checkpoint and results file.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("reward config serializes");
        let digest = Sha256::digest(&json);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn most_negative_penalty(&self) -> f64 {
        self.collision_penalty
            .iter()
            .map(|(_, &p)| p)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Time reward: 1 before `t_good`, linear down to 0 at `t_max`, 0 after.
pub fn time_reward(t: f64, t_good: f64, t_max: f64) -> Result<f64> {
    if !(t_good < t_max) {
        return Err(Error::InvalidConfig(format!(
            "t_good ({t_good}) must be below t_max ({t_max})"
        )));
    }
    Ok(time_reward_unchecked(t, t_good, t_max))
}

fn time_reward_unchecked(t: f64, t_good: f64, t_max: f64) -> f64 {
    if t < t_good {
        1.0
    } else if t <= t_max {
        (t_max - t) / (t_max - t_good)
    } else {
        0.0
    }
}

/// `1 - d_g / d_max`, deliberately unclamped.
pub fn proximity_reward(d_g: f64, d_max: f64) -> Result<f64> {
    if !(d_max > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "d_max must be positive, got {d_max}"
        )));
    }
    Ok(1.0 - d_g / d_max)
}

/// `(d - d_disc(e)) * p_disc(e) * dt` for `0 <= d < d_disc(e)`.
pub fn discomfort_penalty(e: EntityType, d: f64, dt: f64, config: &RewardConfig) -> Result<f64> {
    let term = config.discomfort.get(e).ok_or_else(|| {
        Error::ContractViolation("no discomfort penalty is defined for obstacles".into())
    })?;
    if !(0.0..term.distance).contains(&d) {
        return Err(Error::ContractViolation(format!(
            "discomfort penalty for {e} needs 0 <= d < {}, got {d}",
            term.distance
        )));
    }
    Ok((d - term.distance) * term.factor * dt)
}

/// Episode-level quantities the reward needs besides the step events.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardContext {
    /// Time at the end of the step.
    pub t: f64,
    /// Robot-goal distance at the end of the step.
    pub d_g: f64,
    pub d_max: f64,
    pub dt: f64,
}

/// Which cascade branch produced a reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardBranch {
    Timeout,
    Collision(EntityType),
    Goal,
    Discomfort(EntityType),
    Zero,
}

pub fn reward(events: &StepEvents, ctx: &RewardContext, config: &RewardConfig) -> f64 {
    reward_with_branch(events, ctx, config).0
}

/// First-match cascade: timeout, collision, goal, then discomfort for
/// children, bicycles and adults in that order, else zero.
pub fn reward_with_branch(
    events: &StepEvents,
    ctx: &RewardContext,
    config: &RewardConfig,
) -> (f64, RewardBranch) {
    let proximity = 1.0 - ctx.d_g / ctx.d_max;
    if ctx.t >= config.t_max && !events.reached_goal {
        return (proximity, RewardBranch::Timeout);
    }
    if events.d_min < 0.0 {
        let e = events.closest.expect("finite d_min implies a closest entity");
        return (
            config.collision_penalty[e] + proximity,
            RewardBranch::Collision(e),
        );
    }
    if events.reached_goal {
        return (
            1.0 + time_reward_unchecked(ctx.t, config.t_good, config.t_max),
            RewardBranch::Goal,
        );
    }
    for e in [EntityType::Child, EntityType::Bicycle, EntityType::Adult] {
        let term = config.discomfort.get(e).expect("dynamic type");
        let d = events.separation[e];
        if (0.0..term.distance).contains(&d) {
            return (
                (d - term.distance) * term.factor * ctx.dt,
                RewardBranch::Discomfort(e),
            );
        }
    }
    (0.0, RewardBranch::Zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(sep: [f64; 4], reached_goal: bool) -> StepEvents {
        let separation = PerType {
            adult: sep[0],
            bicycle: sep[1],
            child: sep[2],
            obstacle: sep[3],
        };
        let mut d_min = f64::INFINITY;
        let mut closest = None;
        for e in EntityType::ALL {
            if separation[e] < d_min {
                d_min = separation[e];
                closest = Some(e);
            }
        }
        StepEvents {
            separation,
            entity_separation: vec![],
            d_min,
            closest,
            reached_goal,
            timed_out: false,
        }
    }

    const FAR: f64 = f64::INFINITY;

    #[test]
    fn time_reward_branches() {
        assert_eq!(time_reward(20.0, 20.0, 30.0).unwrap(), 1.0);
        assert_eq!(time_reward(30.0, 20.0, 30.0).unwrap(), 0.0);
        assert_eq!(time_reward(25.0, 20.0, 30.0).unwrap(), 0.5);
        assert_eq!(time_reward(5.0, 20.0, 30.0).unwrap(), 1.0);
        assert_eq!(time_reward(31.0, 20.0, 30.0).unwrap(), 0.0);
        assert!(matches!(
            time_reward(1.0, 30.0, 30.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn proximity_reward_is_unclamped() {
        assert_eq!(proximity_reward(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(proximity_reward(0.0, 10.0).unwrap(), 1.0);
        assert_eq!(proximity_reward(15.0, 10.0).unwrap(), -0.5);
        assert!(proximity_reward(1.0, 0.0).is_err());
    }

    #[test]
    fn discomfort_penalty_values() {
        let cfg = RewardConfig::default();
        let a = discomfort_penalty(EntityType::Adult, 0.05, 0.25, &cfg).unwrap();
        assert!((a - -0.00625).abs() < 1e-15);
        let c = discomfort_penalty(EntityType::Child, 0.0, 0.25, &cfg).unwrap();
        assert!((c - -0.05).abs() < 1e-15);
        let near = discomfort_penalty(EntityType::Bicycle, 0.2 - 1e-12, 0.25, &cfg).unwrap();
        assert!(near < 0.0 && near > -1e-11);
    }

    #[test]
    fn discomfort_penalty_rejects_obstacles_and_out_of_range() {
        let cfg = RewardConfig::default();
        assert!(matches!(
            discomfort_penalty(EntityType::Obstacle, 0.05, 0.25, &cfg),
            Err(Error::ContractViolation(_))
        ));
        assert!(discomfort_penalty(EntityType::Adult, 0.1, 0.25, &cfg).is_err());
        assert!(discomfort_penalty(EntityType::Adult, -0.01, 0.25, &cfg).is_err());
    }

    #[test]
    fn cascade_examples() {
        let cfg = RewardConfig::default();
        let ctx = |t, d_g| RewardContext {
            t,
            d_g,
            d_max: 10.0,
            dt: 0.25,
        };
        let (r, b) = reward_with_branch(&events([FAR, FAR, -0.05, FAR], false), &ctx(5.0, 5.0), &cfg);
        assert_eq!((r, b), (-1.5, RewardBranch::Collision(EntityType::Child)));

        let (r, b) = reward_with_branch(&events([FAR; 4], true), &ctx(10.0, 0.1), &cfg);
        assert_eq!((r, b), (2.0, RewardBranch::Goal));

        let (r, b) = reward_with_branch(&events([3.0, 2.0, 1.0, 0.5], false), &ctx(10.0, 4.0), &cfg);
        assert_eq!((r, b), (0.0, RewardBranch::Zero));

        let (r, b) = reward_with_branch(&events([0.02, FAR, 0.15, FAR], false), &ctx(10.0, 4.0), &cfg);
        assert_eq!(b, RewardBranch::Discomfort(EntityType::Child));
        assert!((r - (0.15 - 0.2) * 1.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn discomfort_boundary_is_zero_branch() {
        let cfg = RewardConfig::default();
        let ctx = RewardContext {
            t: 1.0,
            d_g: 5.0,
            d_max: 10.0,
            dt: 0.25,
        };
        let (r, b) = reward_with_branch(&events([0.1, 0.2, 0.2, FAR], false), &ctx, &cfg);
        assert_eq!((r, b), (0.0, RewardBranch::Zero));
    }

    #[test]
    fn default_config_is_valid_and_ordered() {
        let cfg = RewardConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.most_negative_penalty(), cfg.collision_penalty.child);
        let mut bad = cfg;
        bad.collision_penalty.adult = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.t_good = 30.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RewardConfig::default();
        let mut b = a;
        assert_eq!(a.hash(), b.hash());
        b.discomfort.child.distance = 0.25;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash_hex().len(), 16);
    }
}
