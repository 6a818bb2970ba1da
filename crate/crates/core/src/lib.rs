//! Entity-aware crowd navigation.
//!
//! A typed multi-agent 2D simulator, ORCA-controlled crowds, the
//! entity-typed reward cascade, a social-attention value network with its
//! own backward pass, one-step lookahead planning, parallel deep
//! V-learning and an evaluation harness.

pub mod config;
pub mod dynamics;
pub mod episode;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod orca;
pub mod parallel;
pub mod planner;
pub mod reward;
pub mod state;
pub mod training;
pub mod valuenet;

pub use error::{Error, Result};
pub use state::{Action, ActionSpace, AgentState, Entity, EntityType, JointState, PerType};
