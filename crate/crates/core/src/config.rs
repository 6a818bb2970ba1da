//! Run configuration stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{Layout, ScenarioConfig};
use crate::error::{Error, Result};
use crate::orca::OrcaParams;
use crate::reward::RewardConfig;
use crate::state::PerType;
use crate::training::TrainConfig;
use crate::valuenet::NetworkShape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub include_entity_type: bool,
    pub embed: Vec<usize>,
    pub interaction: Vec<usize>,
    pub attention: Vec<usize>,
    pub value: Vec<usize>,
}

impl NetworkConfig {
    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            embed: self.embed.clone(),
            interaction: self.interaction.clone(),
            attention: self.attention.clone(),
            value: self.value.clone(),
            include_entity_type: self.include_entity_type,
        }
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let s = NetworkShape::standard(true);
        NetworkConfig {
            include_entity_type: true,
            embed: s.embed,
            interaction: s.interaction,
            attention: s.attention,
            value: s.value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub test_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidConfig(format!(
                "unknown profile {other:?} (expected desk or paper)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub reward: RewardConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub orca: OrcaParams,
    pub eval: EvalSettings,
}

impl RunConfig {
    /// 300 IL + 2000 RL episodes, three adults, one bicycle and one child
    /// on an 11 m square.
    pub fn desk() -> Self {
        RunConfig {
            seed: 7,
            scenario: ScenarioConfig::default(),
            reward: RewardConfig::default(),
            network: NetworkConfig::default(),
            training: TrainConfig::desk(),
            orca: OrcaParams::default(),
            eval: EvalSettings { test_size: 100 },
        }
    }

    /// Full-length schedule with static obstacles in the scene.
    pub fn paper() -> Self {
        RunConfig {
            scenario: ScenarioConfig {
                counts: PerType {
                    adult: 3,
                    bicycle: 1,
                    child: 1,
                    obstacle: 2,
                },
                ..ScenarioConfig::default()
            },
            training: TrainConfig::paper(),
            eval: EvalSettings { test_size: 1000 },
            ..Self::desk()
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Square or circle crossing of the given size, other settings kept.
    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.scenario.layout = layout;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.reward.validate()?;
        self.training.validate()?;
        if self.reward.t_max != self.scenario.t_max {
            return Err(Error::InvalidConfig(format!(
                "reward.t_max ({}) must equal scenario.t_max ({})",
                self.reward.t_max, self.scenario.t_max
            )));
        }
        self.network.shape().validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Short digest identifying every setting of the run.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config always serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::paper()] {
            let text = cfg.to_toml_string();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn hash_changes_with_settings() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.network.include_entity_type = false;
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex(), RunConfig::desk().hash_hex());
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::desk();
        cfg.training.gamma = 1.5;
        assert!(RunConfig::from_toml_str(&cfg.to_toml_string()).is_err());
        assert!(RunConfig::from_toml_str("seed = 1").is_err());
    }
}
