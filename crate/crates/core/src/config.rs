//! Run configuration, read from TOML. Every section has defaults and unknown
//! keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::data::{RewardMap, SyntheticConfig};
use crate::embed::SkipGramConfig;
use crate::error::{Error, Result};
use crate::eval::{DqnConfig, LengthClass};
use crate::sim::SimConfig;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Random,
    Popularity,
    Dqn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub length_class: LengthClass,
    /// Test sessions to roll out; 0 means all of them.
    pub test_sessions: usize,
    /// Keep updating the agent from feedback inside each test session.
    pub learn_in_test: bool,
    pub test_batch: usize,
    pub test_warmup: usize,
    pub baselines: Vec<Baseline>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            length_class: LengthClass::Long,
            test_sessions: 200,
            learn_in_test: true,
            test_batch: 16,
            test_warmup: 4,
            baselines: vec![Baseline::Random, Baseline::Popularity],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; each stage derives its own stream from it.
    pub seed: u64,
    /// Positive items kept in the state.
    pub state_len: usize,
    /// Items per recommended list.
    pub list_len: usize,
    /// Leading share of sessions used for training.
    pub train_fraction: f64,
    pub rewards: RewardMap,
    /// Subtract the mean embedding after training.
    pub center_embeddings: bool,
    pub data: SyntheticConfig,
    pub embed: SkipGramConfig,
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub dqn: DqnConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 7,
            state_len: 10,
            list_len: 4,
            train_fraction: 0.8,
            rewards: RewardMap::default(),
            center_embeddings: true,
            data: SyntheticConfig::default(),
            embed: SkipGramConfig::default(),
            sim: SimConfig::default(),
            agent: AgentConfig::default(),
            dqn: DqnConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.state_len == 0 || self.list_len == 0 {
            return Err(Error::Config("state_len and list_len must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.embed.dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        if self.list_len > self.data.catalog_size {
            return Err(Error::Config("list_len exceeds the catalog size".into()));
        }
        if self.eval.test_batch == 0 {
            return Err(Error::Config("test_batch must be positive".into()));
        }
        self.rewards.validate()?;
        self.data.validate()?;
        self.sim.validate()?;
        self.agent.validate()?;
        self.dqn.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text)
    }

    /// Seed for a named stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a master seed with a stage name (FNV-1a) into an independent seed.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

/// Seed of the `index`-th stream under `seed`.
pub fn stream_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_toml_round_trip() {
        let cfg = Config::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg = Config::from_toml("list_len = 2\n[sim]\nalpha = 0.5\n[agent]\ngamma = 0.0\n").unwrap();
        assert_eq!(cfg.list_len, 2);
        assert_eq!(cfg.sim.alpha, 0.5);
        assert_eq!(cfg.sim.gamma_pos, 0.9);
        assert_eq!(cfg.agent.gamma, 0.0);
        assert_eq!(cfg.agent.tau, 0.001);
        assert_eq!(cfg.state_len, 10);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(Config::from_toml("lenght = 3\n").is_err());
        assert!(Config::from_toml("[sim]\nbeta = 1\n").is_err());
        assert!(Config::from_toml("[sim]\nalpha = 1.5\n").is_err());
        assert!(Config::from_toml("[agent]\ngamma = -0.1\n").is_err());
        assert!(Config::from_toml("[rewards]\nclick = 9.0\n").is_err());
    }

    #[test]
    fn stage_seeds_differ_and_repeat() {
        assert_ne!(derive_seed(1, "train"), derive_seed(1, "eval"));
        assert_ne!(derive_seed(1, "train"), derive_seed(2, "train"));
        assert_eq!(derive_seed(1, "train"), derive_seed(1, "train"));
        assert_ne!(stream_seed(5, 0), stream_seed(5, 1));
    }
}
