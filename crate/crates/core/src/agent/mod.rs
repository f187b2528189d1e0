//! Actor-critic recommender agent trained with deterministic policy gradients.

mod actor;
mod critic;
mod ddpg;
mod replay;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::OptimizerKind;

pub use actor::{perturb, recommend_list, score_items, Actor, ItemSpace};
pub use critic::Critic;
pub use ddpg::{
    actor_gradient, actor_gradient_at, actor_update, critic_gradient, critic_update, policy_objective, td_target, td_targets,
    train, AgentSnapshot, EpisodeLog, LirdAgent, UpdateStats,
};
pub use replay::{ReplayBuffer, ReplayConfig, Transition};

pub(crate) use actor::{greedy_from_scores, table_view};

/// State length `N`, list length `K` and embedding width `d`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state_len: usize,
    pub list_len: usize,
    pub embed_dim: usize,
}

impl Dims {
    pub fn state_dim(&self) -> usize {
        self.state_len * self.embed_dim
    }

    pub fn action_dim(&self) -> usize {
        self.list_len * self.embed_dim
    }
}

/// Where the critic's action gradient is evaluated in the actor update.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientPoint {
    /// At the actor's raw weight output.
    Weights,
    /// At the embeddings of the list those weights select.
    List,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    /// Return discount.
    pub gamma: f64,
    /// Target network mixing rate.
    pub tau: f64,
    pub episodes: usize,
    /// Steps (lists) per training episode.
    pub steps: usize,
    /// Transitions required before updates start.
    pub warmup: usize,
    /// Exploration noise std at the first and last episode.
    pub noise_start: f64,
    pub noise_end: f64,
    pub replay: ReplayConfig,
    pub gradient_point: GradientPoint,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            actor_hidden: vec![128, 64],
            critic_hidden: vec![128, 64],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            gamma: 0.75,
            tau: 0.001,
            episodes: 400,
            steps: 20,
            warmup: 64,
            noise_start: 0.2,
            noise_end: 0.01,
            replay: ReplayConfig::default(),
            gradient_point: GradientPoint::List,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.noise_start < 0.0 || self.noise_end < 0.0 {
            return Err(Error::Config("exploration noise must be non-negative".into()));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        self.replay.validate()
    }

    /// Noise std for `episode` out of `episodes`, linear between the endpoints.
    pub fn noise_at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.noise_start;
        }
        let t = episode.min(self.episodes - 1) as f64 / (self.episodes - 1) as f64;
        self.noise_start + (self.noise_end - self.noise_start) * t
    }
}
