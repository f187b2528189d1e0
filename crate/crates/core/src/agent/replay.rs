use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Action, State};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    /// Positionally discounted list reward.
    pub reward: f64,
    pub next_state: State,
    pub priority: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub batch_size: usize,
    /// Sampling probability is proportional to `priority^exponent`.
    pub priority_exponent: f64,
    /// Added to |TD error| when priorities are refreshed.
    pub priority_epsilon: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 100_000,
            batch_size: 64,
            priority_exponent: 0.6,
            priority_epsilon: 1e-3,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.batch_size == 0 {
            return Err(Error::Config("replay capacity and batch size must be positive".into()));
        }
        if !(self.priority_exponent >= 0.0) || !(self.priority_epsilon > 0.0) {
            return Err(Error::Config("priority exponent must be >= 0 and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Bounded FIFO of transitions with proportional prioritized sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    exponent: f64,
    epsilon: f64,
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, exponent: f64, epsilon: f64) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            exponent,
            epsilon,
            max_priority: 1.0,
        }
    }

    pub fn from_config(config: &ReplayConfig) -> Self {
        ReplayBuffer::new(config.capacity, config.priority_exponent, config.priority_epsilon)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.max_priority = 1.0;
    }

    /// Stores a transition, evicting the oldest one when full. A non-positive
    /// priority is replaced by the largest priority seen so far, so new
    /// transitions are sampled at least once with high probability.
    pub fn push(&mut self, mut t: Transition) {
        if !(t.priority > 0.0) {
            t.priority = self.max_priority;
        }
        self.max_priority = self.max_priority.max(t.priority);
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Draws `batch_size` indices with replacement, `P(i) ∝ priority_i^exponent`.
    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let mut cumulative = Vec::with_capacity(self.items.len());
        let mut total = 0.0;
        for t in &self.items {
            total += t.priority.powf(self.exponent);
            cumulative.push(total);
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::NonFinite("replay priorities"));
        }
        Ok((0..batch_size)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                cumulative.partition_point(|&c| c <= u).min(self.items.len() - 1)
            })
            .collect())
    }

    /// Sets `priority = |td_error| + epsilon` for each sampled index.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                actual: td_errors.len(),
            });
        }
        for (&i, &e) in indices.iter().zip(td_errors) {
            if !e.is_finite() {
                return Err(Error::NonFinite("TD errors"));
            }
            let p = e.abs() + self.epsilon;
            if let Some(t) = self.items.get_mut(i) {
                t.priority = p;
                self.max_priority = self.max_priority.max(p);
            }
        }
        Ok(())
    }
}
