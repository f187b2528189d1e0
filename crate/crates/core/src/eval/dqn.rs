use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ItemSpace, Transition};
use crate::data::{ItemId, Session};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::net::{Activation, NetParams, Optimizer, OptimizerKind};
use crate::sim::{Action, Simulator, State};

use super::policy::Policy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub gamma: f64,
    pub tau: f64,
    pub episodes: usize,
    pub steps: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub capacity: usize,
    /// Items sampled per next state for the max in the target.
    pub candidates: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![128, 64],
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            gamma: 0.75,
            tau: 0.001,
            episodes: 100,
            steps: 20,
            warmup: 64,
            batch_size: 32,
            capacity: 100_000,
            candidates: 16,
            epsilon_start: 0.2,
            epsilon_end: 0.01,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("dqn gamma and tau must lie in [0, 1]".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.capacity == 0 || self.candidates == 0 {
            return Err(Error::Config("dqn lr, batch size, capacity and candidates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::Config("dqn epsilon must lie in [0, 1]".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ItemTransition {
    state: State,
    item: ItemId,
    reward: f64,
    next_state: State,
}

/// Item-wise Q-learning baseline: `Q(s, e_i)` is evaluated for every
/// candidate item separately and the `K` best items form the list.
#[derive(Clone, Debug)]
pub struct ItemwiseDqn {
    q: NetParams,
    target: NetParams,
    opt: Optimizer,
    config: DqnConfig,
    table: Arc<EmbeddingTable>,
    state_len: usize,
    buffer: VecDeque<ItemTransition>,
    rng: ChaCha8Rng,
    epsilon: f64,
    /// Starting point restored before each test session.
    snapshot: Option<(NetParams, NetParams)>,
    learn_in_test: bool,
}

impl ItemwiseDqn {
    pub fn new(table: Arc<EmbeddingTable>, state_len: usize, config: DqnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![(state_len + 1) * table.dim()];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(1);
        let q = NetParams::new(&sizes, Activation::Tanh, Activation::Identity, &mut rng)?;
        let opt = Optimizer::new(config.optimizer, &q, config.lr);
        Ok(ItemwiseDqn {
            target: q.clone(),
            q,
            opt,
            table,
            state_len,
            buffer: VecDeque::new(),
            rng,
            epsilon: 0.0,
            snapshot: None,
            learn_in_test: false,
            config,
        })
    }

    pub fn params(&self) -> &NetParams {
        &self.q
    }

    /// Q values of `items` in `state`, one network forward per item.
    pub fn q_values(&self, params: &NetParams, state: &State, items: &[ItemId]) -> Result<Vec<f64>> {
        let d = self.table.dim();
        let s = state.vector(&self.table);
        let width = s.len() + d;
        let mut flat = Vec::with_capacity(items.len() * width);
        for &i in items {
            flat.extend_from_slice(&s);
            flat.extend_from_slice(self.table.lookup(i)?);
        }
        let x = Array2::from_shape_vec((items.len(), width), flat).expect("rows of (N+1)*d");
        Ok(params.forward_batch(x.view())?.column(0).to_vec())
    }

    /// Top-`k` items of `space` by Q value, lowest id first on ties.
    pub fn top_k(&self, state: &State, space: &ItemSpace, k: usize) -> Result<Vec<ItemId>> {
        if space.len() < k || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot pick {k} items from {} available",
                space.len()
            )));
        }
        let items: Vec<ItemId> = space.items().collect();
        let q = self.q_values(&self.q, state, &items)?;
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
        Ok(order[..k].iter().map(|&i| items[i]).collect())
    }

    fn explore(&mut self, state: &State, space: &ItemSpace, k: usize) -> Result<Action> {
        let mut list = self.top_k(state, space, k)?;
        if self.epsilon > 0.0 {
            let pool: Vec<ItemId> = space.items().collect();
            for slot in 0..k {
                if self.rng.random::<f64>() < self.epsilon {
                    let candidates: Vec<ItemId> = pool.iter().copied().filter(|i| !list.contains(i)).collect();
                    if !candidates.is_empty() {
                        list[slot] = candidates[self.rng.random_range(0..candidates.len())];
                    }
                }
            }
        }
        Action::new(list)
    }

    fn remember(&mut self, state: &State, action: &Action, rewards: &[f64], next_state: &State) {
        for (&item, &reward) in action.items().iter().zip(rewards) {
            if self.buffer.len() == self.config.capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(ItemTransition {
                state: state.clone(),
                item,
                reward,
                next_state: next_state.clone(),
            });
        }
    }

    /// One Q-learning step on a uniform minibatch. The max in the target runs
    /// over a random candidate sample.
    fn learn(&mut self) -> Result<Option<f64>> {
        if self.buffer.len() < self.config.warmup.max(1) {
            return Ok(None);
        }
        let b = self.config.batch_size;
        let m = self.config.candidates.min(self.table.len());
        let batch: Vec<ItemTransition> = (0..b)
            .map(|_| self.buffer[self.rng.random_range(0..self.buffer.len())].clone())
            .collect();
        let mut targets = Vec::with_capacity(b);
        for t in &batch {
            let y = if self.config.gamma == 0.0 {
                t.reward
            } else {
                let cands: Vec<ItemId> = index::sample(&mut self.rng, self.table.len(), m)
                    .into_iter()
                    .map(|i| ItemId(i as u32))
                    .collect();
                let q = self.q_values(&self.target, &t.next_state, &cands)?;
                t.reward + self.config.gamma * q.into_iter().fold(f64::NEG_INFINITY, f64::max)
            };
            targets.push(y);
        }
        let d = self.table.dim();
        let width = (self.state_len + 1) * d;
        let mut flat = Vec::with_capacity(b * width);
        for t in &batch {
            flat.extend(t.state.vector(&self.table));
            flat.extend_from_slice(self.table.lookup(t.item)?);
        }
        let x = Array2::from_shape_vec((b, width), flat).expect("rows of (N+1)*d");
        let tape = self.q.forward_tape(x)?;
        let q = tape.output().column(0).to_vec();
        let errors: Vec<f64> = targets.iter().zip(&q).map(|(y, q)| y - q).collect();
        let loss = errors.iter().map(|e| e * e).sum::<f64>() / b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("dqn loss"));
        }
        let upstream = Array2::from_shape_fn((b, 1), |(i, _)| -2.0 * errors[i] / b as f64);
        let (grads, _) = self.q.backward_tape(&tape, upstream.view())?;
        self.opt.step(&mut self.q, &grads)?;
        self.target.soft_update(&self.q, self.config.tau)?;
        Ok(Some(loss))
    }

    /// Trains against the simulator with epsilon-greedy slot exploration.
    /// Returns per-episode cumulative rewards.
    pub fn train(&mut self, sessions: &[Session], sim: &Simulator, seed: u64) -> Result<Vec<f64>> {
        if sessions.is_empty() {
            return Err(Error::Empty("training sessions"));
        }
        let k = sim.list_len();
        let mut env = ChaCha8Rng::seed_from_u64(seed);
        let mut space = ItemSpace::full(self.table.len());
        let episodes = self.config.episodes;
        let mut curve = Vec::with_capacity(episodes);
        for ep in 0..episodes {
            let t = if episodes <= 1 { 0.0 } else { ep as f64 / (episodes - 1) as f64 };
            self.epsilon = self.config.epsilon_start + (self.config.epsilon_end - self.config.epsilon_start) * t;
            let session = &sessions[env.random_range(0..sessions.len())];
            let mut state = State::from_prior(&session.prior_positives, self.state_len);
            space.reset();
            let mut total = 0.0;
            for _ in 0..self.config.steps {
                if space.len() < k {
                    space.reset();
                }
                let action = self.explore(&state, &space, k)?;
                for &i in action.items() {
                    space.remove(i);
                }
                let out = sim.step(&state, &action, &mut env)?;
                self.remember(&state, &action, &out.rewards, &out.next_state);
                self.learn()?;
                total += out.overall;
                state = out.next_state;
            }
            curve.push(total);
        }
        self.epsilon = 0.0;
        Ok(curve)
    }

    /// Freezes the current parameters as the per-session starting point.
    pub fn freeze(&mut self, learn_in_test: bool) {
        self.snapshot = Some((self.q.clone(), self.target.clone()));
        self.learn_in_test = learn_in_test;
        self.epsilon = 0.0;
    }
}

impl Policy for ItemwiseDqn {
    fn name(&self) -> &str {
        "itemwise-dqn"
    }

    fn begin_session(&mut self) -> Result<()> {
        if let Some((q, target)) = &self.snapshot {
            self.q = q.clone();
            self.target = target.clone();
            self.opt = Optimizer::new(self.config.optimizer, &self.q, self.config.lr);
            self.buffer.clear();
        }
        Ok(())
    }

    fn recommend(&mut self, state: &State, space: &ItemSpace, k: usize, _rng: &mut ChaCha8Rng) -> Result<Action> {
        Action::new(self.top_k(state, space, k)?)
    }

    fn observe(&mut self, t: Transition, slot_rewards: &[f64]) -> Result<()> {
        if !self.learn_in_test {
            return Ok(());
        }
        self.remember(&t.state, &t.action, slot_rewards, &t.next_state);
        self.learn()?;
        Ok(())
    }

    fn checksum(&self) -> Option<String> {
        Some(self.q.checksum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dqn(items: usize, gamma: f64) -> ItemwiseDqn {
        let table = Arc::new(EmbeddingTable::random(items, 4, &mut ChaCha8Rng::seed_from_u64(1)));
        let cfg = DqnConfig {
            hidden: vec![8],
            gamma,
            warmup: 1,
            batch_size: 4,
            ..DqnConfig::default()
        };
        ItemwiseDqn::new(table, 3, cfg, 2).unwrap()
    }

    #[test]
    fn lists_are_distinct_top_items() {
        let d = dqn(20, 0.75);
        let state = State::from_prior(&[ItemId(1)], 3);
        let space = ItemSpace::full(20);
        let list = d.top_k(&state, &space, 4).unwrap();
        let all: Vec<ItemId> = space.items().collect();
        let q = d.q_values(d.params(), &state, &all).unwrap();
        let mut sorted = q.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let picked: Vec<f64> = list.iter().map(|i| q[i.index()]).collect();
        assert_eq!(picked, sorted[..4].to_vec());
        assert!(Action::new(list).is_ok());
    }

    #[test]
    fn myopic_learning_regresses_on_immediate_reward() {
        let mut d = dqn(10, 0.0);
        let s = State::from_prior(&[ItemId(0)], 3);
        let a = Action::new(vec![ItemId(2)]).unwrap();
        for _ in 0..1000 {
            d.remember(&s, &a, &[1.0], &s);
            d.learn().unwrap();
        }
        let q = d.q_values(d.params(), &s, &[ItemId(2)]).unwrap()[0];
        assert!((q - 1.0).abs() < 0.05, "{q}");
    }
}
