use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentSnapshot, ItemSpace, LirdAgent, ReplayBuffer, Transition};
use crate::data::{ItemId, Session};
use crate::error::{Error, Result};
use crate::sim::{Action, State};

/// A recommender under test.
pub trait Policy {
    fn name(&self) -> &str;

    /// Called before every test session; learning policies restore their
    /// snapshot here.
    fn begin_session(&mut self) -> Result<()> {
        Ok(())
    }

    fn recommend(&mut self, state: &State, space: &ItemSpace, k: usize, rng: &mut ChaCha8Rng) -> Result<Action>;

    /// Feedback for the last list, with the per-slot rewards alongside the
    /// transition. Learning policies may update here.
    fn observe(&mut self, _transition: Transition, _slot_rewards: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Checksum of the current parameters, for policies that have any.
    fn checksum(&self) -> Option<String> {
        None
    }
}

fn check_space(space: &ItemSpace, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("list length must be positive".into()));
    }
    if space.len() < k {
        return Err(Error::InvalidArgument(format!(
            "only {} items available for a list of {k}",
            space.len()
        )));
    }
    Ok(())
}

/// Uniformly random distinct items.
#[derive(Clone, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn recommend(&mut self, _state: &State, space: &ItemSpace, k: usize, rng: &mut ChaCha8Rng) -> Result<Action> {
        check_space(space, k)?;
        let items: Vec<ItemId> = space.items().collect();
        let picked = index::sample(rng, items.len(), k).into_iter().map(|i| items[i]).collect();
        Action::new(picked)
    }
}

/// The most positively engaged items in the training log, skipping items
/// already in the state.
#[derive(Clone, Debug)]
pub struct PopularityPolicy {
    ranking: Vec<ItemId>,
}

impl PopularityPolicy {
    /// Counts clicks and orders (including prior positives) per item. Ties
    /// go to the lower id.
    pub fn from_sessions(sessions: &[Session], catalog_size: usize) -> Self {
        let mut counts = vec![0usize; catalog_size];
        for s in sessions {
            for item in s.prior_positives.iter().copied().chain(s.positives()) {
                if let Some(c) = counts.get_mut(item.index()) {
                    *c += 1;
                }
            }
        }
        let mut ranking: Vec<ItemId> = (0..catalog_size as u32).map(ItemId).collect();
        ranking.sort_by(|a, b| counts[b.index()].cmp(&counts[a.index()]).then(a.cmp(b)));
        PopularityPolicy { ranking }
    }

    pub fn ranking(&self) -> &[ItemId] {
        &self.ranking
    }
}

impl Policy for PopularityPolicy {
    fn name(&self) -> &str {
        "popularity"
    }

    fn recommend(&mut self, state: &State, space: &ItemSpace, k: usize, _rng: &mut ChaCha8Rng) -> Result<Action> {
        check_space(space, k)?;
        let mut picked: Vec<ItemId> = self
            .ranking
            .iter()
            .copied()
            .filter(|&i| space.contains(i) && !state.contains(i))
            .take(k)
            .collect();
        // fall back to state items only when nothing else is left
        if picked.len() < k {
            for i in self.ranking.iter().copied().filter(|&i| space.contains(i)) {
                if picked.len() == k {
                    break;
                }
                if !picked.contains(&i) {
                    picked.push(i);
                }
            }
        }
        Action::new(picked)
    }
}

/// A trained agent that is reset to its snapshot before each session and
/// keeps learning from the session's own feedback.
#[derive(Clone, Debug)]
pub struct LirdPolicy {
    agent: LirdAgent,
    snapshot: AgentSnapshot,
    checksum: String,
    name: String,
    learn: bool,
    batch_size: usize,
    warmup: usize,
    noise: f64,
}

impl LirdPolicy {
    pub fn new(mut agent: LirdAgent, learn: bool, batch_size: usize, warmup: usize) -> Self {
        let snapshot = agent.snapshot();
        let checksum = snapshot.checksum();
        let capacity = agent.config().replay.capacity;
        let replay = &agent.config().replay;
        let buffer = ReplayBuffer::new(capacity, replay.priority_exponent, replay.priority_epsilon);
        agent.set_replay(buffer, warmup);
        LirdPolicy {
            agent,
            snapshot,
            checksum,
            name: "lird".into(),
            learn,
            batch_size,
            warmup,
            noise: 0.0,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn snapshot_checksum(&self) -> &str {
        &self.checksum
    }

    pub fn agent(&self) -> &LirdAgent {
        &self.agent
    }
}

impl Policy for LirdPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin_session(&mut self) -> Result<()> {
        self.agent.restore(&self.snapshot)?;
        let now = self.agent.checksum();
        if now != self.checksum {
            return Err(Error::ChecksumMismatch {
                expected: self.checksum.clone(),
                actual: now,
            });
        }
        Ok(())
    }

    fn recommend(&mut self, state: &State, space: &ItemSpace, k: usize, _rng: &mut ChaCha8Rng) -> Result<Action> {
        if k != self.agent.dims().list_len {
            return Err(Error::DimensionMismatch {
                expected: self.agent.dims().list_len,
                actual: k,
            });
        }
        self.agent.act(state, space, self.noise)
    }

    fn observe(&mut self, transition: Transition, _slot_rewards: &[f64]) -> Result<()> {
        if !self.learn {
            return Ok(());
        }
        self.agent.remember(transition);
        if self.agent.buffer().len() >= self.warmup {
            self.agent.learn(self.batch_size)?;
        }
        Ok(())
    }

    fn checksum(&self) -> Option<String> {
        Some(self.agent.checksum())
    }
}
