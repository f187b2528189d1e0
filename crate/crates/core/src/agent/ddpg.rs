use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::debug;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Session;
use crate::embed::{hex_digest, EmbeddingTable};
use crate::error::{Error, Result};
use crate::net::{load_checkpoint, save_checkpoint, Grads, NetParams, Optimizer};
use crate::sim::{Action, Simulator, State};

use super::actor::{perturb, recommend_list, Actor, ItemSpace};
use super::critic::{action_block, join, Critic};
use super::replay::{ReplayBuffer, Transition};
use super::{greedy_from_scores, table_view, AgentConfig, Dims, GradientPoint};

/// `y = r + gamma * Q'(s', a')` where `a'` is the target actor's greedy list
/// over the whole catalog.
pub fn td_target(actor: &Actor, critic: &Critic, table: &EmbeddingTable, t: &Transition, gamma: f64) -> Result<f64> {
    Ok(td_targets(actor, critic, table, &[t], gamma)?[0])
}

pub fn td_targets(
    actor: &Actor,
    critic: &Critic,
    table: &EmbeddingTable,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(batch.iter().map(|t| t.reward).collect());
    }
    let dims = actor.dims();
    let next = state_matrix(batch.iter().map(|t| &t.next_state), table, dims)?;
    let next_actions = greedy_action_matrix(&actor.target, next.view(), table, dims)?;
    let q = critic.q_batch(&critic.target, next.view(), next_actions.view())?;
    Ok(batch.iter().zip(q).map(|(t, q)| t.reward + gamma * q).collect())
}

fn state_matrix<'a>(
    states: impl ExactSizeIterator<Item = &'a State>,
    table: &EmbeddingTable,
    dims: Dims,
) -> Result<Array2<f64>> {
    let rows = states.len();
    let mut flat = Vec::with_capacity(rows * dims.state_dim());
    for s in states {
        if s.len() != dims.state_len {
            return Err(Error::DimensionMismatch {
                expected: dims.state_len,
                actual: s.len(),
            });
        }
        s.write_vector(table, &mut flat);
    }
    Ok(Array2::from_shape_vec((rows, dims.state_dim()), flat).expect("rows of N*d"))
}

fn action_matrix<'a>(
    actions: impl ExactSizeIterator<Item = &'a Action>,
    table: &EmbeddingTable,
    dims: Dims,
) -> Result<Array2<f64>> {
    let rows = actions.len();
    let mut flat = Vec::with_capacity(rows * dims.action_dim());
    for a in actions {
        if a.len() != dims.list_len {
            return Err(Error::DimensionMismatch {
                expected: dims.list_len,
                actual: a.len(),
            });
        }
        a.write_vector(table, &mut flat);
    }
    Ok(Array2::from_shape_vec((rows, dims.action_dim()), flat).expect("rows of K*d"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    /// Mean squared TD error before the step.
    pub loss: f64,
    /// `y - Q(s, a)` per sample, before the step.
    pub td_errors: Vec<f64>,
    pub mean_q: f64,
}

/// Gradient of `mean_i (y_i - Q(s_i, a_i))^2` with respect to the critic.
pub fn critic_gradient(
    params: &NetParams,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    targets: &[f64],
    dims: Dims,
) -> Result<(Grads, UpdateStats)> {
    if targets.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    if targets.len() != states.nrows() {
        return Err(Error::DimensionMismatch {
            expected: states.nrows(),
            actual: targets.len(),
        });
    }
    let tape = params.forward_tape(join(states, actions, dims)?)?;
    let q = tape.output().column(0).to_vec();
    let b = targets.len() as f64;
    let td_errors: Vec<f64> = targets.iter().zip(&q).map(|(y, q)| y - q).collect();
    let loss = td_errors.iter().map(|e| e * e).sum::<f64>() / b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss"));
    }
    let upstream = Array2::from_shape_fn((targets.len(), 1), |(i, _)| -2.0 * td_errors[i] / b);
    let (grads, _) = params.backward_tape(&tape, upstream.view())?;
    let mean_q = q.iter().sum::<f64>() / b;
    Ok((
        grads,
        UpdateStats {
            loss,
            td_errors,
            mean_q,
        },
    ))
}

/// One optimizer step on the critic's squared TD error.
pub fn critic_update(
    critic: &mut Critic,
    optimizer: &mut Optimizer,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    targets: &[f64],
) -> Result<UpdateStats> {
    let (grads, stats) = critic_gradient(&critic.params, states, actions, targets, critic.dims())?;
    optimizer.step(&mut critic.params, &grads)?;
    Ok(stats)
}

/// `mean_i Q(s_i, f(s_i))`, with the actor's raw weight output in the
/// critic's action slot.
pub fn policy_objective(actor: &NetParams, critic: &NetParams, states: ArrayView2<'_, f64>, dims: Dims) -> Result<f64> {
    let w = actor.forward_batch(states)?;
    let q = critic.forward_batch(join(states, w.view(), dims)?.view())?;
    Ok(q.mean().unwrap_or(0.0))
}

/// Gradient of `-policy_objective` with respect to the actor, so that a
/// descent step increases Q. The critic is held fixed.
pub fn actor_gradient(actor: &NetParams, critic: &NetParams, states: ArrayView2<'_, f64>, dims: Dims) -> Result<Grads> {
    actor_gradient_at(actor, critic, states, None, dims)
}

/// Like `actor_gradient`, but `dQ/da` is taken at `points` (one action vector
/// per state) instead of at the actor's own output, and passed straight
/// through to the weights.
pub fn actor_gradient_at(
    actor: &NetParams,
    critic: &NetParams,
    states: ArrayView2<'_, f64>,
    points: Option<ArrayView2<'_, f64>>,
    dims: Dims,
) -> Result<Grads> {
    if states.nrows() == 0 {
        return Err(Error::Empty("minibatch"));
    }
    let actor_tape = actor.forward_tape(states.to_owned())?;
    let at = points.unwrap_or_else(|| actor_tape.output().view());
    let critic_tape = critic.forward_tape(join(states, at, dims)?)?;
    let b = states.nrows() as f64;
    let upstream = Array2::from_elem((states.nrows(), 1), -1.0 / b);
    let (_, input_grad) = critic.backward_tape(&critic_tape, upstream.view())?;
    let grad_a = action_block(&input_grad, dims);
    let (grads, _) = actor.backward_tape(&actor_tape, grad_a.view())?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("policy gradient"));
    }
    Ok(grads)
}

pub fn actor_update(actor: &mut Actor, critic: &Critic, optimizer: &mut Optimizer, states: ArrayView2<'_, f64>) -> Result<()> {
    let grads = actor_gradient(&actor.params, &critic.params, states, actor.dims())?;
    optimizer.step(&mut actor.params, &grads)
}

/// Embeddings of the greedy lists the actor's current weights select.
fn greedy_action_matrix(actor: &NetParams, states: ArrayView2<'_, f64>, table: &EmbeddingTable, dims: Dims) -> Result<Array2<f64>> {
    let weights = actor.forward_batch(states)?;
    let space = ItemSpace::full(table.len());
    let items = table_view(table);
    let mut out = Array2::zeros((states.nrows(), dims.action_dim()));
    for (i, w) in weights.rows().into_iter().enumerate() {
        let w = w.into_shape_with_order((dims.list_len, dims.embed_dim)).expect("actor output is K*d");
        let list = greedy_from_scores(items.dot(&w.t()).view(), &space)?;
        let mut row = out.row_mut(i);
        for (k, item) in list.iter().enumerate() {
            row.slice_mut(ndarray::s![k * dims.embed_dim..(k + 1) * dims.embed_dim])
                .assign(&ndarray::aview1(table.row(*item)));
        }
    }
    Ok(out)
}

/// Frozen copy of all four networks.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentSnapshot {
    pub actor: NetParams,
    pub actor_target: NetParams,
    pub critic: NetParams,
    pub critic_target: NetParams,
}

const TAGS: [&str; 4] = ["actor", "actor_target", "critic", "critic_target"];

impl AgentSnapshot {
    fn nets(&self) -> [&NetParams; 4] {
        [&self.actor, &self.actor_target, &self.critic, &self.critic_target]
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for n in self.nets() {
            h.update(n.checksum().as_bytes());
        }
        hex_digest(h)
    }

    /// Writes `<tag>.json` for each network into `dir`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (tag, net) in TAGS.iter().zip(self.nets()) {
            save_checkpoint(&dir.join(format!("{tag}.json")), net, tag, seed)?;
        }
        Ok(())
    }

    /// Loads a snapshot written by `save`, checking each network against the
    /// architecture implied by `dims` and `config`.
    pub fn load(dir: &Path, dims: Dims, config: &AgentConfig) -> Result<(Self, u64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor_arch = Actor::new(dims, &config.actor_hidden, &mut rng)?.params.architecture();
        let critic_arch = Critic::new(dims, &config.critic_hidden, &mut rng)?.params.architecture();
        let (actor, seed) = load_checkpoint(&dir.join("actor.json"), "actor", &actor_arch)?;
        let (actor_target, _) = load_checkpoint(&dir.join("actor_target.json"), "actor_target", &actor_arch)?;
        let (critic, _) = load_checkpoint(&dir.join("critic.json"), "critic", &critic_arch)?;
        let (critic_target, _) = load_checkpoint(&dir.join("critic_target.json"), "critic_target", &critic_arch)?;
        Ok((
            AgentSnapshot {
                actor,
                actor_target,
                critic,
                critic_target,
            },
            seed,
        ))
    }
}

/// Actor, critic, their optimizers and a replay buffer.
#[derive(Clone, Debug)]
pub struct LirdAgent {
    pub actor: Actor,
    pub critic: Critic,
    config: AgentConfig,
    table: Arc<EmbeddingTable>,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    updates: usize,
}

impl LirdAgent {
    pub fn new(dims: Dims, config: AgentConfig, table: Arc<EmbeddingTable>, seed: u64) -> Result<Self> {
        config.validate()?;
        if table.dim() != dims.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: dims.embed_dim,
                actual: table.dim(),
            });
        }
        if table.len() < dims.list_len {
            return Err(Error::InvalidArgument(format!(
                "catalog of {} items is smaller than the list length {}",
                table.len(),
                dims.list_len
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Actor::new(dims, &config.actor_hidden, &mut rng)?;
        let critic = Critic::new(dims, &config.critic_hidden, &mut rng)?;
        let actor_opt = Optimizer::new(config.optimizer, &actor.params, config.actor_lr);
        let critic_opt = Optimizer::new(config.optimizer, &critic.params, config.critic_lr);
        let buffer = ReplayBuffer::from_config(&config.replay);
        Ok(LirdAgent {
            actor,
            critic,
            config,
            table,
            actor_opt,
            critic_opt,
            buffer,
            rng,
            updates: 0,
        })
    }

    pub fn dims(&self) -> Dims {
        self.actor.dims()
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn table(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Greedy list from the actor's weights, with Gaussian noise of the given
    /// std added to every weight first.
    pub fn act(&mut self, state: &State, space: &ItemSpace, noise_std: f64) -> Result<Action> {
        let mut w = self.actor.generate_weights(&state.vector(&self.table))?;
        perturb(&mut w, noise_std, &mut self.rng);
        recommend_list(w.view(), &self.table, space)
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One critic step, one actor step and a soft target update on a sampled
    /// minibatch. Returns `None` until the buffer holds `warmup` transitions.
    pub fn learn(&mut self, batch_size: usize) -> Result<Option<UpdateStats>> {
        if self.buffer.len() < self.config.warmup.max(1) {
            return Ok(None);
        }
        let dims = self.dims();
        let indices = self.buffer.sample(batch_size, &mut self.rng)?;
        let batch: Vec<&Transition> = indices.iter().map(|&i| self.buffer.get(i).expect("sampled index")).collect();
        let targets = td_targets(&self.actor, &self.critic, &self.table, &batch, self.config.gamma)?;
        let states = state_matrix(batch.iter().map(|t| &t.state), &self.table, dims)?;
        let actions = action_matrix(batch.iter().map(|t| &t.action), &self.table, dims)?;
        let stats = critic_update(&mut self.critic, &mut self.critic_opt, states.view(), actions.view(), &targets)?;
        let grads = match self.config.gradient_point {
            GradientPoint::Weights => actor_gradient(&self.actor.params, &self.critic.params, states.view(), dims)?,
            GradientPoint::List => {
                let points = greedy_action_matrix(&self.actor.params, states.view(), &self.table, dims)?;
                actor_gradient_at(&self.actor.params, &self.critic.params, states.view(), Some(points.view()), dims)?
            }
        };
        self.actor_opt.step(&mut self.actor.params, &grads)?;
        self.buffer.update_priorities(&indices, &stats.td_errors)?;
        self.critic.target.soft_update(&self.critic.params, self.config.tau)?;
        self.actor.target.soft_update(&self.actor.params, self.config.tau)?;
        self.updates += 1;
        Ok(Some(stats))
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            actor: self.actor.params.clone(),
            actor_target: self.actor.target.clone(),
            critic: self.critic.params.clone(),
            critic_target: self.critic.target.clone(),
        }
    }

    pub fn checksum(&self) -> String {
        self.snapshot().checksum()
    }

    /// Restores all networks, fresh optimizer state and an empty buffer.
    pub fn restore(&mut self, snap: &AgentSnapshot) -> Result<()> {
        let dims = self.dims();
        self.actor = Actor::from_params(snap.actor.clone(), snap.actor_target.clone(), dims)?;
        self.critic = Critic::from_params(snap.critic.clone(), snap.critic_target.clone(), dims)?;
        self.actor_opt = Optimizer::new(self.config.optimizer, &self.actor.params, self.config.actor_lr);
        self.critic_opt = Optimizer::new(self.config.optimizer, &self.critic.params, self.config.critic_lr);
        self.buffer.clear();
        Ok(())
    }

    /// Replaces the agent's rng stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Overrides the buffer and warmup, e.g. for short within-session learning.
    pub fn set_replay(&mut self, buffer: ReplayBuffer, warmup: usize) {
        self.buffer = buffer;
        self.config.warmup = warmup;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub cumulative_reward: f64,
    /// Mean critic loss over the episode's updates, 0 without updates.
    pub critic_loss: f64,
    pub mean_q: f64,
    pub updates: usize,
}

/// Runs `config.episodes` episodes of `config.steps` lists each. Every
/// episode starts from the prior positives of a randomly drawn session, with
/// a fresh item space; recommended items leave the space until fewer than
/// `K` remain. Deterministic given `seed`.
pub fn train(
    sessions: &[Session],
    sim: &mut Simulator,
    config: &AgentConfig,
    seed: u64,
) -> Result<(LirdAgent, Vec<EpisodeLog>)> {
    if sessions.is_empty() {
        return Err(Error::Empty("training sessions"));
    }
    let table = sim.table().clone();
    let dims = Dims {
        state_len: sim.state_len(),
        list_len: sim.list_len(),
        embed_dim: table.dim(),
    };
    let mut agent = LirdAgent::new(dims, config.clone(), table.clone(), seed)?;
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut space = ItemSpace::full(table.len());
    let mut logs = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let session = &sessions[env_rng.random_range(0..sessions.len())];
        let mut state = State::from_prior(&session.prior_positives, dims.state_len);
        let noise = config.noise_at(episode);
        space.reset();
        let (mut cumulative, mut loss, mut q, mut updates) = (0.0, 0.0, 0.0, 0);
        for _ in 0..config.steps {
            if space.len() < dims.list_len {
                space.reset();
            }
            let action = agent.act(&state, &space, noise)?;
            for &item in action.items() {
                space.remove(item);
            }
            let outcome = sim.step(&state, &action, &mut env_rng)?;
            sim.record(&state, &action, &outcome.feedback);
            cumulative += outcome.overall;
            agent.remember(Transition {
                state,
                action,
                reward: outcome.overall,
                next_state: outcome.next_state.clone(),
                priority: 0.0,
            });
            if let Some(stats) = agent.learn(config.replay.batch_size)? {
                loss += stats.loss;
                q += stats.mean_q;
                updates += 1;
            }
            state = outcome.next_state;
        }
        sim.end_episode(episode)?;
        let denom = updates.max(1) as f64;
        let log = EpisodeLog {
            episode,
            cumulative_reward: cumulative,
            critic_loss: loss / denom,
            mean_q: q / denom,
            updates,
        };
        debug!(
            "episode {episode}: reward {:.3} loss {:.4} q {:.3}",
            log.cumulative_reward, log.critic_loss, log.mean_q
        );
        logs.push(log);
    }
    Ok((agent, logs))
}
