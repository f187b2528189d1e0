//! Offline user simulator.
//!
//! Logged sessions are replayed into a memory of `(state, action) -> rewards`
//! triples. A new state-action pair is mapped to one of the logged reward
//! patterns with probability proportional to its summed cosine similarity to
//! the triples carrying that pattern. Because cosine similarity is linear in
//! the unit-normalized memory vectors, each pattern group only needs its size
//! and the mean of its normalized state and action vectors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeedbackKind, ItemId, RewardMap, Session};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};

/// The `N` most recent positive items, oldest first. `None` marks a padding
/// slot whose embedding is the zero vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    items: Vec<Option<ItemId>>,
}

impl State {
    /// Keeps the `n` most recent priors and left-pads shorter histories.
    pub fn from_prior(prior: &[ItemId], n: usize) -> Self {
        let keep = &prior[prior.len().saturating_sub(n)..];
        let mut items = vec![None; n - keep.len()];
        items.extend(keep.iter().copied().map(Some));
        State { items }
    }

    pub fn from_slots(items: Vec<Option<ItemId>>) -> Self {
        State { items }
    }

    pub fn slots(&self) -> &[Option<ItemId>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains(&Some(item))
    }

    /// Drops the oldest slot and appends `item`.
    pub fn push_positive(&mut self, item: ItemId) {
        if self.items.is_empty() {
            return;
        }
        self.items.remove(0);
        self.items.push(Some(item));
    }

    /// Appends every action item whose feedback is positive, in list order.
    pub fn advance(&self, action: &[ItemId], feedback: &[FeedbackKind]) -> State {
        let mut next = self.clone();
        for (&item, &kind) in action.iter().zip(feedback) {
            if kind.is_positive() {
                next.push_positive(item);
            }
        }
        next
    }

    /// Concatenated slot embeddings (`N * d` values).
    pub fn vector(&self, table: &EmbeddingTable) -> Vec<f64> {
        let d = table.dim();
        let mut out = Vec::with_capacity(self.items.len() * d);
        self.write_vector(table, &mut out);
        out
    }

    pub(crate) fn write_vector(&self, table: &EmbeddingTable, out: &mut Vec<f64>) {
        for slot in &self.items {
            match slot {
                Some(item) => out.extend_from_slice(table.row(*item)),
                None => out.extend(std::iter::repeat_n(0.0, table.dim())),
            }
        }
    }
}

/// An ordered list of distinct recommended items.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    items: Vec<ItemId>,
}

impl Action {
    pub fn new(items: Vec<ItemId>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("action list"));
        }
        for (i, a) in items.iter().enumerate() {
            if items[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("item {a} appears twice in the action list")));
            }
        }
        Ok(Action { items })
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn vector(&self, table: &EmbeddingTable) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.items.len() * table.dim());
        self.write_vector(table, &mut out);
        out
    }

    pub(crate) fn write_vector(&self, table: &EmbeddingTable, out: &mut Vec<f64>) {
        for item in &self.items {
            out.extend_from_slice(table.row(*item));
        }
    }
}

/// A state together with its embedding representation.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVec {
    pub state: State,
    pub vec: Vec<f64>,
}

impl StateVec {
    pub fn new(state: State, table: &EmbeddingTable) -> Self {
        let vec = state.vector(table);
        StateVec { state, vec }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionVec {
    pub action: Action,
    pub vec: Vec<f64>,
}

impl ActionVec {
    pub fn new(action: Action, table: &EmbeddingTable) -> Self {
        let vec = action.vector(table);
        ActionVec { action, vec }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryTriple {
    pub state: StateVec,
    pub action: ActionVec,
    pub feedback: Vec<FeedbackKind>,
}

impl MemoryTriple {
    pub fn rewards(&self, map: &RewardMap) -> Vec<f64> {
        map.rewards(&self.feedback)
    }
}

/// Replays each session in windows of `k` events. Trailing windows shorter
/// than `k` are dropped. Items with positive feedback enter the state after
/// their window is recorded.
pub fn build_memory(sessions: &[Session], n: usize, k: usize, table: &EmbeddingTable) -> Result<Vec<MemoryTriple>> {
    if k == 0 {
        return Err(Error::InvalidArgument("list length K must be at least 1".into()));
    }
    let mut memory = Vec::new();
    for session in sessions {
        let mut state = State::from_prior(&session.prior_positives, n);
        for window in session.events.chunks_exact(k) {
            let items: Vec<ItemId> = window.iter().map(|e| e.item).collect();
            let feedback: Vec<FeedbackKind> = window.iter().map(|e| e.feedback).collect();
            for &item in items.iter().chain(state.slots().iter().flatten()) {
                table.lookup(item)?;
            }
            let next = state.advance(&items, &feedback);
            // logs may repeat an item inside one window; keep it as logged
            let action = Action { items };
            memory.push(MemoryTriple {
                state: StateVec::new(state, table),
                action: ActionVec::new(action, table),
                feedback,
            });
            state = next;
        }
    }
    Ok(memory)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `v / |v|`, leaving a zero vector at zero.
pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `alpha * cos(s, s_i) + (1 - alpha) * cos(a, a_i)`.
pub fn pair_similarity(state: &[f64], action: &[f64], triple: &MemoryTriple, alpha: f64) -> Result<f64> {
    Ok(alpha * cosine(state, &triple.state.vec)? + (1.0 - alpha) * cosine(action, &triple.action.vec)?)
}

/// Triples sharing one reward pattern, reduced to what the grouped
/// probability needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardGroup {
    pub pattern: Vec<FeedbackKind>,
    pub count: usize,
    /// Mean of the unit-normalized state vectors.
    pub mean_state: Vec<f64>,
    pub mean_action: Vec<f64>,
}

/// One group per distinct pattern, ordered by pattern.
pub fn build_groups(memory: &[MemoryTriple]) -> Result<Vec<RewardGroup>> {
    if memory.is_empty() {
        return Err(Error::Empty("simulator memory"));
    }
    let mut acc: BTreeMap<&[FeedbackKind], (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for m in memory {
        let entry = acc.entry(&m.feedback).or_insert_with(|| {
            (
                0,
                vec![0.0; m.state.vec.len()],
                vec![0.0; m.action.vec.len()],
            )
        });
        if entry.1.len() != m.state.vec.len() || entry.2.len() != m.action.vec.len() {
            return Err(Error::DimensionMismatch {
                expected: entry.1.len() + entry.2.len(),
                actual: m.state.vec.len() + m.action.vec.len(),
            });
        }
        entry.0 += 1;
        for (s, x) in entry.1.iter_mut().zip(unit(&m.state.vec)) {
            *s += x;
        }
        for (s, x) in entry.2.iter_mut().zip(unit(&m.action.vec)) {
            *s += x;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(pattern, (count, s, a))| {
            let inv = 1.0 / count as f64;
            RewardGroup {
                pattern: pattern.to_vec(),
                count,
                mean_state: s.into_iter().map(|x| x * inv).collect(),
                mean_action: a.into_iter().map(|x| x * inv).collect(),
            }
        })
        .collect())
}

/// Normalizes non-negative group scores; negative scores clamp to zero and an
/// all-zero vector becomes uniform.
pub fn normalize_scores(scores: &mut [f64]) {
    for s in scores.iter_mut() {
        if !(*s > 0.0) {
            *s = 0.0;
        }
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        for s in scores.iter_mut() {
            *s /= total;
        }
    } else {
        let u = 1.0 / scores.len() as f64;
        scores.fill(u);
    }
}

/// Probability of mapping the pair to each group's pattern, in group order.
///
/// The score of group `x` is
/// `N_x * (alpha * s . mean_state_x / |s| + (1 - alpha) * a . mean_action_x / |a|)`.
/// A zero-norm state or action contributes nothing to its term.
pub fn group_probabilities(state: &[f64], action: &[f64], groups: &[RewardGroup], alpha: f64) -> Result<Vec<f64>> {
    let first = groups.first().ok_or(Error::Empty("reward groups"))?;
    if first.mean_state.len() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: first.mean_state.len(),
            actual: state.len(),
        });
    }
    if first.mean_action.len() != action.len() {
        return Err(Error::DimensionMismatch {
            expected: first.mean_action.len(),
            actual: action.len(),
        });
    }
    let ns = norm(state);
    let na = norm(action);
    let ws = if ns > 0.0 { alpha / ns } else { 0.0 };
    let wa = if na > 0.0 { (1.0 - alpha) / na } else { 0.0 };
    let mut scores: Vec<f64> = groups
        .iter()
        .map(|g| g.count as f64 * (ws * dot(state, &g.mean_state) + wa * dot(action, &g.mean_action)))
        .collect();
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("group scores"));
    }
    normalize_scores(&mut scores);
    Ok(scores)
}

/// Categorical draw; returns the index of the chosen entry.
pub fn sample_pattern(probabilities: &[f64], rng: &mut impl Rng) -> Result<usize> {
    if probabilities.is_empty() {
        return Err(Error::Empty("probability distribution"));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 || probabilities.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // rounding left u at the top edge; return the last non-zero entry
    Ok(probabilities.iter().rposition(|p| *p > 0.0).unwrap_or(probabilities.len() - 1))
}

/// `sum_k gamma_pos^(k-1) * rewards[k]`.
pub fn overall_reward(rewards: &[f64], gamma_pos: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma_pos;
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Weight of state similarity against action similarity.
    pub alpha: f64,
    /// Positional discount of the overall list reward.
    pub gamma_pos: f64,
    /// Episodes between group refreshes when simulated triples are appended.
    pub refresh_every: usize,
    pub append_simulated: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            alpha: 0.2,
            gamma_pos: 0.9,
            refresh_every: 1000,
            append_simulated: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma_pos > 0.0 && self.gamma_pos <= 1.0) {
            return Err(Error::Config(format!(
                "positional discount must lie in (0, 1], got {}",
                self.gamma_pos
            )));
        }
        if self.refresh_every == 0 {
            return Err(Error::Config("refresh_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub feedback: Vec<FeedbackKind>,
    pub rewards: Vec<f64>,
    pub overall: f64,
    pub next_state: State,
}

/// The interaction environment: reward groups plus the embedding table used
/// to vectorize states and actions.
#[derive(Clone, Debug)]
pub struct Simulator {
    table: Arc<EmbeddingTable>,
    groups: Vec<RewardGroup>,
    config: SimConfig,
    rewards: RewardMap,
    n: usize,
    k: usize,
    memory: Vec<MemoryTriple>,
    pending: usize,
}

impl Simulator {
    pub fn new(
        memory: Vec<MemoryTriple>,
        table: Arc<EmbeddingTable>,
        config: SimConfig,
        rewards: RewardMap,
    ) -> Result<Self> {
        config.validate()?;
        rewards.validate()?;
        let groups = build_groups(&memory)?;
        let n = memory[0].state.state.len();
        let k = memory[0].action.action.len();
        let memory = if config.append_simulated { memory } else { Vec::new() };
        Ok(Simulator {
            table,
            groups,
            config,
            rewards,
            n,
            k,
            memory,
            pending: 0,
        })
    }

    pub fn table(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    pub fn groups(&self) -> &[RewardGroup] {
        &self.groups
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn reward_map(&self) -> &RewardMap {
        &self.rewards
    }

    pub fn state_len(&self) -> usize {
        self.n
    }

    pub fn list_len(&self) -> usize {
        self.k
    }

    pub fn probabilities(&self, state: &State, action: &Action) -> Result<Vec<f64>> {
        group_probabilities(
            &state.vector(&self.table),
            &action.vector(&self.table),
            &self.groups,
            self.config.alpha,
        )
    }

    pub fn step(&self, state: &State, action: &Action, rng: &mut impl Rng) -> Result<StepOutcome> {
        if action.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                actual: action.len(),
            });
        }
        if state.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: state.len(),
            });
        }
        for &item in action.items() {
            self.table.lookup(item)?;
        }
        let probs = self.probabilities(state, action)?;
        let idx = sample_pattern(&probs, rng)?;
        let feedback = self.groups[idx].pattern.clone();
        let rewards = self.rewards.rewards(&feedback);
        let overall = overall_reward(&rewards, self.config.gamma_pos);
        let next_state = state.advance(action.items(), &feedback);
        Ok(StepOutcome {
            feedback,
            rewards,
            overall,
            next_state,
        })
    }

    /// Appends a simulated triple when `append_simulated` is on; otherwise a no-op.
    pub fn record(&mut self, state: &State, action: &Action, feedback: &[FeedbackKind]) {
        if !self.config.append_simulated {
            return;
        }
        self.memory.push(MemoryTriple {
            state: StateVec::new(state.clone(), &self.table),
            action: ActionVec::new(action.clone(), &self.table),
            feedback: feedback.to_vec(),
        });
        self.pending += 1;
    }

    /// Rebuilds group aggregates every `refresh_every` episodes if new
    /// triples were recorded. Returns whether a refresh happened.
    pub fn end_episode(&mut self, episode: usize) -> Result<bool> {
        if self.pending == 0 || (episode + 1) % self.config.refresh_every != 0 {
            return Ok(false);
        }
        self.groups = build_groups(&self.memory)?;
        self.pending = 0;
        Ok(true)
    }
}

const MEMORY_MAGIC: &str = "lird-memory";
const MEMORY_VERSION: u32 = 1;

fn slot_token(slot: &Option<ItemId>) -> String {
    match slot {
        Some(i) => i.to_string(),
        None => "-".into(),
    }
}

/// Text snapshot of a memory. The header carries the checksum of the
/// embedding table the vectors were built from.
pub fn memory_to_text(memory: &[MemoryTriple], table: &EmbeddingTable) -> String {
    let (n, k) = memory
        .first()
        .map(|m| (m.state.state.len(), m.action.action.len()))
        .unwrap_or((0, 0));
    let mut out = format!("{MEMORY_MAGIC} {MEMORY_VERSION} {n} {k} {}\n", table.checksum());
    for m in memory {
        let s: Vec<String> = m.state.state.slots().iter().map(slot_token).collect();
        let a: Vec<String> = m.action.action.items().iter().map(ItemId::to_string).collect();
        let r: Vec<&str> = m.feedback.iter().map(|f| f.token()).collect();
        out.push_str(&format!("{}\t{}\t{}\n", s.join(","), a.join(","), r.join(",")));
    }
    out
}

pub fn memory_from_text(text: &str, table: &EmbeddingTable) -> Result<Vec<MemoryTriple>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or(Error::Empty("memory snapshot"))?.split(' ').collect();
    let bad_header = || Error::Parse {
        line: 1,
        message: "bad memory header".into(),
    };
    if header.len() != 5 || header[0] != MEMORY_MAGIC || header[1] != MEMORY_VERSION.to_string() {
        return Err(bad_header());
    }
    let n: usize = header[2].parse().map_err(|_| bad_header())?;
    let k: usize = header[3].parse().map_err(|_| bad_header())?;
    if header[4] != table.checksum() {
        return Err(Error::Stale(
            "memory snapshot was built from a different embedding table; rerun `build-sim`".into(),
        ));
    }
    let item = |t: &str, line: usize| -> Result<ItemId> {
        let id: u32 = t.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid item `{t}`"),
        })?;
        table.lookup(ItemId(id)).map_err(|_| Error::ItemOutOfRange {
            line,
            item: id as u64,
            catalog_size: table.len(),
        })?;
        Ok(ItemId(id))
    };
    let mut memory = Vec::new();
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line,
                message: "expected three tab-separated fields".into(),
            });
        }
        let slots = fields[0]
            .split(',')
            .map(|t| if t == "-" { Ok(None) } else { item(t, line).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        let items = fields[1].split(',').map(|t| item(t, line)).collect::<Result<Vec<_>>>()?;
        let feedback = fields[2]
            .split(',')
            .map(|t| t.parse().map_err(|token| Error::UnknownFeedback { line, token }))
            .collect::<Result<Vec<FeedbackKind>>>()?;
        if slots.len() != n || items.len() != k || feedback.len() != k {
            return Err(Error::Parse {
                line,
                message: format!("expected state of {n} and action of {k}"),
            });
        }
        memory.push(MemoryTriple {
            state: StateVec::new(State::from_slots(slots), table),
            action: ActionVec::new(Action { items }, table),
            feedback,
        });
    }
    Ok(memory)
}

pub fn save_memory(path: &Path, memory: &[MemoryTriple], table: &EmbeddingTable) -> Result<()> {
    fs::write(path, memory_to_text(memory, table)).map_err(|e| Error::io(path, e))
}

pub fn load_memory(path: &Path, table: &EmbeddingTable) -> Result<Vec<MemoryTriple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    memory_from_text(&text, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Event;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use FeedbackKind::{Click, Order, Skip};

    fn identity_table(n: usize) -> EmbeddingTable {
        EmbeddingTable::from_rows(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
        .unwrap()
    }

    fn session(prior: &[u32], events: &[(u32, FeedbackKind)]) -> Session {
        Session {
            session_id: 0,
            prior_positives: prior.iter().map(|&i| ItemId(i)).collect(),
            events: events
                .iter()
                .map(|&(i, f)| Event {
                    item: ItemId(i),
                    feedback: f,
                })
                .collect(),
        }
    }

    fn ids(v: &[u32]) -> Vec<Option<ItemId>> {
        v.iter().map(|&i| Some(ItemId(i))).collect()
    }

    #[test]
    fn state_pads_and_truncates() {
        let s = State::from_prior(&[ItemId(1), ItemId(2)], 4);
        assert_eq!(s.slots(), &[None, None, Some(ItemId(1)), Some(ItemId(2))]);
        let s = State::from_prior(&[ItemId(1), ItemId(2), ItemId(3)], 2);
        assert_eq!(s.slots(), &ids(&[2, 3])[..]);
        let table = identity_table(4);
        let v = State::from_prior(&[ItemId(3)], 2).vector(&table);
        assert_eq!(v, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn all_skip_window_keeps_the_state() {
        let table = identity_table(8);
        let s = session(&[0, 1, 2], &[(3, Skip), (4, Skip)]);
        let m = build_memory(&[s], 3, 2, &table).unwrap();
        assert_eq!(m.len(), 1);
        let next = m[0].state.state.advance(m[0].action.action.items(), &m[0].feedback);
        assert_eq!(next, m[0].state.state);
    }

    #[test]
    fn click_first_and_order_last_shift_the_state() {
        // N = 6, K = 5: s = {s1..s6}; click a1 and order a5 -> {s3..s6, a1, a5}
        let state = State::from_prior(&[ItemId(0), ItemId(1), ItemId(2), ItemId(3), ItemId(4), ItemId(5)], 6);
        let action = [10, 11, 12, 13, 14].map(ItemId);
        let next = state.advance(&action, &[Click, Skip, Skip, Skip, Order]);
        assert_eq!(next.slots(), &ids(&[2, 3, 4, 5, 10, 14])[..]);
    }

    #[test]
    fn second_window_sees_first_window_positives() {
        let table = identity_table(10);
        let s = session(&[0, 1, 2], &[(3, Click), (4, Skip), (5, Skip), (6, Order), (7, Skip)]);
        let m = build_memory(&[s], 3, 2, &table).unwrap();
        // 5 events with K = 2 -> two full windows, trailing event dropped
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].state.state.slots(), &ids(&[0, 1, 2])[..]);
        assert_eq!(m[1].state.state.slots(), &ids(&[1, 2, 3])[..]);
        assert_eq!(m[1].action.action.items(), &[ItemId(5), ItemId(6)]);
        assert_eq!(m[1].feedback, vec![Skip, Order]);
    }

    #[test]
    fn short_sessions_yield_nothing() {
        let table = identity_table(5);
        let s = session(&[0], &[(1, Click)]);
        assert!(build_memory(&[s], 2, 2, &table).unwrap().is_empty());
        assert!(build_memory(&[], 2, 0, &table).is_err());
    }

    #[test]
    fn memory_rejects_unknown_items() {
        let table = identity_table(3);
        let s = session(&[0], &[(7, Click)]);
        assert!(build_memory(&[s], 2, 1, &table).is_err());
    }

    fn triple(s: Vec<f64>, a: Vec<f64>, feedback: Vec<FeedbackKind>) -> MemoryTriple {
        MemoryTriple {
            state: StateVec {
                state: State::from_slots(vec![None]),
                vec: s,
            },
            action: ActionVec {
                action: Action { items: vec![ItemId(0)] },
                vec: a,
            },
            feedback,
        }
    }

    #[test]
    fn similarity_of_a_pair_with_itself_is_one() {
        let m = triple(vec![1.0, 2.0, -1.0], vec![0.5, 0.5], vec![Skip]);
        for alpha in [0.0, 0.2, 0.7, 1.0] {
            let v = pair_similarity(&m.state.vec, &m.action.vec, &m, alpha).unwrap();
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_with_alpha_one_ignores_actions() {
        let m = triple(vec![1.0, 0.0], vec![1.0, 0.0], vec![Skip]);
        let v = pair_similarity(&[0.0, 3.0], &[-1.0, 0.0], &m, 1.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn similarity_matches_hand_computation() {
        // s = (1,2,0,1), s_i = (2,0,1,1): dot 3, norms sqrt6, sqrt6 -> 0.5
        // a = (1,0,0,0), a_i = (1,1,0,0): dot 1, norms 1, sqrt2 -> 1/sqrt2
        let m = triple(vec![2.0, 0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0, 0.0], vec![Click]);
        let v = pair_similarity(&[1.0, 2.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 0.0], &m, 0.2).unwrap();
        let expected = 0.2 * 0.5 + 0.8 / 2f64.sqrt();
        assert!((v - expected).abs() < 1e-12);
        // symmetric
        let p = triple(vec![1.0, 2.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0], vec![Click]);
        let w = pair_similarity(&m.state.vec, &m.action.vec, &p, 0.2).unwrap();
        assert!((v - w).abs() < 1e-15);
    }

    #[test]
    fn similarity_rejects_zero_vectors() {
        let m = triple(vec![1.0, 0.0], vec![1.0, 0.0], vec![Skip]);
        assert!(matches!(
            pair_similarity(&[0.0, 0.0], &[1.0, 0.0], &m, 0.5),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn single_triple_group_is_its_unit_vectors() {
        let m = triple(vec![3.0, 4.0], vec![0.0, 2.0], vec![Click]);
        let g = build_groups(std::slice::from_ref(&m)).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].count, 1);
        assert_eq!(g[0].mean_state, vec![0.6, 0.8]);
        assert_eq!(g[0].mean_action, vec![0.0, 1.0]);
        assert!(build_groups(&[]).is_err());
    }

    #[test]
    fn two_item_lists_have_at_most_nine_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let memory: Vec<MemoryTriple> = (0..500)
            .map(|_| {
                let fb = (0..2).map(|_| FeedbackKind::ALL[rng.random_range(0..3)]).collect();
                triple(vec![rng.random(), 1.0], vec![1.0, rng.random()], fb)
            })
            .collect();
        let g = build_groups(&memory).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.iter().map(|g| g.count).sum::<usize>(), 500);
    }

    #[test]
    fn single_group_gets_all_the_mass() {
        let m = triple(vec![1.0, 1.0], vec![1.0, 0.0], vec![Click]);
        let g = build_groups(&[m]).unwrap();
        assert_eq!(group_probabilities(&[1.0, 0.0], &[0.0, 1.0], &g, 0.5).unwrap(), vec![1.0]);
    }

    #[test]
    fn probabilities_are_linear_in_group_size() {
        let groups = vec![
            RewardGroup {
                pattern: vec![Skip],
                count: 2,
                mean_state: vec![0.6, 0.8],
                mean_action: vec![1.0, 0.0],
            },
            RewardGroup {
                pattern: vec![Click],
                count: 1,
                mean_state: vec![0.6, 0.8],
                mean_action: vec![1.0, 0.0],
            },
        ];
        let p = group_probabilities(&[1.0, 1.0], &[1.0, 0.5], &groups, 0.2).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn negative_scores_clamp_and_fall_back_to_uniform() {
        let groups = vec![
            RewardGroup {
                pattern: vec![Skip],
                count: 1,
                mean_state: vec![1.0],
                mean_action: vec![1.0],
            },
            RewardGroup {
                pattern: vec![Click],
                count: 1,
                mean_state: vec![-1.0],
                mean_action: vec![-1.0],
            },
        ];
        assert_eq!(group_probabilities(&[1.0], &[1.0], &groups, 0.5).unwrap(), vec![1.0, 0.0]);
        let mut zeros = groups.clone();
        for g in &mut zeros {
            g.mean_state = vec![-1.0];
            g.mean_action = vec![-1.0];
        }
        assert_eq!(group_probabilities(&[1.0], &[1.0], &zeros, 0.5).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn probabilities_check_dimensions() {
        let g = build_groups(&[triple(vec![1.0, 1.0], vec![1.0], vec![Skip])]).unwrap();
        assert!(group_probabilities(&[1.0], &[1.0], &g, 0.5).is_err());
        assert!(group_probabilities(&[1.0, 1.0], &[1.0, 2.0], &g, 0.5).is_err());
        assert!(group_probabilities(&[1.0, 1.0], &[1.0], &[], 0.5).is_err());
    }

    #[test]
    fn sampling_degenerate_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_pattern(&[1.0], &mut rng).unwrap(), 0);
        assert_eq!(sample_pattern(&[0.0, 1.0, 0.0], &mut rng).unwrap(), 1);
        assert!(sample_pattern(&[], &mut rng).is_err());
        assert!(sample_pattern(&[0.5, 0.4], &mut rng).is_err());
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_pattern(&[0.2, 0.3, 0.5], &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn fair_coin_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let heads = (0..10_000)
            .filter(|_| sample_pattern(&[0.5, 0.5], &mut rng).unwrap() == 0)
            .count();
        let f = heads as f64 / 10_000.0;
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }

    #[test]
    fn overall_reward_examples() {
        assert_eq!(overall_reward(&[0.0; 4], 0.3), 0.0);
        assert_eq!(overall_reward(&[1.0, 5.0], 1.0), 6.0);
        assert_eq!(overall_reward(&[5.0, 1.0], 0.5), 5.5);
    }

    fn tiny_sim(alpha: f64, gamma_pos: f64) -> Simulator {
        let table = Arc::new(identity_table(6));
        let sessions = vec![
            session(&[0, 1], &[(2, Click), (3, Order), (4, Skip), (5, Skip)]),
            session(&[1, 2], &[(4, Skip), (5, Skip), (0, Click), (3, Skip)]),
        ];
        let memory = build_memory(&sessions, 2, 2, &table).unwrap();
        let cfg = SimConfig {
            alpha,
            gamma_pos,
            ..SimConfig::default()
        };
        Simulator::new(memory, table, cfg, RewardMap::default()).unwrap()
    }

    #[test]
    fn step_follows_the_sampled_pattern() {
        let sim = tiny_sim(0.2, 1.0);
        let state = State::from_prior(&[ItemId(0), ItemId(1)], 2);
        let action = Action::new(vec![ItemId(2), ItemId(3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let out = sim.step(&state, &action, &mut rng).unwrap();
            assert_eq!(out.next_state.len(), 2);
            let positives: Vec<ItemId> = action
                .items()
                .iter()
                .zip(&out.feedback)
                .filter(|(_, f)| f.is_positive())
                .map(|(i, _)| *i)
                .collect();
            if positives.is_empty() {
                assert_eq!(out.next_state, state);
            } else {
                let tail = &out.next_state.slots()[2 - positives.len()..];
                assert_eq!(tail, &positives.iter().map(|&i| Some(i)).collect::<Vec<_>>()[..]);
            }
            assert_eq!(out.overall, out.rewards.iter().sum::<f64>());
        }
    }

    #[test]
    fn step_rejects_wrong_shapes() {
        let sim = tiny_sim(0.2, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = State::from_prior(&[ItemId(0)], 2);
        let short = Action::new(vec![ItemId(2)]).unwrap();
        assert!(sim.step(&state, &short, &mut rng).is_err());
        let long_state = State::from_prior(&[ItemId(0)], 3);
        let action = Action::new(vec![ItemId(2), ItemId(3)]).unwrap();
        assert!(sim.step(&long_state, &action, &mut rng).is_err());
        assert!(Action::new(vec![ItemId(2), ItemId(2)]).is_err());
    }

    #[test]
    fn appended_triples_refresh_on_schedule() {
        let table = Arc::new(identity_table(6));
        let sessions = vec![session(&[0, 1], &[(2, Click), (3, Order)])];
        let memory = build_memory(&sessions, 2, 2, &table).unwrap();
        let cfg = SimConfig {
            refresh_every: 2,
            append_simulated: true,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(memory, table, cfg, RewardMap::default()).unwrap();
        assert_eq!(sim.groups().len(), 1);
        let state = State::from_prior(&[ItemId(0)], 2);
        let action = Action::new(vec![ItemId(4), ItemId(5)]).unwrap();
        sim.record(&state, &action, &[Skip, Skip]);
        assert!(!sim.end_episode(0).unwrap());
        assert!(sim.end_episode(1).unwrap());
        assert_eq!(sim.groups().len(), 2);

        let mut frozen = tiny_sim(0.2, 0.9);
        let before = frozen.groups().to_vec();
        frozen.record(&state, &action, &[Skip, Skip]);
        assert!(!frozen.end_episode(999).unwrap());
        assert_eq!(frozen.groups(), &before[..]);
    }

    #[test]
    fn memory_snapshot_round_trips_and_detects_stale_tables() {
        let table = identity_table(6);
        let sessions = vec![session(&[0], &[(2, Click), (3, Order), (4, Skip), (5, Skip)])];
        let memory = build_memory(&sessions, 3, 2, &table).unwrap();
        let text = memory_to_text(&memory, &table);
        assert_eq!(memory_from_text(&text, &table).unwrap(), memory);

        let mut rows: Vec<Vec<f64>> = (0..6).map(|i| table.row(ItemId(i)).to_vec()).collect();
        rows[0][0] = 2.0;
        let other = EmbeddingTable::from_rows(rows).unwrap();
        assert!(matches!(memory_from_text(&text, &other), Err(Error::Stale(_))));
    }
}
