//! Session logs: the on-disk line format, the temporal train/test split and a
//! synthetic cluster-preference generator.
//!
//! A session log holds one record per line:
//!
//! ```text
//! 17<TAB>prior:3,9,12<TAB>events:4:skip,9:click,21:order
//! ```
//!
//! Records appear in temporal order and that order is preserved everywhere.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a contiguous item catalog.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Skip,
    Click,
    Order,
}

impl FeedbackKind {
    pub const ALL: [FeedbackKind; 3] = [FeedbackKind::Skip, FeedbackKind::Click, FeedbackKind::Order];

    pub fn token(self) -> &'static str {
        match self {
            FeedbackKind::Skip => "skip",
            FeedbackKind::Click => "click",
            FeedbackKind::Order => "order",
        }
    }

    pub fn is_positive(self) -> bool {
        self != FeedbackKind::Skip
    }
}

impl FromStr for FeedbackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skip" => Ok(FeedbackKind::Skip),
            "click" => Ok(FeedbackKind::Click),
            "order" => Ok(FeedbackKind::Order),
            other => Err(other.to_string()),
        }
    }
}

/// Reward value assigned to each feedback kind.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardMap {
    pub skip: f64,
    pub click: f64,
    pub order: f64,
}

impl Default for RewardMap {
    fn default() -> Self {
        RewardMap {
            skip: 0.0,
            click: 1.0,
            order: 5.0,
        }
    }
}

impl RewardMap {
    pub fn validate(&self) -> Result<()> {
        let ok = self.skip == 0.0 && self.click > self.skip && self.order > self.click && self.order.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "rewards must satisfy 0 = skip < click < order, got {}/{}/{}",
                self.skip, self.click, self.order
            )))
        }
    }

    pub fn reward(&self, kind: FeedbackKind) -> f64 {
        match kind {
            FeedbackKind::Skip => self.skip,
            FeedbackKind::Click => self.click,
            FeedbackKind::Order => self.order,
        }
    }

    pub fn rewards(&self, kinds: &[FeedbackKind]) -> Vec<f64> {
        kinds.iter().map(|&k| self.reward(k)).collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub item: ItemId,
    pub feedback: FeedbackKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: u64,
    /// Positively engaged items from earlier sessions, oldest first.
    pub prior_positives: Vec<ItemId>,
    pub events: Vec<Event>,
}

impl Session {
    /// Items clicked or ordered during the session, in order.
    pub fn positives(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.events.iter().filter(|e| e.feedback.is_positive()).map(|e| e.item)
    }

    pub fn to_line(&self) -> String {
        let prior = self
            .prior_positives
            .iter()
            .map(ItemId::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let events = self
            .events
            .iter()
            .map(|e| format!("{}:{}", e.item, e.feedback.token()))
            .collect::<Vec<_>>()
            .join(",");
        format!("{}\tprior:{}\tevents:{}", self.session_id, prior, events)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    labels: Vec<Option<String>>,
}

impl Catalog {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Empty("catalog"));
        }
        Ok(Catalog {
            labels: vec![None; size],
        })
    }

    pub fn with_labels(labels: Vec<Option<String>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("catalog"));
        }
        Ok(Catalog { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, item: ItemId) -> Option<&str> {
        self.labels.get(item.index()).and_then(|l| l.as_deref())
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> {
        (0..self.labels.len() as u32).map(ItemId)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        item.index() < self.labels.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, label) in self.labels.iter().enumerate() {
            match label {
                Some(l) => out.push_str(&format!("{i}\t{l}\n")),
                None => out.push_str(&format!("{i}\n")),
            }
        }
        out
    }

    /// Parses a catalog file: one item id per line, ids `0..n` in order, each
    /// optionally followed by a tab and a label.
    pub fn parse(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (id, label) = match raw.split_once('\t') {
                Some((id, label)) => (id, Some(label.to_string())),
                None => (raw, None),
            };
            let id: usize = id.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid item id `{id}`"),
            })?;
            if id != labels.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected item id {}, found {id}", labels.len()),
                });
            }
            labels.push(label);
        }
        Catalog::with_labels(labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Catalog::parse(&text)
    }
}

fn parse_item(token: &str, line: usize, catalog_size: usize) -> Result<ItemId> {
    let id: u64 = token.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid item id `{token}`"),
    })?;
    if id >= catalog_size as u64 {
        return Err(Error::ItemOutOfRange {
            line,
            item: id,
            catalog_size,
        });
    }
    Ok(ItemId(id as u32))
}

fn parse_line(raw: &str, line: usize, catalog_size: usize) -> Result<Session> {
    let mut fields = raw.split('\t');
    let (Some(id), Some(prior), Some(events), None) = (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(Error::Parse {
            line,
            message: "expected three tab-separated fields".into(),
        });
    };
    let session_id = id.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid session id `{id}`"),
    })?;
    let prior = prior.strip_prefix("prior:").ok_or_else(|| Error::Parse {
        line,
        message: "second field must start with `prior:`".into(),
    })?;
    let events = events.strip_prefix("events:").ok_or_else(|| Error::Parse {
        line,
        message: "third field must start with `events:`".into(),
    })?;

    let prior_positives = prior
        .split(',')
        .filter(|t| !t.is_empty())
        .map(|t| parse_item(t, line, catalog_size))
        .collect::<Result<Vec<_>>>()?;
    let events = events
        .split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (item, token) = t.split_once(':').ok_or_else(|| Error::Parse {
                line,
                message: format!("event `{t}` is not `item:feedback`"),
            })?;
            let item = parse_item(item, line, catalog_size)?;
            let feedback = token.parse().map_err(|token| Error::UnknownFeedback { line, token })?;
            Ok(Event { item, feedback })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Session {
        session_id,
        prior_positives,
        events,
    })
}

/// Parses a session log held in memory. Blank lines are ignored.
pub fn parse_sessions(text: &str, catalog_size: usize) -> Result<Vec<Session>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1, catalog_size))
        .collect()
}

pub fn load_sessions(path: &Path, catalog_size: usize) -> Result<Vec<Session>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sessions(&text, catalog_size)
}

pub fn format_sessions(sessions: &[Session]) -> String {
    let mut out = String::new();
    for s in sessions {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    out
}

pub fn save_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    fs::write(path, format_sessions(sessions)).map_err(|e| Error::io(path, e))
}

/// Splits by temporal prefix: the first `floor(fraction * total)` sessions train.
pub fn split_sessions(sessions: &[Session], train_fraction: f64) -> Result<(&[Session], &[Session])> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    // guards against 0.29 * 100 = 28.999999999999996
    let cut = (train_fraction * sessions.len() as f64 + 1e-9).floor() as usize;
    Ok(sessions.split_at(cut.min(sessions.len())))
}

/// Parameters of the synthetic cluster-preference log generator.
///
/// Items are partitioned into contiguous cluster blocks. Every user belongs to
/// one cluster (cluster `c` is drawn with weight `1 / (c + 1)`), seeds the
/// session with prior positives from that cluster, and is shown items by a
/// logging policy that picks from the user's cluster with probability
/// `in_cluster_share` and uniformly from the catalog otherwise. Feedback
/// probabilities are scaled by a per-item appeal that falls linearly from
/// 1.5 to 0.5 across each cluster block (mean exactly 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub catalog_size: usize,
    pub n_sessions: usize,
    pub n_clusters: usize,
    pub prior_len: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub in_cluster_share: f64,
    pub click_in: f64,
    pub order_in: f64,
    pub click_out: f64,
    pub order_out: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            catalog_size: 500,
            n_sessions: 2000,
            n_clusters: 5,
            prior_len: 10,
            min_events: 8,
            max_events: 40,
            in_cluster_share: 0.5,
            click_in: 0.25,
            order_in: 0.08,
            click_out: 0.04,
            order_out: 0.01,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(Error::InvalidArgument("zero sessions requested".into()));
        }
        if self.n_clusters == 0 || self.catalog_size < self.n_clusters {
            return Err(Error::InvalidArgument(format!(
                "need catalog_size >= n_clusters >= 1, got {} and {}",
                self.catalog_size, self.n_clusters
            )));
        }
        if self.min_events > self.max_events {
            return Err(Error::InvalidArgument("min_events exceeds max_events".into()));
        }
        let probs = [self.in_cluster_share, self.click_in, self.order_in, self.click_out, self.order_out];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        // appeal peaks at 1.5
        if 1.5 * (self.click_in + self.order_in) > 1.0 || 1.5 * (self.click_out + self.order_out) > 1.0 {
            return Err(Error::InvalidArgument("positive-feedback rates too large for appeal 1.5".into()));
        }
        Ok(())
    }

    pub fn item_cluster(&self, item: ItemId) -> usize {
        item.index() * self.n_clusters / self.catalog_size
    }

    /// Half-open item range of a cluster block.
    pub fn cluster_range(&self, cluster: usize) -> std::ops::Range<usize> {
        let start = (cluster * self.catalog_size).div_ceil(self.n_clusters);
        let end = ((cluster + 1) * self.catalog_size).div_ceil(self.n_clusters);
        start..end
    }

    pub fn appeal(&self, item: ItemId) -> f64 {
        let range = self.cluster_range(self.item_cluster(item));
        let n = range.len();
        if n <= 1 {
            return 1.0;
        }
        let j = (item.index() - range.start) as f64;
        1.5 - j / (n - 1) as f64
    }

    pub fn cluster_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_clusters).map(|c| 1.0 / (c + 1) as f64).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// Probability that a logged event shows an item from the user's cluster.
    pub fn in_cluster_rate(&self, cluster: usize) -> f64 {
        let share = self.cluster_range(cluster).len() as f64 / self.catalog_size as f64;
        self.in_cluster_share + (1.0 - self.in_cluster_share) * share
    }

    /// Marginal probabilities of (skip, click, order) for one logged event,
    /// computed from the parameters alone.
    pub fn feedback_marginals(&self) -> [f64; 3] {
        let mut click = 0.0;
        let mut order = 0.0;
        for (c, w) in self.cluster_weights().into_iter().enumerate() {
            let q = self.in_cluster_rate(c);
            // mean appeal is 1 over any cluster block, and over the rest of the
            // catalog because every block has mean 1
            click += w * (q * self.click_in + (1.0 - q) * self.click_out);
            order += w * (q * self.order_in + (1.0 - q) * self.order_out);
        }
        [1.0 - click - order, click, order]
    }
}

/// Generated sessions together with each session's latent user cluster.
#[derive(Clone, Debug)]
pub struct SyntheticLog {
    pub sessions: Vec<Session>,
    pub user_clusters: Vec<usize>,
}

pub fn generate_synthetic_labeled(config: &SyntheticConfig, seed: u64) -> Result<SyntheticLog> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster_pick = WeightedIndex::new(config.cluster_weights()).expect("positive weights");
    let appeal_pick: Vec<WeightedIndex<f64>> = (0..config.n_clusters)
        .map(|c| {
            let weights = config.cluster_range(c).map(|i| config.appeal(ItemId(i as u32)));
            WeightedIndex::new(weights).expect("non-empty cluster")
        })
        .collect();

    let mut sessions = Vec::with_capacity(config.n_sessions);
    let mut user_clusters = Vec::with_capacity(config.n_sessions);
    for session_id in 0..config.n_sessions {
        let cluster = if config.n_clusters == 1 { 0 } else { cluster_pick.sample(&mut rng) };
        let range = config.cluster_range(cluster);

        let prior_positives = (0..config.prior_len)
            .map(|_| ItemId((range.start + appeal_pick[cluster].sample(&mut rng)) as u32))
            .collect();

        let n_events = rng.random_range(config.min_events..=config.max_events);
        let events = (0..n_events)
            .map(|_| {
                let item = if rng.random::<f64>() < config.in_cluster_share {
                    ItemId(rng.random_range(range.clone()) as u32)
                } else {
                    ItemId(rng.random_range(0..config.catalog_size) as u32)
                };
                let (click, order) = if config.item_cluster(item) == cluster {
                    (config.click_in, config.order_in)
                } else {
                    (config.click_out, config.order_out)
                };
                let appeal = config.appeal(item);
                let u: f64 = rng.random();
                let feedback = if u < order * appeal {
                    FeedbackKind::Order
                } else if u < (order + click) * appeal {
                    FeedbackKind::Click
                } else {
                    FeedbackKind::Skip
                };
                Event { item, feedback }
            })
            .collect();

        sessions.push(Session {
            session_id: session_id as u64,
            prior_positives,
            events,
        });
        user_clusters.push(cluster);
    }
    Ok(SyntheticLog {
        sessions,
        user_clusters,
    })
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Vec<Session>> {
    generate_synthetic_labeled(config, seed).map(|log| log.sessions)
}
