use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{train, EpisodeLog, LirdAgent};
use crate::config::{Baseline, Config};
use crate::data::{generate_synthetic, split_sessions, Session};
use crate::embed::{train_embeddings, EmbeddingTable, EmbeddingTraining};
use crate::error::{Error, Result};
use crate::sim::{build_memory, Simulator};

use super::dqn::ItemwiseDqn;
use super::policy::{LirdPolicy, Policy, PopularityPolicy, RandomPolicy};
use super::protocol::{run_test_protocol, EvalReport, LengthClass};

pub fn generate(cfg: &Config) -> Result<Vec<Session>> {
    generate_synthetic(&cfg.data, cfg.stage_seed("gen"))
}

pub fn split<'a>(cfg: &Config, sessions: &'a [Session]) -> Result<(&'a [Session], &'a [Session])> {
    split_sessions(sessions, cfg.train_fraction)
}

/// Item embeddings from the training sessions, centered if configured.
pub fn embed(cfg: &Config, train_sessions: &[Session]) -> Result<EmbeddingTraining> {
    let mut out = train_embeddings(train_sessions, cfg.data.catalog_size, &cfg.embed, cfg.stage_seed("embed"))?;
    if cfg.center_embeddings {
        out.table = out.table.centered();
    }
    Ok(out)
}

pub fn build_simulator(cfg: &Config, train_sessions: &[Session], table: Arc<EmbeddingTable>) -> Result<Simulator> {
    let memory = build_memory(train_sessions, cfg.state_len, cfg.list_len, &table)?;
    if memory.is_empty() {
        return Err(Error::Empty("simulator memory"));
    }
    Simulator::new(memory, table, cfg.sim.clone(), cfg.rewards)
}

pub fn train_lird(cfg: &Config, train_sessions: &[Session], sim: &mut Simulator) -> Result<(LirdAgent, Vec<EpisodeLog>)> {
    train(train_sessions, sim, &cfg.agent, cfg.stage_seed("train"))
}

/// The leading `eval.test_sessions` test sessions (all when 0).
pub fn test_subset<'a>(cfg: &Config, test: &'a [Session]) -> &'a [Session] {
    match cfg.eval.test_sessions {
        0 => test,
        n => &test[..n.min(test.len())],
    }
}

/// Runs the test protocol for the agent (if given) and each configured
/// baseline. Every policy sees the same sessions and feedback streams.
pub fn evaluate(
    cfg: &Config,
    agent: Option<LirdAgent>,
    train_sessions: &[Session],
    test: &[Session],
    sim: &Simulator,
    class: LengthClass,
) -> Result<Vec<EvalReport>> {
    let seed = cfg.stage_seed("eval");
    let test = test_subset(cfg, test);
    let mut reports = Vec::new();
    if let Some(agent) = agent {
        let mut p = LirdPolicy::new(agent, cfg.eval.learn_in_test, cfg.eval.test_batch, cfg.eval.test_warmup);
        reports.push(run_test_protocol(&mut p, test, sim, class, seed)?);
    }
    for b in &cfg.eval.baselines {
        let mut policy: Box<dyn Policy> = match b {
            Baseline::Random => Box::new(RandomPolicy),
            Baseline::Popularity => Box::new(PopularityPolicy::from_sessions(train_sessions, sim.table().len())),
            Baseline::Dqn => {
                let mut dqn = ItemwiseDqn::new(sim.table().clone(), cfg.state_len, cfg.dqn.clone(), cfg.stage_seed("dqn"))?;
                dqn.train(train_sessions, sim, cfg.stage_seed("dqn-env"))?;
                dqn.freeze(cfg.eval.learn_in_test);
                Box::new(dqn)
            }
        };
        reports.push(run_test_protocol(policy.as_mut(), test, sim, class, seed)?);
    }
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct Cycle {
    pub agent: LirdAgent,
    pub logs: Vec<EpisodeLog>,
    pub reports: Vec<EvalReport>,
}

/// Simulator, training and testing for one configuration.
pub fn run_cycle(cfg: &Config, train_sessions: &[Session], test: &[Session], table: Arc<EmbeddingTable>) -> Result<Cycle> {
    cfg.validate()?;
    let mut sim = build_simulator(cfg, train_sessions, table)?;
    let (agent, logs) = train_lird(cfg, train_sessions, &mut sim)?;
    let reports = evaluate(cfg, Some(agent.clone()), train_sessions, test, &sim, cfg.eval.length_class)?;
    Ok(Cycle { agent, logs, reports })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    K,
    Alpha,
    Gamma,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "k",
            SweepParam::Alpha => "alpha",
            SweepParam::Gamma => "gamma",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(SweepParam::K),
            "alpha" => Ok(SweepParam::Alpha),
            "gamma" => Ok(SweepParam::Gamma),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep parameter `{other}` (expected K, alpha or gamma)"
            ))),
        }
    }
}

impl SweepParam {
    /// A copy of `cfg` with the parameter set to `value`.
    pub fn apply(self, cfg: &Config, value: f64) -> Result<Config> {
        let mut c = cfg.clone();
        match self {
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!("K must be a positive integer, got {value}")));
                }
                c.list_len = value as usize;
            }
            SweepParam::Alpha => c.sim.alpha = value,
            SweepParam::Gamma => c.agent.gamma = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    /// `item-wise` for single-item lists, `list-wise` otherwise.
    pub mode: String,
    pub policy: String,
    pub length_class: LengthClass,
    pub list_len: usize,
    pub steps: usize,
    pub sessions: usize,
    pub map: f64,
    pub ndcg: f64,
    pub mean_reward: f64,
    pub sessions_updated: usize,
}

impl SweepRow {
    fn new(param: SweepParam, value: f64, mode: &str, r: EvalReport) -> Self {
        SweepRow {
            param,
            value,
            mode: mode.into(),
            policy: r.policy,
            length_class: r.length_class,
            list_len: r.list_len,
            steps: r.steps,
            sessions: r.sessions,
            map: r.map,
            ndcg: r.ndcg,
            mean_reward: r.mean_reward,
            sessions_updated: r.sessions_updated,
        }
    }
}

/// One full train and test cycle per value, all from the same base seed.
pub fn sweep(
    cfg: &Config,
    param: SweepParam,
    values: &[f64],
    train_sessions: &[Session],
    test: &[Session],
    table: Arc<EmbeddingTable>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    let mut rows = Vec::new();
    for &v in values {
        let c = param.apply(cfg, v)?;
        let cycle = run_cycle(&c, train_sessions, test, table.clone())?;
        let mode = if c.list_len == 1 { "item-wise" } else { "list-wise" };
        rows.extend(cycle.reports.into_iter().map(|r| SweepRow::new(param, v, mode, r)));
    }
    Ok(rows)
}

/// Writes serializable rows as a CSV table with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One JSON record per line.
pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
