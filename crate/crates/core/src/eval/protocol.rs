use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ItemSpace, Transition};
use crate::config::stream_seed;
use crate::data::Session;
use crate::error::{Error, Result};
use crate::sim::{Simulator, State};

use super::metrics::{average_precision, ndcg};
use super::policy::Policy;

/// Test sessions are capped at 40 recommended items (short) or 80 (long).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthClass {
    Short,
    Long,
}

impl LengthClass {
    pub const ALL: [LengthClass; 2] = [LengthClass::Short, LengthClass::Long];

    pub fn item_budget(self) -> usize {
        match self {
            LengthClass::Short => 40,
            LengthClass::Long => 80,
        }
    }

    /// Lists per session for list length `k`.
    pub fn steps(self, k: usize) -> usize {
        (self.item_budget() / k.max(1)).max(1)
    }
}

impl fmt::Display for LengthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthClass::Short => "short",
            LengthClass::Long => "long",
        })
    }
}

impl FromStr for LengthClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(LengthClass::Short),
            "long" => Ok(LengthClass::Long),
            other => Err(Error::InvalidArgument(format!(
                "unknown length class `{other}` (expected short or long)"
            ))),
        }
    }
}

/// Aggregate test metrics for one policy. Per-list metrics are averaged
/// within each session first, then across sessions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub length_class: LengthClass,
    pub list_len: usize,
    pub steps: usize,
    pub sessions: usize,
    pub map: f64,
    pub ndcg: f64,
    /// Mean per-session sum of overall list rewards.
    pub mean_reward: f64,
    /// Sessions whose parameters differed from the snapshot at session end.
    pub sessions_updated: usize,
    /// Wall-clock seconds per recommended list. Not part of serialized
    /// reports so that they stay reproducible.
    #[serde(skip)]
    pub seconds_per_action: f64,
}

/// Rolls `policy` through every test session against the simulator. Before
/// each session the policy is reset and its parameter checksum must equal
/// the one seen at the first session. Each session draws feedback from its
/// own rng stream derived from `seed` and the session index.
pub fn run_test_protocol(
    policy: &mut dyn Policy,
    sessions: &[Session],
    sim: &Simulator,
    class: LengthClass,
    seed: u64,
) -> Result<EvalReport> {
    let k = sim.list_len();
    let steps = class.steps(k);
    let mut baseline: Option<String> = None;
    let mut space = ItemSpace::full(sim.table().len());
    let (mut map_sum, mut ndcg_sum, mut reward_sum) = (0.0, 0.0, 0.0);
    let mut updated = 0;
    let mut lists = 0usize;
    let mut elapsed = 0.0;
    for (i, session) in sessions.iter().enumerate() {
        policy.begin_session()?;
        let start = policy.checksum();
        if let Some(c) = &start {
            match &baseline {
                None => baseline = Some(c.clone()),
                Some(b) if b != c => {
                    return Err(Error::ChecksumMismatch {
                        expected: b.clone(),
                        actual: c.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, i as u64));
        let mut state = State::from_prior(&session.prior_positives, sim.state_len());
        space.reset();
        let (mut s_map, mut s_ndcg, mut s_reward) = (0.0, 0.0, 0.0);
        for _ in 0..steps {
            if space.len() < k {
                space.reset();
            }
            let t0 = Instant::now();
            let action = policy.recommend(&state, &space, k, &mut rng)?;
            elapsed += t0.elapsed().as_secs_f64();
            lists += 1;
            for &item in action.items() {
                space.remove(item);
            }
            let out = sim.step(&state, &action, &mut rng)?;
            s_map += average_precision(&out.rewards)?;
            s_ndcg += ndcg(&out.rewards)?;
            s_reward += out.overall;
            let transition = Transition {
                state,
                action,
                reward: out.overall,
                next_state: out.next_state.clone(),
                priority: 0.0,
            };
            policy.observe(transition, &out.rewards)?;
            state = out.next_state;
        }
        map_sum += s_map / steps as f64;
        ndcg_sum += s_ndcg / steps as f64;
        reward_sum += s_reward;
        if start.is_some() && policy.checksum() != start {
            updated += 1;
        }
    }
    let n = sessions.len();
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(EvalReport {
        policy: policy.name().to_string(),
        length_class: class,
        list_len: k,
        steps,
        sessions: n,
        map: mean(map_sum),
        ndcg: mean(ndcg_sum),
        mean_reward: mean(reward_sum),
        sessions_updated: updated,
        seconds_per_action: if lists == 0 { 0.0 } else { elapsed / lists as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_match_list_counts() {
        assert_eq!(LengthClass::Short.steps(4), 10);
        assert_eq!(LengthClass::Long.steps(4), 20);
        assert_eq!(LengthClass::Long.steps(1), 80);
        assert_eq!(LengthClass::Short.steps(8), 5);
        assert_eq!("long".parse::<LengthClass>().unwrap(), LengthClass::Long);
        assert!("medium".parse::<LengthClass>().is_err());
        assert_eq!(LengthClass::Short.to_string(), "short");
    }
}
