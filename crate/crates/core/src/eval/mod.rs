//! Ranking metrics, baselines, the test protocol and parameter sweeps.

mod dqn;
mod experiment;
mod metrics;
mod policy;
mod protocol;

pub use dqn::{DqnConfig, ItemwiseDqn};
pub use experiment::{
    build_simulator, embed, evaluate, generate, read_csv, run_cycle, split, sweep, test_subset, train_lird,
    write_csv, write_json, write_json_lines, Cycle, SweepParam, SweepRow,
};
pub use metrics::{average_precision, chance_level, ndcg, ChanceLevel};
pub use policy::{LirdPolicy, Policy, PopularityPolicy, RandomPolicy};
pub use protocol::{run_test_protocol, EvalReport, LengthClass};
