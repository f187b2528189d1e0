//! Pipeline driver: generate sessions, train embeddings, build the simulator,
//! train and test the agent, sweep parameters and summarize the reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use lird::agent::{AgentSnapshot, Dims, LirdAgent};
use lird::config::Config;
use lird::data::{load_sessions, save_sessions, Catalog, Session};
use lird::embed::EmbeddingTable;
use lird::eval::{
    self, chance_level, read_csv, write_csv, write_json, write_json_lines, EvalReport, LengthClass, SweepParam, SweepRow,
};
use lird::sim::{build_memory, load_memory, save_memory, Simulator};

#[derive(Parser, Debug)]
#[command(name = "lird", version, about = "List-wise recommendation with an actor-critic agent")]
struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Items per recommended list.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Weight of state similarity in the simulator.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Return discount of the agent.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Sessions to generate (`gen`) or test sessions to roll out (`eval`, `sweep`).
    #[arg(long, global = true)]
    sessions: Option<usize>,
    /// Test session length: short (40 items) or long (80 items).
    #[arg(long = "length-class", global = true)]
    length_class: Option<LengthClass>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic session log and catalog.
    Gen,
    /// Train item embeddings on the training sessions.
    Embed,
    /// Build the simulator memory from the training sessions.
    BuildSim,
    /// Train the agent against the simulator.
    Train,
    /// Run the test protocol for the agent and the baselines.
    Eval,
    /// Train and test once per parameter value.
    Sweep {
        /// K, alpha or gamma.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Summarize the evaluation and sweep tables.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Embed => "embed",
            Command::BuildSim => "build-sim",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Report => "report",
        }
    }
}

struct Paths {
    out: PathBuf,
}

impl Paths {
    fn sessions(&self) -> PathBuf {
        self.out.join("sessions.txt")
    }
    fn catalog(&self) -> PathBuf {
        self.out.join("catalog.txt")
    }
    fn embeddings(&self) -> PathBuf {
        self.out.join("embeddings.txt")
    }
    fn memory(&self) -> PathBuf {
        self.out.join("memory.txt")
    }
    fn checkpoints(&self) -> PathBuf {
        self.out.join("checkpoints")
    }
    fn eval_csv(&self) -> PathBuf {
        self.out.join("eval.csv")
    }
    fn sweep_csv(&self, param: SweepParam) -> PathBuf {
        self.out.join(format!("sweep_{param}.csv"))
    }
}

fn require(path: &Path, command: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {}: run `lird {command}` first", path.display());
    }
    Ok(())
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("reading configuration {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = cli.k {
        cfg.list_len = k;
    }
    if let Some(a) = cli.alpha {
        cfg.sim.alpha = a;
    }
    if let Some(g) = cli.gamma {
        cfg.agent.gamma = g;
    }
    if let Some(n) = cli.sessions {
        match cli.command {
            Command::Gen => cfg.data.n_sessions = n,
            _ => cfg.eval.test_sessions = n,
        }
    }
    if let Some(c) = cli.length_class {
        cfg.eval.length_class = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Inputs {
    sessions: Vec<Session>,
    train_len: usize,
    table: Arc<EmbeddingTable>,
}

impl Inputs {
    fn train(&self) -> &[Session] {
        &self.sessions[..self.train_len]
    }
    fn test(&self) -> &[Session] {
        &self.sessions[self.train_len..]
    }
}

fn load_sessions_for(paths: &Paths, cfg: &Config) -> Result<(Vec<Session>, usize)> {
    require(&paths.sessions(), "gen")?;
    require(&paths.catalog(), "gen")?;
    let catalog = Catalog::load(&paths.catalog())?;
    if catalog.len() != cfg.data.catalog_size {
        bail!(
            "catalog has {} items but the configuration expects {}; rerun `lird gen`",
            catalog.len(),
            cfg.data.catalog_size
        );
    }
    let sessions = load_sessions(&paths.sessions(), catalog.len())?;
    let train_len = eval::split(cfg, &sessions)?.0.len();
    Ok((sessions, train_len))
}

fn load_inputs(paths: &Paths, cfg: &Config) -> Result<Inputs> {
    let (sessions, train_len) = load_sessions_for(paths, cfg)?;
    require(&paths.embeddings(), "embed")?;
    let table = EmbeddingTable::load(&paths.embeddings())?;
    if table.len() != cfg.data.catalog_size || table.dim() != cfg.embed.dim {
        bail!(
            "embeddings are {}x{} but the configuration expects {}x{}; rerun `lird embed`",
            table.len(),
            table.dim(),
            cfg.data.catalog_size,
            cfg.embed.dim
        );
    }
    Ok(Inputs {
        sessions,
        train_len,
        table: Arc::new(table),
    })
}

fn load_simulator(paths: &Paths, cfg: &Config, table: Arc<EmbeddingTable>) -> Result<Simulator> {
    require(&paths.memory(), "build-sim")?;
    let memory = load_memory(&paths.memory(), &table).map_err(|e| anyhow!("{e}; rerun `lird build-sim`"))?;
    let sim = Simulator::new(memory, table, cfg.sim.clone(), cfg.rewards)?;
    if sim.state_len() != cfg.state_len || sim.list_len() != cfg.list_len {
        bail!(
            "simulator memory was built with N={}, K={} but the configuration has N={}, K={}; rerun `lird build-sim`",
            sim.state_len(),
            sim.list_len(),
            cfg.state_len,
            cfg.list_len
        );
    }
    Ok(sim)
}

fn dims(cfg: &Config) -> Dims {
    Dims {
        state_len: cfg.state_len,
        list_len: cfg.list_len,
        embed_dim: cfg.embed.dim,
    }
}

fn cmd_gen(paths: &Paths, cfg: &Config) -> Result<()> {
    let sessions = eval::generate(cfg)?;
    save_sessions(&paths.sessions(), &sessions)?;
    let catalog = Catalog::new(cfg.data.catalog_size)?;
    fs::write(paths.catalog(), catalog.to_text()).with_context(|| format!("writing {}", paths.catalog().display()))?;
    println!("wrote {} sessions over {} items", sessions.len(), catalog.len());
    Ok(())
}

fn cmd_embed(paths: &Paths, cfg: &Config) -> Result<()> {
    let (sessions, train_len) = load_sessions_for(paths, cfg)?;
    let trained = eval::embed(cfg, &sessions[..train_len])?;
    trained.table.save(&paths.embeddings())?;
    write_json(&paths.out.join("embed_losses.json"), &trained.epoch_losses)?;
    println!(
        "trained {}x{} embeddings; final epoch loss {:.4}",
        trained.table.len(),
        trained.table.dim(),
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_build_sim(paths: &Paths, cfg: &Config) -> Result<()> {
    let inputs = load_inputs(paths, cfg)?;
    let memory = build_memory(inputs.train(), cfg.state_len, cfg.list_len, &inputs.table)?;
    if memory.is_empty() {
        bail!("no training session has {} events; nothing to build a simulator from", cfg.list_len);
    }
    save_memory(&paths.memory(), &memory, &inputs.table)?;
    let sim = Simulator::new(memory, inputs.table.clone(), cfg.sim.clone(), cfg.rewards)?;
    println!("simulator memory with {} reward patterns", sim.groups().len());
    Ok(())
}

fn cmd_train(paths: &Paths, cfg: &Config) -> Result<()> {
    let inputs = load_inputs(paths, cfg)?;
    let mut sim = load_simulator(paths, cfg, inputs.table.clone())?;
    let (agent, logs) = eval::train_lird(cfg, inputs.train(), &mut sim)?;
    agent.snapshot().save(&paths.checkpoints(), cfg.stage_seed("train"))?;
    write_json_lines(&paths.out.join("train_log.jsonl"), &logs)?;
    let tail = &logs[logs.len().saturating_sub(10)..];
    let recent = tail.iter().map(|l| l.cumulative_reward).sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "trained {} episodes, {} updates; mean reward over the last {} episodes {:.3}",
        logs.len(),
        agent.updates(),
        tail.len(),
        recent
    );
    Ok(())
}

#[derive(Serialize)]
struct Chance {
    map: f64,
    ndcg: f64,
    reward_per_list: f64,
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    length_class: LengthClass,
    reports: &'a [EvalReport],
    /// Expected per-list metrics under the generator's independent feedback rates.
    chance: Chance,
}

#[derive(Serialize)]
struct Timing<'a> {
    policy: &'a str,
    seconds_per_action: f64,
}

fn cmd_eval(paths: &Paths, cfg: &Config) -> Result<()> {
    require(&paths.checkpoints().join("actor.json"), "train")?;
    let inputs = load_inputs(paths, cfg)?;
    let sim = load_simulator(paths, cfg, inputs.table.clone())?;
    let (snapshot, _) = AgentSnapshot::load(&paths.checkpoints(), dims(cfg), &cfg.agent)
        .map_err(|e| anyhow!("{e}; rerun `lird train` with this configuration"))?;
    let mut agent = LirdAgent::new(dims(cfg), cfg.agent.clone(), inputs.table.clone(), cfg.stage_seed("eval-agent"))?;
    agent.restore(&snapshot)?;
    let class = cfg.eval.length_class;
    let reports = eval::evaluate(cfg, Some(agent), inputs.train(), inputs.test(), &sim, class)?;
    write_csv(&paths.eval_csv(), &reports)?;
    let chance = chance_level(cfg.data.feedback_marginals(), cfg.list_len, &cfg.rewards, cfg.sim.gamma_pos)?;
    let summary = EvalSummary {
        length_class: class,
        reports: &reports,
        chance: Chance {
            map: chance.map,
            ndcg: chance.ndcg,
            reward_per_list: chance.overall,
        },
    };
    write_json(&paths.out.join("eval.json"), &summary)?;
    let timing: Vec<Timing> = reports
        .iter()
        .map(|r| Timing {
            policy: &r.policy,
            seconds_per_action: r.seconds_per_action,
        })
        .collect();
    write_csv(&paths.out.join("timing.csv"), &timing)?;
    for r in &reports {
        println!(
            "{:<12} {} sessions ({}): MAP {:.4} NDCG {:.4} reward {:.3}",
            r.policy, r.sessions, r.length_class, r.map, r.ndcg, r.mean_reward
        );
    }
    Ok(())
}

fn cmd_sweep(paths: &Paths, cfg: &Config, param: SweepParam, values: &[f64]) -> Result<()> {
    let inputs = load_inputs(paths, cfg)?;
    let rows = eval::sweep(cfg, param, values, inputs.train(), inputs.test(), inputs.table.clone())?;
    write_csv(&paths.sweep_csv(param), &rows)?;
    for r in &rows {
        println!(
            "{param}={:<6} {:<10} {:<12} MAP {:.4} NDCG {:.4} reward {:.3}",
            r.value, r.mode, r.policy, r.map, r.ndcg, r.mean_reward
        );
    }
    Ok(())
}

fn eval_table(rows: &[EvalReport]) -> String {
    let mut s = String::from("| policy | class | K | sessions | MAP | NDCG | reward |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.3} |\n",
            r.policy, r.length_class, r.list_len, r.sessions, r.map, r.ndcg, r.mean_reward
        ));
    }
    s
}

fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("| value | mode | policy | MAP | NDCG | reward |\n|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.4} | {:.4} | {:.3} |\n",
            r.value, r.mode, r.policy, r.map, r.ndcg, r.mean_reward
        ));
    }
    s
}

/// The value at which the agent's mean reward peaks.
fn peak(rows: &[SweepRow]) -> Option<f64> {
    rows.iter()
        .filter(|r| r.policy == "lird")
        .max_by(|a, b| a.mean_reward.total_cmp(&b.mean_reward))
        .map(|r| r.value)
}

#[derive(Serialize)]
struct SweepSummary {
    param: SweepParam,
    peak: Option<f64>,
    rows: Vec<SweepRow>,
}

#[derive(Serialize)]
struct ReportSummary {
    eval: Vec<EvalReport>,
    sweeps: Vec<SweepSummary>,
}

fn cmd_report(paths: &Paths) -> Result<()> {
    let mut md = String::from("# Results\n");
    let mut summary = ReportSummary {
        eval: Vec::new(),
        sweeps: Vec::new(),
    };
    if paths.eval_csv().exists() {
        summary.eval = read_csv(&paths.eval_csv())?;
        md.push_str("\n## Test protocol\n\n");
        md.push_str(&eval_table(&summary.eval));
    }
    for param in [SweepParam::K, SweepParam::Alpha, SweepParam::Gamma] {
        let path = paths.sweep_csv(param);
        if !path.exists() {
            continue;
        }
        let rows: Vec<SweepRow> = read_csv(&path)?;
        let best = peak(&rows);
        md.push_str(&format!("\n## Sweep over {param}\n\n"));
        md.push_str(&sweep_table(&rows));
        if let Some(v) = best {
            md.push_str(&format!("\nAgent reward peaks at {param} = {v}.\n"));
        }
        summary.sweeps.push(SweepSummary { param, peak: best, rows });
    }
    if summary.eval.is_empty() && summary.sweeps.is_empty() {
        bail!("no reports in {}: run `lird eval` or `lird sweep` first", paths.out.display());
    }
    fs::write(paths.out.join("report.md"), &md).context("writing report.md")?;
    write_json(&paths.out.join("summary.json"), &summary)?;
    print!("{md}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let paths = Paths { out: cli.out.clone() };
    fs::create_dir_all(&paths.out).with_context(|| format!("creating {}", paths.out.display()))?;
    let name = cli.command.name();
    let resolved = cfg.to_toml()?;
    fs::write(paths.out.join(format!("{name}.config.toml")), &resolved).context("writing the resolved configuration")?;
    info!("resolved configuration for `{name}`:\n{resolved}");
    match &cli.command {
        Command::Gen => cmd_gen(&paths, &cfg),
        Command::Embed => cmd_embed(&paths, &cfg),
        Command::BuildSim => cmd_build_sim(&paths, &cfg),
        Command::Train => cmd_train(&paths, &cfg),
        Command::Eval => cmd_eval(&paths, &cfg),
        Command::Sweep { param, values } => cmd_sweep(&paths, &cfg, *param, values),
        Command::Report => cmd_report(&paths),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
