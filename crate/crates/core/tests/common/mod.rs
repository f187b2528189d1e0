//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lird::agent::ItemSpace;
use lird::data::{Event, FeedbackKind, ItemId, Session};
use lird::embed::EmbeddingTable;
use lird::net::{Activation, NetParams};
use lird::sim::{build_memory, MemoryTriple};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_table(rows: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingTable {
    let data = (0..rows)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    EmbeddingTable::from_rows(data).unwrap()
}

pub fn random_sessions(count: usize, catalog: usize, max_events: usize, rng: &mut impl Rng) -> Vec<Session> {
    (0..count)
        .map(|i| {
            let prior = (0..rng.random_range(0..4))
                .map(|_| ItemId(rng.random_range(0..catalog as u32)))
                .collect();
            let events = (0..rng.random_range(1..=max_events))
                .map(|_| Event {
                    item: ItemId(rng.random_range(0..catalog as u32)),
                    feedback: FeedbackKind::ALL[rng.random_range(0..3)],
                })
                .collect();
            Session {
                session_id: i as u64,
                prior_positives: prior,
                events,
            }
        })
        .collect()
}

/// A random memory with at most 200 triples, K <= 3, d <= 8.
pub struct RandomMemory {
    pub memory: Vec<MemoryTriple>,
    pub table: EmbeddingTable,
    pub n: usize,
    pub k: usize,
}

pub fn random_memory(rng: &mut impl Rng) -> RandomMemory {
    let catalog = rng.random_range(5..30);
    let d = rng.random_range(1..=8);
    let n = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let table = random_table(catalog, d, rng);
    loop {
        let sessions = random_sessions(rng.random_range(1..20), catalog, 30, rng);
        let mut memory = build_memory(&sessions, n, k, &table).unwrap();
        memory.truncate(200);
        if !memory.is_empty() {
            return RandomMemory { memory, table, n, k };
        }
    }
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Per-triple similarity summed over each reward pattern, then clamped and
/// normalized. Patterns come out in sorted order.
pub fn brute_force_probabilities(state: &[f64], action: &[f64], memory: &[MemoryTriple], alpha: f64) -> Vec<f64> {
    let mut sums: BTreeMap<Vec<FeedbackKind>, f64> = BTreeMap::new();
    for m in memory {
        let sim = alpha * cosine_or_zero(state, &m.state.vec) + (1.0 - alpha) * cosine_or_zero(action, &m.action.vec);
        *sums.entry(m.feedback.clone()).or_insert(0.0) += sim;
    }
    let scores: Vec<f64> = sums.values().map(|s| s.max(0.0)).collect();
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

/// Slot by slot: every item is scored from scratch, and the first strict
/// maximum in id order wins.
pub fn exhaustive_greedy(weights: &Array2<f64>, table: &EmbeddingTable, space: &ItemSpace) -> Vec<ItemId> {
    let mut chosen = Vec::new();
    for slot in weights.rows() {
        let mut best: Option<(ItemId, f64)> = None;
        for i in 0..table.len() {
            let item = ItemId(i as u32);
            if !space.contains(item) || chosen.contains(&item) {
                continue;
            }
            let mut score = 0.0;
            for (w, e) in slot.iter().zip(table.row(item)) {
                score += w * e;
            }
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((item, score)),
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn random_net(sizes: &[usize], output: Activation, rng: &mut impl Rng) -> NetParams {
    NetParams::new(sizes, Activation::Tanh, output, rng).unwrap()
}

pub fn random_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub const FD_STEP: f64 = 1e-5;

/// Parameter gradient of `u . f(x)` for a tanh network, against finite differences.
pub fn actor_net_error(rng: &mut impl Rng) -> f64 {
    let (i, h, o) = (rng.random_range(2..7), rng.random_range(2..7), rng.random_range(2..7));
    let net = random_net(&[i, h, o], Activation::Tanh, rng);
    net_error(net, rng)
}

/// Same for a critic-shaped network: tanh hidden layers, one linear output.
pub fn critic_net_error(rng: &mut impl Rng) -> f64 {
    let (i, h1, h2) = (rng.random_range(2..9), rng.random_range(2..7), rng.random_range(2..7));
    let net = random_net(&[i, h1, h2, 1], Activation::Identity, rng);
    net_error(net, rng)
}

fn net_error(net: NetParams, rng: &mut impl Rng) -> f64 {
    let x = random_vec(net.input_dim(), rng);
    let u = random_vec(net.output_dim(), rng);
    let (grads, _) = net.backward(&x, &u).unwrap();
    let mut probe = net.clone();
    let numeric = numeric_gradient(&net.flatten(), FD_STEP, |theta| {
        probe.set_flat(theta).unwrap();
        probe.forward(&x).unwrap().iter().zip(&u).map(|(y, w)| y * w).sum()
    });
    relative_error(&grads.flatten(), &numeric)
}

pub fn skipgram_error(rng: &mut impl Rng) -> f64 {
    use lird::embed::{Example, SkipGram};
    let (rows, dim) = (rng.random_range(3..8), rng.random_range(1..5));
    let input = random_table(rows, dim, rng);
    let output = random_table(rows, dim, rng);
    let pick = |rng: &mut dyn rand::RngCore| ItemId(rng.random_range(0..rows as u32));
    let examples: Vec<Example> = (0..rng.random_range(1..5))
        .map(|_| Example {
            center: pick(rng),
            context: pick(rng),
            negatives: (0..rng.random_range(1..4)).map(|_| pick(rng)).collect(),
        })
        .collect();
    let model = SkipGram::new(input.clone(), output.clone()).unwrap();
    let (g_in, g_out) = model.gradient(&examples);
    let analytic: Vec<f64> = g_in.as_slice().iter().chain(g_out.as_slice()).copied().collect();
    let theta: Vec<f64> = input.as_slice().iter().chain(output.as_slice()).copied().collect();
    let split = rows * dim;
    let to_table = |v: &[f64]| EmbeddingTable::from_rows(v.chunks(dim).map(|c| c.to_vec()).collect()).unwrap();
    let numeric = numeric_gradient(&theta, FD_STEP, |t| {
        SkipGram::new(to_table(&t[..split]), to_table(&t[split..]))
            .unwrap()
            .loss(&examples)
    });
    relative_error(&analytic, &numeric)
}

/// Actor parameters through the critic: gradient of `-mean Q(s, f(s))`.
pub fn composed_error(rng: &mut impl Rng) -> f64 {
    use lird::agent::{actor_gradient, policy_objective, Dims};
    let dims = Dims {
        state_len: rng.random_range(1..4),
        list_len: rng.random_range(1..4),
        embed_dim: rng.random_range(1..4),
    };
    let actor = random_net(&[dims.state_dim(), rng.random_range(2..6), dims.action_dim()], Activation::Tanh, rng);
    let critic = random_net(
        &[dims.state_dim() + dims.action_dim(), rng.random_range(2..6), 1],
        Activation::Identity,
        rng,
    );
    let batch = rng.random_range(1..5);
    let states = Array2::from_shape_vec((batch, dims.state_dim()), random_vec(batch * dims.state_dim(), rng)).unwrap();
    let analytic = actor_gradient(&actor, &critic, states.view(), dims).unwrap().flatten();
    let mut probe = actor.clone();
    let numeric = numeric_gradient(&actor.flatten(), FD_STEP, |theta| {
        probe.set_flat(theta).unwrap();
        -policy_objective(&probe, &critic, states.view(), dims).unwrap()
    });
    relative_error(&analytic, &numeric)
}
