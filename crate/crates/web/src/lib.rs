//! WebAssembly bindings for the demo page in `www/`.

use ndarray::ArrayView2;
use wasm_bindgen::prelude::*;

use lird::agent::{recommend_list, ItemSpace};
use lird::data::{Event, FeedbackKind, ItemId, Session};
use lird::embed::EmbeddingTable;
use lird::eval::{average_precision, ndcg};
use lird::sim::{build_groups, build_memory, group_probabilities, overall_reward, Action, RewardGroup, State};

/// Items of the simulator demo, evenly spaced on the unit circle.
pub const DEMO_ITEMS: usize = 8;

fn demo_table() -> EmbeddingTable {
    let rows = (0..DEMO_ITEMS)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / DEMO_ITEMS as f64;
            vec![t.cos(), t.sin()]
        })
        .collect();
    EmbeddingTable::from_rows(rows).expect("fixed demo table")
}

/// A log where users who liked item `i` (one of the first three) order `i`,
/// click its neighbours and skip everything else. One positive in the state,
/// one item per list. Groups keep only mean directions, so a log covering the
/// whole circle would cancel out.
fn demo_groups(table: &EmbeddingTable) -> Vec<RewardGroup> {
    let mut sessions = Vec::new();
    for i in 0..3 {
        for j in 0..DEMO_ITEMS {
            let gap = (i as isize - j as isize).rem_euclid(DEMO_ITEMS as isize);
            let feedback = match gap.min(DEMO_ITEMS as isize - gap) {
                0 => FeedbackKind::Order,
                1 => FeedbackKind::Click,
                _ => FeedbackKind::Skip,
            };
            sessions.push(Session {
                session_id: sessions.len() as u64,
                prior_positives: vec![ItemId(i as u32)],
                events: vec![Event {
                    item: ItemId(j as u32),
                    feedback,
                }],
            });
        }
    }
    let memory = build_memory(&sessions, 1, 1, table).expect("fixed demo log");
    build_groups(&memory).expect("non-empty memory")
}

/// `[x0, y0, x1, y1, ...]` for the simulator demo's items.
#[wasm_bindgen]
pub fn demo_items() -> Vec<f64> {
    demo_table().as_slice().to_vec()
}

/// Probabilities of skip, click and order when `action_item` is shown to a
/// user whose last positive was `state_item`.
#[wasm_bindgen]
pub fn feedback_probabilities(state_item: u32, action_item: u32, alpha: f64) -> Result<Vec<f64>, String> {
    if state_item as usize >= DEMO_ITEMS || action_item as usize >= DEMO_ITEMS {
        return Err(format!("items are numbered 0 to {}", DEMO_ITEMS - 1));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    let table = demo_table();
    let groups = demo_groups(&table);
    let state = State::from_prior(&[ItemId(state_item)], 1).vector(&table);
    let action = Action::new(vec![ItemId(action_item)]).map_err(|e| e.to_string())?.vector(&table);
    let probs = group_probabilities(&state, &action, &groups, alpha).map_err(|e| e.to_string())?;
    let mut out = vec![0.0; 3];
    for (g, p) in groups.iter().zip(probs) {
        let slot = FeedbackKind::ALL.iter().position(|k| *k == g.pattern[0]).expect("known feedback");
        out[slot] = p;
    }
    Ok(out)
}

/// Greedy list over 2-D items: slot `k` takes the best remaining item under
/// the `k`-th weight vector. `items` and `weights` are flat `[x, y, ...]`.
#[wasm_bindgen]
pub fn greedy_list(items: Vec<f64>, weights: Vec<f64>) -> Result<Vec<u32>, String> {
    if items.len() % 2 != 0 || weights.len() % 2 != 0 {
        return Err("coordinates must come in (x, y) pairs".into());
    }
    let table = EmbeddingTable::from_rows(items.chunks(2).map(|c| c.to_vec()).collect()).map_err(|e| e.to_string())?;
    let w = ArrayView2::from_shape((weights.len() / 2, 2), &weights).map_err(|e| e.to_string())?;
    let list = recommend_list(w, &table, &ItemSpace::full(table.len())).map_err(|e| e.to_string())?;
    Ok(list.items().iter().map(|i| i.0).collect())
}

/// `[ndcg, average precision, discounted list reward]` for per-slot rewards.
#[wasm_bindgen]
pub fn list_metrics(rewards: Vec<f64>, gamma_pos: f64) -> Result<Vec<f64>, String> {
    let n = ndcg(&rewards).map_err(|e| e.to_string())?;
    let ap = average_precision(&rewards).map_err(|e| e.to_string())?;
    Ok(vec![n, ap, overall_reward(&rewards, gamma_pos)])
}
