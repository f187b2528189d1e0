use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ItemId;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::net::{Activation, NetParams};
use crate::sim::Action;

use super::Dims;

/// Items still eligible for recommendation in the current session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemSpace {
    available: Vec<bool>,
    count: usize,
}

impl ItemSpace {
    pub fn full(catalog_size: usize) -> Self {
        ItemSpace {
            available: vec![true; catalog_size],
            count: catalog_size,
        }
    }

    pub fn reset(&mut self) {
        self.available.fill(true);
        self.count = self.available.len();
    }

    pub fn remove(&mut self, item: ItemId) {
        if let Some(slot) = self.available.get_mut(item.index()) {
            if *slot {
                *slot = false;
                self.count -= 1;
            }
        }
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.available.get(item.index()).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn catalog_size(&self) -> usize {
        self.available.len()
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.available
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| ItemId(i as u32))
    }
}

/// Maps a state vector to `K` scoring weight vectors, one per list slot.
#[derive(Clone, Debug)]
pub struct Actor {
    pub params: NetParams,
    pub target: NetParams,
    dims: Dims,
}

impl Actor {
    /// Network `[N*d, hidden.., K*d]`, tanh throughout; the target starts as a copy.
    pub fn new(dims: Dims, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![dims.state_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(dims.action_dim());
        let params = NetParams::new(&sizes, Activation::Tanh, Activation::Tanh, rng)?;
        Ok(Actor {
            target: params.clone(),
            params,
            dims,
        })
    }

    pub fn from_params(params: NetParams, target: NetParams, dims: Dims) -> Result<Self> {
        for p in [&params, &target] {
            if p.input_dim() != dims.state_dim() || p.output_dim() != dims.action_dim() {
                return Err(Error::DimensionMismatch {
                    expected: dims.action_dim(),
                    actual: p.output_dim(),
                });
            }
        }
        Ok(Actor { params, target, dims })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// `K x d` weight matrix for one state.
    pub fn generate_weights(&self, state_vec: &[f64]) -> Result<Array2<f64>> {
        weights_from(&self.params, state_vec, self.dims)
    }

    pub fn target_weights(&self, state_vec: &[f64]) -> Result<Array2<f64>> {
        weights_from(&self.target, state_vec, self.dims)
    }
}

fn weights_from(params: &NetParams, state_vec: &[f64], dims: Dims) -> Result<Array2<f64>> {
    let out = params.forward(state_vec)?;
    Ok(Array2::from_shape_vec((dims.list_len, dims.embed_dim), out).expect("actor output is K*d"))
}

/// `score_i = w . e_i` for every candidate.
pub fn score_items(weights: &[f64], table: &EmbeddingTable, candidates: &[ItemId]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if weights.len() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: weights.len(),
        });
    }
    candidates
        .iter()
        .map(|&c| Ok(weights.iter().zip(table.lookup(c)?).map(|(w, e)| w * e).sum()))
        .collect()
}

pub(crate) fn table_view(table: &EmbeddingTable) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((table.len(), table.dim()), table.as_slice()).expect("row-major table")
}

/// Greedy list construction: slot `k` takes the highest-scoring item under
/// `weights[k]` among items still in `space` and not already chosen. Ties go
/// to the lowest item id.
pub fn recommend_list(weights: ArrayView2<'_, f64>, table: &EmbeddingTable, space: &ItemSpace) -> Result<Action> {
    let k = weights.nrows();
    if weights.ncols() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: weights.ncols(),
        });
    }
    if space.catalog_size() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            actual: space.catalog_size(),
        });
    }
    if space.len() < k {
        return Err(Error::InvalidArgument(format!(
            "only {} items available for a list of {k}",
            space.len()
        )));
    }
    // |I| x K score matrix
    let scores = table_view(table).dot(&weights.t());
    greedy_from_scores(scores.view(), space).map(|items| Action::new(items).expect("distinct by construction"))
}

/// Column `k` of `scores` ranks items for slot `k`.
pub(crate) fn greedy_from_scores(scores: ArrayView2<'_, f64>, space: &ItemSpace) -> Result<Vec<ItemId>> {
    let mut chosen: Vec<ItemId> = Vec::with_capacity(scores.ncols());
    for col in scores.columns() {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in col.iter().enumerate() {
            if !space.available[i] || chosen.contains(&ItemId(i as u32)) {
                continue;
            }
            if s.is_nan() {
                return Err(Error::NonFinite("item scores"));
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, _) = best.ok_or(Error::Empty("candidate set"))?;
        chosen.push(ItemId(i as u32));
    }
    Ok(chosen)
}

/// Adds independent `N(0, std^2)` noise to every weight.
pub fn perturb(weights: &mut Array2<f64>, std: f64, rng: &mut impl Rng) {
    if std <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("positive std");
    weights.mapv_inplace(|w| w + normal.sample(rng));
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(rows: Vec<Vec<f64>>) -> EmbeddingTable {
        EmbeddingTable::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_actor_emits_zero_weights() {
        let dims = Dims {
            state_len: 3,
            list_len: 2,
            embed_dim: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut actor = Actor::new(dims, &[5], &mut rng).unwrap();
        let zeros = vec![0.0; actor.params.num_params()];
        actor.params.set_flat(&zeros).unwrap();
        let w = actor.generate_weights(&[0.3; 12]).unwrap();
        assert_eq!(w.dim(), (2, 4));
        assert!(w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weights_are_pure() {
        let dims = Dims {
            state_len: 10,
            list_len: 4,
            embed_dim: 50,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Actor::new(dims, &[16], &mut rng).unwrap();
        let s: Vec<f64> = (0..500).map(|i| (i as f64 * 0.01).sin()).collect();
        let w = actor.generate_weights(&s).unwrap();
        assert_eq!(w.dim(), (4, 50));
        assert_eq!(actor.generate_weights(&s).unwrap(), w);
        assert!(actor.generate_weights(&s[..499]).is_err());
    }

    #[test]
    fn matching_weight_selects_its_item() {
        let t = table(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let s = score_items(&[0.0, 1.0, 0.0], &t, &[ItemId(0), ItemId(1), ItemId(2)]).unwrap();
        assert_eq!(s, vec![0.0, 1.0, 0.0]);
        assert!(score_items(&[1.0, 0.0, 0.0], &t, &[]).is_err());
        assert!(score_items(&[1.0, 0.0], &t, &[ItemId(0)]).is_err());
    }

    #[test]
    fn zero_weights_pick_lowest_ids() {
        let t = table(vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 3.0], vec![0.0, 1.0]]);
        let a = recommend_list(Array2::zeros((2, 2)).view(), &t, &ItemSpace::full(4)).unwrap();
        assert_eq!(a.items(), &[ItemId(0), ItemId(1)]);
    }

    #[test]
    fn positive_scaling_keeps_the_choice() {
        let t = table(vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, -3.0], vec![0.0, 1.0]]);
        let w = array![[0.3, 0.8], [-0.5, 0.1]];
        let base = recommend_list(w.view(), &t, &ItemSpace::full(4)).unwrap();
        for c in [0.01, 2.0, 1e3] {
            let scaled = &w * c;
            assert_eq!(recommend_list(scaled.view(), &t, &ItemSpace::full(4)).unwrap(), base);
        }
    }

    #[test]
    fn full_catalog_list_is_a_permutation() {
        let t = table(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let w = array![[1.0], [1.0], [1.0]];
        let a = recommend_list(w.view(), &t, &ItemSpace::full(3)).unwrap();
        assert_eq!(a.items(), &[ItemId(2), ItemId(1), ItemId(0)]);
        let too_long = array![[1.0], [1.0], [1.0], [1.0]];
        assert!(recommend_list(too_long.view(), &t, &ItemSpace::full(3)).is_err());
    }

    #[test]
    fn hand_set_weights_follow_the_greedy_sequence() {
        // six items in the plane
        let t = table(vec![
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.5, 0.5],
            vec![0.1, 0.95],
        ]);
        let w = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let a = recommend_list(w.view(), &t, &ItemSpace::full(6)).unwrap();
        // slot 1: item 0 (1.0); slot 2: item 1 (0.9); slot 3: item 2 (1.0); slot 4: item 5 (0.95)
        assert_eq!(a.items(), &[ItemId(0), ItemId(1), ItemId(2), ItemId(5)]);

        let mut space = ItemSpace::full(6);
        space.remove(ItemId(0));
        space.remove(ItemId(2));
        let b = recommend_list(w.view(), &t, &space).unwrap();
        // item 3 is the only one left for the last slot
        assert_eq!(b.items(), &[ItemId(1), ItemId(4), ItemId(5), ItemId(3)]);
    }

    #[test]
    fn item_space_bookkeeping() {
        let mut s = ItemSpace::full(4);
        s.remove(ItemId(1));
        s.remove(ItemId(1));
        s.remove(ItemId(9));
        assert_eq!(s.len(), 3);
        assert!(!s.contains(ItemId(1)));
        assert_eq!(s.items().collect::<Vec<_>>(), vec![ItemId(0), ItemId(2), ItemId(3)]);
        s.reset();
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn noise_is_seeded() {
        let mut a = Array2::zeros((2, 3));
        let mut b = Array2::zeros((2, 3));
        perturb(&mut a, 0.2, &mut ChaCha8Rng::seed_from_u64(3));
        perturb(&mut b, 0.2, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.iter().any(|v| *v != 0.0));
        let mut c = Array2::<f64>::zeros((2, 3));
        perturb(&mut c, 0.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(c.iter().all(|v| *v == 0.0));
    }
}
