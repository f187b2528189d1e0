use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{Activation, NetParams};

use super::Dims;

/// `Q(s, a)` over the concatenated state and action vectors.
#[derive(Clone, Debug)]
pub struct Critic {
    pub params: NetParams,
    pub target: NetParams,
    dims: Dims,
}

impl Critic {
    /// Network `[N*d + K*d, hidden.., 1]` with tanh hidden units and a linear output.
    pub fn new(dims: Dims, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![dims.state_dim() + dims.action_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let params = NetParams::new(&sizes, Activation::Tanh, Activation::Identity, rng)?;
        Ok(Critic {
            target: params.clone(),
            params,
            dims,
        })
    }

    pub fn from_params(params: NetParams, target: NetParams, dims: Dims) -> Result<Self> {
        for p in [&params, &target] {
            if p.input_dim() != dims.state_dim() + dims.action_dim() || p.output_dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: dims.state_dim() + dims.action_dim(),
                    actual: p.input_dim(),
                });
            }
        }
        Ok(Critic { params, target, dims })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn q_value(&self, state_vec: &[f64], action_vec: &[f64]) -> Result<f64> {
        q_of(&self.params, state_vec, action_vec, self.dims)
    }

    pub fn target_q_value(&self, state_vec: &[f64], action_vec: &[f64]) -> Result<f64> {
        q_of(&self.target, state_vec, action_vec, self.dims)
    }

    /// One Q value per row pair.
    pub fn q_batch(&self, params: &NetParams, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let input = join(states, actions, self.dims)?;
        Ok(params.forward_batch(input.view())?.column(0).to_vec())
    }
}

fn q_of(params: &NetParams, state_vec: &[f64], action_vec: &[f64], dims: Dims) -> Result<f64> {
    if state_vec.len() != dims.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: dims.state_dim(),
            actual: state_vec.len(),
        });
    }
    if action_vec.len() != dims.action_dim() {
        return Err(Error::DimensionMismatch {
            expected: dims.action_dim(),
            actual: action_vec.len(),
        });
    }
    let mut input = Vec::with_capacity(state_vec.len() + action_vec.len());
    input.extend_from_slice(state_vec);
    input.extend_from_slice(action_vec);
    Ok(params.forward(&input)?[0])
}

/// Row-wise `[state | action]`.
pub(crate) fn join(states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>, dims: Dims) -> Result<Array2<f64>> {
    if states.ncols() != dims.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: dims.state_dim(),
            actual: states.ncols(),
        });
    }
    if actions.ncols() != dims.action_dim() {
        return Err(Error::DimensionMismatch {
            expected: dims.action_dim(),
            actual: actions.ncols(),
        });
    }
    if states.nrows() != actions.nrows() {
        return Err(Error::DimensionMismatch {
            expected: states.nrows(),
            actual: actions.nrows(),
        });
    }
    Ok(concatenate(Axis(1), &[states, actions]).expect("row counts checked"))
}

/// The action block of a critic input gradient.
pub(crate) fn action_block(input_grad: &Array2<f64>, dims: Dims) -> Array2<f64> {
    input_grad.slice(s![.., dims.state_dim()..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dims {
        Dims {
            state_len: 2,
            list_len: 2,
            embed_dim: 2,
        }
    }

    #[test]
    fn zero_critic_returns_zero() {
        let mut c = Critic::new(dims(), &[3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let zeros = vec![0.0; c.params.num_params()];
        c.params.set_flat(&zeros).unwrap();
        assert_eq!(c.q_value(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.1, -0.2, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn matches_hand_rolled_forward() {
        let c = Critic::new(dims(), &[3], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = [0.1, -0.3, 0.5, 0.2];
        let a = [0.7, -0.1, 0.0, 0.4];
        let x: Vec<f64> = s.iter().chain(&a).copied().collect();
        let l0 = &c.params.layers()[0];
        let l1 = &c.params.layers()[1];
        let hidden: Vec<f64> = (0..3)
            .map(|j| ((0..8).map(|i| l0.weights[[j, i]] * x[i]).sum::<f64>() + l0.bias[j]).tanh())
            .collect();
        let q = (0..3).map(|j| l1.weights[[0, j]] * hidden[j]).sum::<f64>() + l1.bias[0];
        let got = c.q_value(&s, &a).unwrap();
        assert!((got - q).abs() < 1e-14);
        assert_eq!(c.q_value(&s, &a).unwrap(), got);
        assert!(c.q_value(&s[..3], &a).is_err());
    }

    #[test]
    fn batch_matches_single_evaluations() {
        let c = Critic::new(dims(), &[4], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let states = ndarray::array![[0.1, 0.2, 0.3, 0.4], [-0.5, 0.0, 0.5, 1.0]];
        let actions = ndarray::array![[1.0, 0.0, 0.0, 1.0], [0.3, 0.3, -0.3, 0.0]];
        let q = c.q_batch(&c.params, states.view(), actions.view()).unwrap();
        for i in 0..2 {
            let single = c.q_value(&states.row(i).to_vec(), &actions.row(i).to_vec()).unwrap();
            assert!((q[i] - single).abs() < 1e-14);
        }
    }
}
