mod common;

use ndarray::Array2;
use rand::Rng;

use common::*;
use lird::agent::{actor_gradient, actor_gradient_at, Dims};
use lird::data::RewardMap;
use lird::eval::{average_precision, chance_level, ndcg};
use lird::net::Activation;
use lird::sim::overall_reward;

fn check(name: &str, tol: f64, f: fn(&mut rand_chacha::ChaCha8Rng) -> f64) {
    let mut r = rng(0x5eed);
    for i in 0..25 {
        let err = f(&mut r);
        assert!(err < tol, "{name} instance {i}: relative error {err:e}");
    }
}

#[test]
fn actor_network_matches_finite_differences() {
    check("actor", 1e-4, actor_net_error);
}

#[test]
fn critic_network_matches_finite_differences() {
    check("critic", 1e-4, critic_net_error);
}

#[test]
fn skipgram_matches_finite_differences() {
    check("skip-gram", 1e-4, skipgram_error);
}

#[test]
fn policy_gradient_matches_finite_differences() {
    check("policy", 1e-3, composed_error);
}

#[test]
fn gradient_at_own_output_equals_the_composed_gradient() {
    let mut r = rng(9);
    let dims = Dims {
        state_len: 2,
        list_len: 2,
        embed_dim: 3,
    };
    let actor = random_net(&[dims.state_dim(), 5, dims.action_dim()], Activation::Tanh, &mut r);
    let critic = random_net(&[dims.state_dim() + dims.action_dim(), 4, 1], Activation::Identity, &mut r);
    let states = Array2::from_shape_vec((3, dims.state_dim()), random_vec(3 * dims.state_dim(), &mut r)).unwrap();
    let own = actor.forward_batch(states.view()).unwrap();
    let a = actor_gradient(&actor, &critic, states.view(), dims).unwrap();
    let b = actor_gradient_at(&actor, &critic, states.view(), Some(own.view()), dims).unwrap();
    assert!(relative_error(&a.flatten(), &b.flatten()) < 1e-14);
    let elsewhere = Array2::from_shape_fn(own.raw_dim(), |_| r.random_range(-1.0..1.0));
    let c = actor_gradient_at(&actor, &critic, states.view(), Some(elsewhere.view()), dims).unwrap();
    assert!(relative_error(&a.flatten(), &c.flatten()) > 1e-6);
}

#[test]
fn chance_level_matches_sampled_feedback() {
    let marginals = [0.7, 0.25, 0.05];
    let map = RewardMap::default();
    let exact = chance_level(marginals, 3, &map, 0.9).unwrap();
    let mut r = rng(4);
    let n = 200_000;
    let (mut m, mut g, mut o) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let rewards: Vec<f64> = (0..3)
            .map(|_| {
                let u: f64 = r.random();
                if u < marginals[0] {
                    map.skip
                } else if u < marginals[0] + marginals[1] {
                    map.click
                } else {
                    map.order
                }
            })
            .collect();
        m += average_precision(&rewards).unwrap();
        g += ndcg(&rewards).unwrap();
        o += overall_reward(&rewards, 0.9);
    }
    let nf = n as f64;
    assert!((m / nf - exact.map).abs() < 5e-3, "{} vs {}", m / nf, exact.map);
    assert!((g / nf - exact.ndcg).abs() < 5e-3);
    assert!((o / nf - exact.overall).abs() < 1e-2);
}
