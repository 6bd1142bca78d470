#![allow(dead_code)]

use gvi_core::rng::SimRng;
use gvi_core::{GviParams, Mdp, QTable, SoftmaxTemp};

/// Dense MDP with Dirichlet-like rows and uniform rewards in `[-1, 1]`.
pub fn random_mdp(rng: &mut SimRng, n_states: usize, n_actions: usize, gamma: f64) -> Mdp {
    let reward: Vec<f64> = (0..n_states * n_actions)
        .map(|_| 2.0 * rng.uniform() - 1.0)
        .collect();
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let w: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let z: f64 = w.iter().sum();
        transition.extend(w.iter().map(|x| x / z));
    }
    Mdp::new(n_states, n_actions, gamma, 1.0, reward, transition).unwrap()
}

pub fn random_q(rng: &mut SimRng, n_states: usize, n_actions: usize, scale: f64) -> QTable {
    QTable::from_fn(n_states, n_actions, |_, _| {
        scale * (2.0 * rng.uniform() - 1.0)
    })
}

pub fn noise(rng: &mut SimRng, n_states: usize, n_actions: usize, sigma: f64) -> QTable {
    QTable::from_fn(n_states, n_actions, |_, _| {
        if sigma == 0.0 {
            0.0
        } else {
            rng.normal(0.0, sigma)
        }
    })
}

pub fn params(alpha: f64, beta: f64) -> GviParams {
    GviParams::new(alpha, SoftmaxTemp::new(beta).unwrap()).unwrap()
}

pub fn temp(beta: f64) -> SoftmaxTemp {
    SoftmaxTemp::new(beta).unwrap()
}
