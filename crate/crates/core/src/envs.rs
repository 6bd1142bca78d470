//! The three benchmark environments, as seeded simulators and as exact models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Result};
use crate::mdp::Mdp;
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainWalkParams {
    /// Odd, at least 3; the centre is `n_states / 2`.
    pub n_states: usize,
    pub success_prob: f64,
    pub left_end_reward: f64,
    pub right_end_reward: f64,
    pub left_side_reward: f64,
    pub right_side_reward: f64,
    pub center_reward: f64,
}

impl Default for ChainWalkParams {
    fn default() -> Self {
        ChainWalkParams {
            n_states: 11,
            success_prob: 0.7,
            left_end_reward: 3.0,
            right_end_reward: 1.0,
            left_side_reward: -1.0,
            right_side_reward: 1.0,
            center_reward: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongChainParams {
    pub n_states: usize,
    /// Actions are the moves `−max_move ..= max_move`.
    pub max_move: usize,
    /// Noise is uniform on `−noise ..= noise`.
    pub noise: usize,
    pub center: usize,
    pub width: f64,
}

impl Default for LongChainParams {
    fn default() -> Self {
        LongChainParams {
            n_states: 51,
            max_move: 5,
            noise: 3,
            center: 25,
            width: 25.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyChainParams {
    pub n_actions: usize,
    /// Actions `0..left_actions` at C lead to B, the rest to D.
    pub left_actions: usize,
    pub b_reward_mean: f64,
    pub b_reward_var: f64,
    pub episode_len: usize,
}

impl Default for ToyChainParams {
    fn default() -> Self {
        ToyChainParams {
            n_actions: 100,
            left_actions: 50,
            b_reward_mean: -0.1,
            b_reward_var: 1.0,
            episode_len: 5,
        }
    }
}

/// ToyChain state indices.
pub mod toy {
    pub const A: usize = 0;
    pub const B: usize = 1;
    pub const C: usize = 2;
    pub const D: usize = 3;
}

/// ChainWalk actions.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    ChainWalk(ChainWalkParams),
    LongChainWalk(LongChainParams),
    ToyChain(ToyChainParams),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartDist {
    Fixed(usize),
    Uniform,
}

impl StartDist {
    pub fn sample(self, n_states: usize, rng: &mut SimRng) -> usize {
        match self {
            StartDist::Fixed(s) => s,
            StartDist::Uniform => rng.index(n_states),
        }
    }
}

pub fn chain_walk() -> EnvSpec {
    EnvSpec::ChainWalk(ChainWalkParams::default())
}

pub fn long_chain_walk() -> EnvSpec {
    EnvSpec::LongChainWalk(LongChainParams::default())
}

pub fn toy_chain() -> EnvSpec {
    EnvSpec::ToyChain(ToyChainParams::default())
}

impl ChainWalkParams {
    fn arrival_reward(&self, s: usize) -> f64 {
        let center = self.n_states / 2;
        if s == 0 {
            self.left_end_reward
        } else if s == self.n_states - 1 {
            self.right_end_reward
        } else if s < center {
            self.left_side_reward
        } else if s > center {
            self.right_side_reward
        } else {
            self.center_reward
        }
    }

    /// `(intended, reversed)` destinations.
    fn destinations(&self, s: usize, a: usize) -> (usize, usize) {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(self.n_states - 1);
        if a == LEFT {
            (left, right)
        } else {
            (right, left)
        }
    }
}

impl LongChainParams {
    fn n_actions(&self) -> usize {
        2 * self.max_move + 1
    }

    fn land(&self, s: usize, a: usize, n: usize) -> usize {
        let x = s as i64 + a as i64 - self.max_move as i64 + n as i64 - self.noise as i64;
        x.clamp(0, self.n_states as i64 - 1) as usize
    }

    fn arrival_reward(&self, s: usize) -> f64 {
        let d = s as f64 - self.center as f64;
        (-d * d / self.width).exp()
    }
}

impl EnvSpec {
    pub fn key(&self) -> &'static str {
        match self {
            EnvSpec::ChainWalk(_) => "chainwalk",
            EnvSpec::LongChainWalk(_) => "longchain",
            EnvSpec::ToyChain(_) => "toy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::ChainWalk(p) => {
                if p.n_states < 3 || p.n_states % 2 == 0 {
                    return Err(invalid_param(
                        "chain walk needs an odd number of states, at least 3",
                    ));
                }
                if !(0.0..=1.0).contains(&p.success_prob) {
                    return Err(invalid_param("success_prob must lie in [0, 1]"));
                }
            }
            EnvSpec::LongChainWalk(p) => {
                if p.n_states < 2 || p.center >= p.n_states || !(p.width > 0.0) {
                    return Err(invalid_param(
                        "long chain needs n_states ≥ 2, centre inside the chain, width > 0",
                    ));
                }
            }
            EnvSpec::ToyChain(p) => {
                if p.left_actions == 0 || p.left_actions >= p.n_actions {
                    return Err(invalid_param(
                        "toy chain needs 0 < left_actions < n_actions",
                    ));
                }
                if !(p.b_reward_var >= 0.0) || p.episode_len == 0 {
                    return Err(invalid_param(
                        "toy chain needs a non-negative variance and positive episode length",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        match self {
            EnvSpec::ChainWalk(p) => p.n_states,
            EnvSpec::LongChainWalk(p) => p.n_states,
            EnvSpec::ToyChain(_) => 4,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvSpec::ChainWalk(_) => 2,
            EnvSpec::LongChainWalk(p) => p.n_actions(),
            EnvSpec::ToyChain(p) => p.n_actions,
        }
    }

    /// Reward bound used for `V_max`. For ToyChain this bounds the mean reward only.
    pub fn r_max(&self) -> f64 {
        match self {
            EnvSpec::ChainWalk(p) => [
                p.left_end_reward,
                p.right_end_reward,
                p.left_side_reward,
                p.right_side_reward,
                p.center_reward,
            ]
            .iter()
            .fold(0.0, |m: f64, r| m.max(r.abs())),
            EnvSpec::LongChainWalk(_) => 1.0,
            EnvSpec::ToyChain(p) => p.b_reward_mean.abs(),
        }
    }

    pub fn train_start(&self) -> StartDist {
        match self {
            EnvSpec::ChainWalk(p) => StartDist::Fixed(p.n_states / 2),
            EnvSpec::LongChainWalk(_) => StartDist::Uniform,
            EnvSpec::ToyChain(_) => StartDist::Fixed(toy::C),
        }
    }

    pub fn eval_start(&self) -> StartDist {
        match self {
            EnvSpec::ToyChain(_) => StartDist::Fixed(toy::C),
            _ => StartDist::Uniform,
        }
    }

    pub fn default_episode_len(&self) -> usize {
        match self {
            EnvSpec::ToyChain(p) => p.episode_len,
            _ => 100,
        }
    }

    /// Whether `action` at ToyChain's C heads towards B.
    pub fn is_left_action(&self, action: usize) -> bool {
        match self {
            EnvSpec::ToyChain(p) => action < p.left_actions,
            _ => action == LEFT,
        }
    }

    pub fn step(&self, state: usize, action: usize, rng: &mut SimRng) -> Result<Transition> {
        if state >= self.n_states() || action >= self.n_actions() {
            return Err(invalid_input(format!(
                "state {state} / action {action} out of range for {}",
                self.key()
            )));
        }
        let (next_state, reward) = match self {
            EnvSpec::ChainWalk(p) => {
                let (go, back) = p.destinations(state, action);
                let s2 = if rng.bernoulli(p.success_prob) {
                    go
                } else {
                    back
                };
                (s2, p.arrival_reward(s2))
            }
            EnvSpec::LongChainWalk(p) => {
                let s2 = p.land(state, action, rng.index(2 * p.noise + 1));
                (s2, p.arrival_reward(s2))
            }
            EnvSpec::ToyChain(p) => match state {
                toy::C if action < p.left_actions => (toy::B, 0.0),
                toy::C => (toy::D, 0.0),
                toy::B => (toy::A, rng.normal(p.b_reward_mean, p.b_reward_var.sqrt())),
                _ => (toy::C, 0.0),
            },
        };
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
        })
    }

    /// Exact kernel and expected rewards, with discount `gamma`.
    pub fn exact_model(&self, gamma: f64) -> Result<Mdp> {
        self.validate()?;
        let (ns, na) = (self.n_states(), self.n_actions());
        let mut reward = vec![0.0; ns * na];
        let mut transition = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                match self {
                    EnvSpec::ChainWalk(p) => {
                        let (go, back) = p.destinations(s, a);
                        row[go] += p.success_prob;
                        row[back] += 1.0 - p.success_prob;
                    }
                    EnvSpec::LongChainWalk(p) => {
                        let w = 1.0 / (2 * p.noise + 1) as f64;
                        for n in 0..=2 * p.noise {
                            row[p.land(s, a, n)] += w;
                        }
                    }
                    EnvSpec::ToyChain(p) => match s {
                        toy::C if a < p.left_actions => row[toy::B] = 1.0,
                        toy::C => row[toy::D] = 1.0,
                        toy::B => row[toy::A] = 1.0,
                        _ => row[toy::C] = 1.0,
                    },
                }
                reward[s * na + a] = match self {
                    EnvSpec::ChainWalk(p) => row
                        .iter()
                        .enumerate()
                        .map(|(s2, w)| w * p.arrival_reward(s2))
                        .sum(),
                    EnvSpec::LongChainWalk(p) => row
                        .iter()
                        .enumerate()
                        .map(|(s2, w)| w * p.arrival_reward(s2))
                        .sum(),
                    EnvSpec::ToyChain(p) => {
                        if s == toy::B {
                            p.b_reward_mean
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        Mdp::new(ns, na, gamma, self.r_max(), reward, transition)
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for EnvSpec {
    type Err = crate::error::GviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chainwalk" => Ok(chain_walk()),
            "longchain" => Ok(long_chain_walk()),
            "toy" => Ok(toy_chain()),
            other => Err(invalid_input(format!(
                "unknown environment {other:?} (expected chainwalk, longchain or toy)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{argmax, optimal_q};

    #[test]
    fn chain_walk_model() {
        let env = chain_walk();
        let mdp = env.exact_model(0.99).unwrap();
        assert_eq!((mdp.n_states(), mdp.n_actions()), (11, 2));
        assert_eq!(mdp.next_state_probs(0, LEFT)[0], 0.7);
        assert!((mdp.next_state_probs(0, LEFT)[1] - 0.3).abs() < 1e-12);
        // From 1 going left: 0.7·3 + 0.3·(−1).
        assert!((mdp.reward(1, LEFT) - 1.8).abs() < 1e-12);
        let q = optimal_q(&mdp).unwrap();
        for s in 0..11 {
            assert_eq!(argmax(q.row(s)), LEFT, "state {s}");
        }
    }

    #[test]
    fn chain_walk_wall() {
        let env = chain_walk();
        let mut rng = SimRng::new(0);
        let mut stayed = 0;
        for _ in 0..1000 {
            let t = env.step(0, LEFT, &mut rng).unwrap();
            if t.next_state == 0 {
                stayed += 1;
                assert_eq!(t.reward, 3.0);
            }
        }
        // Only the 0.3 reversal leaves the end.
        assert!(stayed > 600);
    }

    #[test]
    fn long_chain_rewards_and_edges() {
        let EnvSpec::LongChainWalk(p) = long_chain_walk() else {
            unreachable!()
        };
        assert_eq!(p.arrival_reward(25), 1.0);
        assert!((p.arrival_reward(30) - 0.367879).abs() < 1e-6);
        let mdp = long_chain_walk().exact_model(0.99).unwrap();
        assert_eq!(mdp.n_actions(), 11);
        // s + a + n ranges over −8..−2 from (0, −5): everything clips to 0.
        assert!((mdp.next_state_probs(0, 0)[0] - 1.0).abs() < 1e-12);
        // s + a + n over −4..2 from (4, −5).
        let row = mdp.next_state_probs(4, 0);
        assert!((row[0] - 5.0 / 7.0).abs() < 1e-12);
        assert!((row[1] - 1.0 / 7.0).abs() < 1e-12);
        assert!((row[2] - 1.0 / 7.0).abs() < 1e-12);
        assert!(row[3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn toy_chain_model() {
        let env = toy_chain();
        let mdp = env.exact_model(0.99).unwrap();
        assert_eq!(mdp.reward(toy::B, 17), -0.1);
        assert_eq!(mdp.next_state_probs(toy::C, 49)[toy::B], 1.0);
        assert_eq!(mdp.next_state_probs(toy::C, 50)[toy::D], 1.0);
        let q = optimal_q(&mdp).unwrap();
        let best_left = q.row(toy::C)[..50]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let worst_right = q.row(toy::C)[50..]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(worst_right > best_left);
        assert!(worst_right.abs() < 1e-12);
    }

    #[test]
    fn toy_chain_reward_moments() {
        let env = toy_chain();
        let mut rng = SimRng::new(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| env.step(toy::B, 0, &mut rng).unwrap().reward)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean + 0.1).abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn step_rejects_out_of_range() {
        let mut rng = SimRng::new(0);
        assert!(chain_walk().step(11, 0, &mut rng).is_err());
        assert!(toy_chain().step(0, 100, &mut rng).is_err());
    }

    #[test]
    fn keys_round_trip() {
        for key in ["chainwalk", "longchain", "toy"] {
            assert_eq!(key.parse::<EnvSpec>().unwrap().key(), key);
        }
        assert!("gridworld".parse::<EnvSpec>().is_err());
    }
}
