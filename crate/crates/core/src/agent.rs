//! Model-free tabular AGVI agent with episodic batch updates.

use serde::{Deserialize, Serialize};

use crate::envs::{toy, EnvSpec, Transition};
use crate::error::{invalid_param, Result};
use crate::gvi::GviParams;
use crate::mdp::QTable;
use crate::operators::{argmax, mellowmax_row, row_max};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub params: GviParams,
    pub gamma: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub epsilon: f64,
    pub eval_episodes: usize,
    pub eval_steps: usize,
    pub seed: u64,
    /// Keep every `snapshot_stride`-th post-update Q-table; 0 keeps none.
    pub snapshot_stride: usize,
    /// Evaluate after every `eval_interval`-th episode (and always after the last); 0 never.
    pub eval_interval: usize,
    /// Discount evaluation returns with `gamma` instead of plain sums.
    pub discounted_eval: bool,
}

impl TrainConfig {
    /// Episodic protocol with ε = 0.3 and 100 × 100 greedy evaluation after every episode.
    pub fn new(params: GviParams, episodes: usize, seed: u64) -> Self {
        TrainConfig {
            params,
            gamma: 0.99,
            episodes,
            steps_per_episode: 100,
            epsilon: 0.3,
            eval_episodes: 100,
            eval_steps: 100,
            seed,
            snapshot_stride: 0,
            eval_interval: 1,
            discounted_eval: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(invalid_param("steps_per_episode must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid_param(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid_param(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.eval_interval > 0 && (self.eval_episodes == 0 || self.eval_steps == 0) {
            return Err(invalid_param(
                "evaluation needs positive eval_episodes and eval_steps",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// 1-based count of completed training episodes.
    pub episode: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub final_q: QTable,
    pub eval_curve: Vec<EvalPoint>,
    pub q_snapshots: Vec<(usize, QTable)>,
    /// ToyChain only: share of the greedy set at C made of left actions, after each update.
    pub left_ratio_curve: Option<Vec<f64>>,
    /// Whether any Q entry became non-finite.
    pub diverged: bool,
}

/// For each visited `(s, a)`, the mean over its transitions of
/// `r + γ m_β q(s') + α (q(s, a) − m_β q(s))`, all read from the incoming `q`.
pub fn batch_update(
    q: &QTable,
    params: GviParams,
    gamma: f64,
    transitions: &[Transition],
) -> QTable {
    let (ns, na) = q.shape();
    let mut soft_values: Vec<Option<f64>> = vec![None; ns];
    let mut soft =
        |s: usize| *soft_values[s].get_or_insert_with(|| mellowmax_row(q.row(s), params.beta));
    let mut sums = vec![0.0; ns * na];
    let mut counts = vec![0u32; ns * na];
    for t in transitions {
        let idx = t.state * na + t.action;
        let target = t.reward
            + gamma * soft(t.next_state)
            + params.alpha * (q.values()[idx] - soft(t.state));
        sums[idx] += target;
        counts[idx] += 1;
    }
    let mut out = q.clone();
    for (idx, (&sum, &n)) in sums.iter().zip(&counts).enumerate() {
        if n > 0 {
            out.set(idx / na, idx % na, sum / n as f64);
        }
    }
    out
}

pub fn epsilon_greedy(q: &QTable, state: usize, epsilon: f64, rng: &mut SimRng) -> usize {
    if epsilon > 0.0 && rng.uniform() < epsilon {
        rng.index(q.n_actions())
    } else {
        argmax(q.row(state))
    }
}

/// Mean return of greedy rollouts from the environment's evaluation start.
pub fn evaluate(
    env: &EnvSpec,
    q: &QTable,
    eval_episodes: usize,
    eval_steps: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    evaluate_with(env, q, eval_episodes, eval_steps, None, rng)
}

pub fn evaluate_with(
    env: &EnvSpec,
    q: &QTable,
    eval_episodes: usize,
    eval_steps: usize,
    discount: Option<f64>,
    rng: &mut SimRng,
) -> Result<f64> {
    evaluate_policy(
        env,
        |s| argmax(q.row(s)),
        eval_episodes,
        eval_steps,
        discount,
        rng,
    )
}

/// Same protocol for an arbitrary (possibly random) action rule.
pub fn evaluate_policy(
    env: &EnvSpec,
    mut act: impl FnMut(usize) -> usize,
    eval_episodes: usize,
    eval_steps: usize,
    discount: Option<f64>,
    rng: &mut SimRng,
) -> Result<f64> {
    if eval_episodes == 0 {
        return Err(invalid_param("eval_episodes must be positive"));
    }
    let start = env.eval_start();
    let mut total = 0.0;
    for _ in 0..eval_episodes {
        let mut s = start.sample(env.n_states(), rng);
        let mut weight = 1.0;
        for _ in 0..eval_steps {
            let t = env.step(s, act(s), rng)?;
            total += weight * t.reward;
            if let Some(g) = discount {
                weight *= g;
            }
            s = t.next_state;
        }
    }
    Ok(total / eval_episodes as f64)
}

/// Share of C's maximizing actions that lead left; ties are split evenly.
pub fn left_ratio(env: &EnvSpec, q: &QTable) -> f64 {
    let state = match env {
        EnvSpec::ToyChain(_) => toy::C,
        _ => 0,
    };
    let row = q.row(state);
    let best = row_max(row);
    let (mut left, mut total) = (0usize, 0usize);
    for (a, &v) in row.iter().enumerate() {
        if v >= best {
            total += 1;
            if env.is_left_action(a) {
                left += 1;
            }
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        left as f64 / total as f64
    }
}

/// Training and evaluation draw from separate streams derived from `config.seed`.
pub fn train(env: &EnvSpec, config: &TrainConfig) -> Result<TrainResult> {
    env.validate()?;
    config.validate()?;
    let (ns, na) = (env.n_states(), env.n_actions());
    let mut rng = SimRng::new(config.seed);
    let mut eval_rng = rng.split();
    let start = env.train_start();
    let is_toy = matches!(env, EnvSpec::ToyChain(_));
    let discount = config.discounted_eval.then_some(config.gamma);

    let mut q = QTable::zeros(ns, na);
    let mut eval_curve = Vec::new();
    let mut q_snapshots = Vec::new();
    let mut left_curve = is_toy.then(|| Vec::with_capacity(config.episodes));
    let mut transitions = Vec::with_capacity(config.steps_per_episode);
    let mut diverged = false;

    if config.snapshot_stride > 0 {
        q_snapshots.push((0, q.clone()));
    }
    for episode in 1..=config.episodes {
        transitions.clear();
        let mut s = start.sample(ns, &mut rng);
        for _ in 0..config.steps_per_episode {
            let a = epsilon_greedy(&q, s, config.epsilon, &mut rng);
            let t = env.step(s, a, &mut rng)?;
            s = t.next_state;
            transitions.push(t);
        }
        q = batch_update(&q, config.params, config.gamma, &transitions);
        diverged |= !q.is_finite();

        if let Some(curve) = left_curve.as_mut() {
            curve.push(left_ratio(env, &q));
        }
        if config.snapshot_stride > 0 && episode % config.snapshot_stride == 0 {
            q_snapshots.push((episode, q.clone()));
        }
        let due = config.eval_interval > 0
            && (episode % config.eval_interval == 0 || episode == config.episodes);
        if due {
            let value = evaluate_with(
                env,
                &q,
                config.eval_episodes,
                config.eval_steps,
                discount,
                &mut eval_rng,
            )?;
            eval_curve.push(EvalPoint { episode, value });
        }
    }
    Ok(TrainResult {
        final_q: q,
        eval_curve,
        q_snapshots,
        left_ratio_curve: left_curve,
        diverged,
    })
}
