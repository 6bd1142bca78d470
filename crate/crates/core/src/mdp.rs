//! Dense finite MDPs and the tables every operator maps between.
//!
//! All tables are stored row-major: a [`QTable`] entry `(s, a)` lives at
//! `s * n_actions + a`, and a transition probability `P(s' | s, a)` lives at
//! `(s * n_actions + a) * n_states + s'`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, GviError, Result};

/// Tolerance for row sums of transition kernels and policies.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Inverse temperature of a soft maximum.
///
/// `+inf` encodes the exact max and `0` the plain average over actions.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SoftmaxTemp(f64);

impl SoftmaxTemp {
    pub const MAX: SoftmaxTemp = SoftmaxTemp(f64::INFINITY);
    pub const MEAN: SoftmaxTemp = SoftmaxTemp(0.0);

    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_nan() || beta < 0.0 {
            return Err(invalid_param(format!(
                "inverse temperature must be >= 0, got {beta}"
            )));
        }
        Ok(SoftmaxTemp(beta))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_max(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn is_mean(self) -> bool {
        self.0 == 0.0
    }

    pub fn is_finite_positive(self) -> bool {
        self.0 > 0.0 && self.0.is_finite()
    }
}

impl fmt::Display for SoftmaxTemp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_max() {
            write!(f, "inf")
        } else {
            write!(f, "{:?}", self.0)
        }
    }
}

impl FromStr for SoftmaxTemp {
    type Err = GviError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") || t == "∞" {
            return Ok(SoftmaxTemp::MAX);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| invalid_param(format!("cannot parse inverse temperature {s:?}")))?;
        SoftmaxTemp::new(v)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TempRepr {
    Number(f64),
    Text(String),
}

/// Finite values serialize as numbers and `∞` as the string `"inf"`.
impl Serialize for SoftmaxTemp {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_max() {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for SoftmaxTemp {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match TempRepr::deserialize(de)? {
            TempRepr::Number(v) => SoftmaxTemp::new(v),
            TempRepr::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(invalid_input(format!("{what} entry {i} is not finite"))),
        None => Ok(()),
    }
}

/// A real function over state-action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    /// Builds a table from row-major values, rejecting non-finite entries.
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid_input(
                "q-table needs at least one state and one action",
            ));
        }
        if values.len() != n_states * n_actions {
            return Err(invalid_input(format!(
                "q-table expects {} values, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        check_finite(&values, "q-table")?;
        Ok(QTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(invalid_input("ragged q-table rows"));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(s, a));
            }
        }
        QTable {
            n_states,
            n_actions,
            values,
        }
    }

    /// Wraps computed values without validation.
    pub(crate) fn from_raw(n_states: usize, n_actions: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_states * n_actions);
        QTable {
            n_states,
            n_actions,
            values,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.n_actions;
        &mut self.values[s * n..(s + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_actions)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        check_finite(&self.values, "q-table")
    }

    pub fn ensure_same_shape(&self, other: &QTable) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(invalid_input(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖∞`. Panics on shape mismatch.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        assert_eq!(
            self.shape(),
            other.shape(),
            "sup_distance on mismatched shapes"
        );
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> QTable {
        QTable::from_raw(
            self.n_states,
            self.n_actions,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_with(&self, other: &QTable, f: impl Fn(f64, f64) -> f64) -> QTable {
        assert_eq!(self.shape(), other.shape(), "zip_with on mismatched shapes");
        QTable::from_raw(
            self.n_states,
            self.n_actions,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }

    pub fn add(&self, other: &QTable) -> QTable {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &QTable) -> QTable {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, c: f64) -> QTable {
        self.map(|v| v * c)
    }

    /// `self(s, a) + v(s)` for every pair.
    pub fn add_state_values(&self, v: &VTable) -> QTable {
        assert_eq!(self.n_states, v.len());
        QTable::from_fn(self.n_states, self.n_actions, |s, a| {
            self.get(s, a) + v.get(s)
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// A real function over states.
#[derive(Clone, Debug, PartialEq)]
pub struct VTable {
    values: Vec<f64>,
}

impl VTable {
    pub fn zeros(n_states: usize) -> Self {
        VTable {
            values: vec![0.0; n_states],
        }
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "v-table")?;
        Ok(VTable { values })
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        VTable { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &VTable) -> f64 {
        assert_eq!(
            self.len(),
            other.len(),
            "sup_distance on mismatched lengths"
        );
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VTable {
        VTable::from_raw(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &VTable, f: impl Fn(f64, f64) -> f64) -> VTable {
        assert_eq!(self.len(), other.len());
        VTable::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }
}

/// Stationary stochastic policy `π(a | s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    /// Validates that every row is a probability distribution.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(invalid_input(
                "policy shape does not match its probabilities",
            ));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(invalid_input(format!(
                    "policy row {s} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid_input(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(PolicyTable {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(invalid_input("ragged policy rows"));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicyTable {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy from one action per state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        PolicyTable {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub(crate) fn from_raw(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), n_states * n_actions);
        PolicyTable {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(π f)(s) = Σ_a π(a|s) f(s, a)`.
    pub fn expect(&self, q: &QTable) -> VTable {
        assert_eq!(self.shape(), q.shape());
        VTable::from_raw(
            (0..self.n_states)
                .map(|s| self.row(s).iter().zip(q.row(s)).map(|(p, v)| p * v).sum())
                .collect(),
        )
    }

    /// Shannon entropy `−Σ_a π log π` per state.
    pub fn entropy(&self) -> VTable {
        VTable::from_raw(
            (0..self.n_states)
                .map(|s| {
                    -self
                        .row(s)
                        .iter()
                        .filter(|&&p| p > 0.0)
                        .map(|p| p * p.ln())
                        .sum::<f64>()
                })
                .collect(),
        )
    }

    pub fn sup_distance(&self, other: &PolicyTable) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }
}

/// Dense finite MDP `(S, A, P, r, γ)` with reward bound `r_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    reward: Vec<f64>,
    transition: Vec<f64>,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        r_max: f64,
        reward: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid_input(
                "an MDP needs at least one state and one action",
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid_param(format!(
                "discount must lie in [0, 1), got {gamma}"
            )));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(invalid_param(format!(
                "r_max must be positive and finite, got {r_max}"
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(invalid_input("reward table has the wrong size"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(invalid_input("transition kernel has the wrong size"));
        }
        check_finite(&reward, "reward")?;
        if let Some(i) = reward.iter().position(|r| r.abs() > r_max) {
            return Err(invalid_input(format!(
                "reward {} at ({}, {}) exceeds r_max {r_max}",
                reward[i],
                i / n_actions,
                i % n_actions
            )));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(invalid_input(format!(
                    "negative or non-finite transition probability at ({}, {})",
                    i / n_actions,
                    i % n_actions
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid_input(format!(
                    "transition row ({}, {}) sums to {sum}",
                    i / n_actions,
                    i % n_actions
                )));
            }
        }
        Ok(Mdp {
            n_states,
            n_actions,
            gamma,
            r_max,
            reward,
            transition,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `V_max = r_max / (1 − γ)`.
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Mdp> {
        Mdp::new(
            self.n_states,
            self.n_actions,
            gamma,
            self.r_max,
            self.reward.clone(),
            self.transition.clone(),
        )
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn reward_table(&self) -> QTable {
        QTable::from_raw(self.n_states, self.n_actions, self.reward.clone())
    }

    #[inline]
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// `(P v)(s, a) = Σ_{s'} P(s'|s,a) v(s')`.
    pub fn expect_next(&self, v: &VTable) -> QTable {
        assert_eq!(v.len(), self.n_states);
        let vals = v.values();
        QTable::from_raw(
            self.n_states,
            self.n_actions,
            self.transition
                .chunks(self.n_states)
                .map(|row| row.iter().zip(vals).map(|(p, x)| p * x).sum())
                .collect(),
        )
    }

    /// `r + γ P v`.
    pub fn backup(&self, v: &VTable) -> QTable {
        let mut q = self.expect_next(v);
        for (x, r) in q.values.iter_mut().zip(&self.reward) {
            *x = r + self.gamma * *x;
        }
        q
    }

    pub fn to_json(&self) -> MdpJson {
        MdpJson {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            r_max: self.r_max,
            reward: self
                .reward
                .chunks(self.n_actions)
                .map(<[f64]>::to_vec)
                .collect(),
            transition: self
                .transition
                .chunks(self.n_actions * self.n_states)
                .map(|by_s| by_s.chunks(self.n_states).map(<[f64]>::to_vec).collect())
                .collect(),
        }
    }

    pub fn from_json(doc: &MdpJson) -> Result<Mdp> {
        if doc.reward.len() != doc.n_states || doc.reward.iter().any(|r| r.len() != doc.n_actions) {
            return Err(invalid_input(
                "reward array does not match n_states x n_actions",
            ));
        }
        if doc.transition.len() != doc.n_states
            || doc.transition.iter().any(|by_a| {
                by_a.len() != doc.n_actions || by_a.iter().any(|row| row.len() != doc.n_states)
            })
        {
            return Err(invalid_input(
                "transition array does not match n_states x n_actions x n_states",
            ));
        }
        Mdp::new(
            doc.n_states,
            doc.n_actions,
            doc.gamma,
            doc.r_max,
            doc.reward.concat(),
            doc.transition
                .iter()
                .flat_map(|by_a| by_a.concat())
                .collect(),
        )
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json())?)
    }

    pub fn from_json_str(text: &str) -> Result<Mdp> {
        let doc: MdpJson = serde_json::from_str(text)?;
        Mdp::from_json(&doc)
    }
}

/// On-disk MDP layout: nested `reward[s][a]` and `transition[s][a][s']`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MdpJson {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
}
