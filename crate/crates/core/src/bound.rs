//! Performance bound for approximate GVI and the error-decay coefficient.
//!
//! ```text
//! ‖Q* − Q^{π_k}‖ ≤ C + 2/(1−γ) · (1−α)/(1−α^{k+1}) · (C_k + 𝓔_k)
//! C   = γ/(1−γ) · (1−α)/β · log|A|
//! C_k = γ (α^{k+1} − γ^{k+1})/(α − γ) · (2 V_max + α/β · log|A|)
//! 𝓔_k = Σ_{i=0}^{k} γ^i ‖Σ_{j=0}^{k−i} α^j ε_{k−i−j}‖
//! ```

use std::io::Write;

use crate::error::{invalid_input, Result};
use crate::gvi::GviParams;
use crate::mdp::{Mdp, QTable};
use crate::operators::{mellowmax_policy, mellowmax_unchecked, optimal_q, policy_q_value};

/// Below this `|α − γ|` the `C_k` ratio switches to its limit `(k+1) α^k`.
pub const ALPHA_GAMMA_LIMIT_TOL: f64 = 1e-12;

/// The parts of an MDP the bound depends on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MdpMeta {
    pub gamma: f64,
    pub r_max: f64,
    pub n_actions: usize,
}

impl MdpMeta {
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }
}

impl From<&Mdp> for MdpMeta {
    fn from(m: &Mdp) -> Self {
        MdpMeta {
            gamma: m.gamma(),
            r_max: m.r_max(),
            n_actions: m.n_actions(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    pub c_const: f64,
    pub c_k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub k: usize,
    pub c_const: f64,
    pub c_k: f64,
    pub e_k: f64,
    pub bound: f64,
    pub actual_gap: Option<f64>,
}

impl BoundReport {
    pub fn holds(&self) -> Option<bool> {
        self.actual_gap.map(|g| g <= self.bound)
    }
}

/// `(1 − α)/β`, zero when `β = ∞`.
fn soft_penalty(params: &GviParams) -> f64 {
    if params.beta.is_max() {
        0.0
    } else {
        (1.0 - params.alpha) / params.beta.value()
    }
}

/// `(α^{k+1} − γ^{k+1}) / (α − γ)`.
fn alpha_gamma_ratio(alpha: f64, gamma: f64, k: usize) -> f64 {
    if (alpha - gamma).abs() < ALPHA_GAMMA_LIMIT_TOL {
        (k as f64 + 1.0) * alpha.powi(k as i32)
    } else {
        (alpha.powi(k as i32 + 1) - gamma.powi(k as i32 + 1)) / (alpha - gamma)
    }
}

pub fn bound_constants(params: GviParams, meta: MdpMeta, k: usize) -> BoundConstants {
    let log_a = (meta.n_actions as f64).ln();
    let gamma = meta.gamma;
    let c_const = gamma / (1.0 - gamma) * soft_penalty(&params) * log_a;
    let alpha_over_beta = if params.beta.is_max() {
        0.0
    } else {
        params.alpha / params.beta.value()
    };
    let c_k = gamma
        * alpha_gamma_ratio(params.alpha, gamma, k)
        * (2.0 * meta.v_max() + alpha_over_beta * log_a);
    BoundConstants { c_const, c_k }
}

/// `𝓔_k`, using `W_m = Σ_{j ≤ m} α^j ε_{m−j} = α W_{m−1} + ε_m`.
pub fn error_term(errors: &[QTable], alpha: f64, gamma: f64, k: usize) -> Result<f64> {
    Ok(error_terms(errors, alpha, gamma, k)?[k])
}

/// `𝓔_0 … 𝓔_k` in one sweep.
pub fn error_terms(errors: &[QTable], alpha: f64, gamma: f64, k: usize) -> Result<Vec<f64>> {
    if errors.len() < k + 1 {
        return Err(invalid_input(format!(
            "error history has {} entries, need {}",
            errors.len(),
            k + 1
        )));
    }
    let (ns, na) = errors[0].shape();
    let mut w = QTable::zeros(ns, na);
    let mut w_norms = Vec::with_capacity(k + 1);
    for eps in &errors[..=k] {
        w.ensure_same_shape(eps)?;
        w = w.zip_with(eps, |x, e| alpha * x + e);
        w_norms.push(w.sup_norm());
    }
    // 𝓔_m = Σ_{i=0}^{m} γ^i ‖W_{m−i}‖ = ‖W_m‖ + γ 𝓔_{m−1}
    let mut out = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    for n in w_norms {
        acc = n + gamma * acc;
        out.push(acc);
    }
    Ok(out)
}

/// `(1 − α)/(1 − α^{k+1})`, written as `1 / Σ_{i ≤ k} α^i` so `α = 1` gives `1/(k+1)`.
pub fn horizon_factor(alpha: f64, k: usize) -> f64 {
    if alpha >= 1.0 {
        return 1.0 / (k as f64 + 1.0);
    }
    (1.0 - alpha) / (1.0 - alpha.powi(k as i32 + 1))
}

fn assemble(params: GviParams, meta: MdpMeta, k: usize, e_k: f64) -> BoundReport {
    let BoundConstants { c_const, c_k } = bound_constants(params, meta, k);
    let bound = c_const + 2.0 / (1.0 - meta.gamma) * horizon_factor(params.alpha, k) * (c_k + e_k);
    BoundReport {
        k,
        c_const,
        c_k,
        e_k,
        bound,
        actual_gap: None,
    }
}

pub fn performance_bound(
    params: GviParams,
    meta: MdpMeta,
    errors: &[QTable],
    k: usize,
) -> Result<BoundReport> {
    let e_k = error_term(errors, params.alpha, meta.gamma, k)?;
    Ok(assemble(params, meta, k, e_k))
}

/// `D_k = γ^k (Σ α^i γ^{−i}) / (Σ α^i)`, evaluated as `Σ α^i γ^{k−i} / Σ α^i`
/// with the numerator in Horner form, so `α = 0` gives `γ^k` by repeated multiplication.
pub fn decay_coefficient(alpha: f64, gamma: f64, k: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    let mut a_pow = 1.0;
    for _ in 0..=k {
        num = num * gamma + a_pow;
        den += a_pow;
        a_pow *= alpha;
    }
    num / den
}

/// `ε_k = Q_{k+1} − T_β Q_k − α (Q_k − m_β Q_k)` for consecutive snapshots.
pub fn extract_residual_errors(
    mdp: &Mdp,
    params: GviParams,
    history: &[QTable],
) -> Result<Vec<QTable>> {
    if history.len() < 2 {
        return Err(invalid_input("need at least two consecutive snapshots"));
    }
    history
        .windows(2)
        .map(|pair| {
            let exact = crate::gvi::gvi_step(mdp, &pair[0], params, None)?;
            pair[1].ensure_same_shape(&exact)?;
            Ok(pair[1].sub(&exact))
        })
        .collect()
}

/// Evaluates the bound against the measured `‖Q* − Q^{π_k}‖∞` at every
/// `stride`-th iterate up to `max_k`, with `π_k` the mellowmax-matching
/// policy of `Q_k`. `iterates[k]` is `Q_k`; `errors[k]` is `ε_k`.
pub fn audit_bound(
    mdp: &Mdp,
    params: GviParams,
    iterates: &[QTable],
    errors: &[QTable],
    q_star: Option<&QTable>,
    stride: usize,
    max_k: usize,
) -> Result<Vec<BoundReport>> {
    if iterates.len() < max_k + 1 || errors.len() < max_k + 1 {
        return Err(invalid_input(
            "audit needs iterates and errors through max_k",
        ));
    }
    let owned;
    let q_star = match q_star {
        Some(q) => q,
        None => {
            owned = optimal_q(mdp)?;
            &owned
        }
    };
    let meta = MdpMeta::from(mdp);
    let e_terms = error_terms(errors, params.alpha, meta.gamma, max_k)?;
    let stride = stride.max(1);
    let mut ks: Vec<usize> = (0..=max_k).step_by(stride).collect();
    if ks.last() != Some(&max_k) {
        ks.push(max_k);
    }
    ks.into_iter()
        .map(|k| {
            let pi = mellowmax_policy(&iterates[k], params.beta)?;
            let q_pi = policy_q_value(mdp, &pi)?;
            let mut report = assemble(params, meta, k, e_terms[k]);
            report.actual_gap = Some(q_star.sup_distance(&q_pi));
            Ok(report)
        })
        .collect()
}

/// `Q* − Q^θ ≤ C` entrywise; returns the largest violation (≤ 0 when it holds).
pub fn proposition1_slack(q_star: &QTable, q_theta: &QTable, params: GviParams, gamma: f64) -> f64 {
    let c = gamma / (1.0 - gamma) * soft_penalty(&params) * (q_star.n_actions() as f64).ln();
    q_star
        .values()
        .iter()
        .zip(q_theta.values())
        .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b - c))
}

pub fn write_bound_csv(reports: &[BoundReport], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "k,C,C_k,E_k,bound,actual_gap")?;
    for r in reports {
        let gap = r
            .actual_gap
            .map(crate::fmt_f64)
            .unwrap_or_else(|| "nan".to_string());
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k,
            crate::fmt_f64(r.c_const),
            crate::fmt_f64(r.c_k),
            crate::fmt_f64(r.e_k),
            crate::fmt_f64(r.bound),
            gap
        )?;
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct ErrorCsvRow {
    k: usize,
    state: usize,
    action: usize,
    value: f64,
}

/// Reads an error history in `k,state,action,value` layout; missing entries are zero.
pub fn read_error_csv(text: &str, n_states: usize, n_actions: usize) -> Result<Vec<QTable>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| invalid_input(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["k", "state", "action", "value"] {
        return Err(invalid_input(
            "error CSV must start with k,state,action,value",
        ));
    }
    let mut out: Vec<QTable> = Vec::new();
    for row in reader.deserialize::<ErrorCsvRow>() {
        let r = row.map_err(|e| invalid_input(format!("error CSV: {e}")))?;
        if r.state >= n_states || r.action >= n_actions {
            return Err(invalid_input(format!(
                "error CSV entry ({}, {}) is outside the MDP",
                r.state, r.action
            )));
        }
        if !r.value.is_finite() {
            return Err(invalid_input("error CSV contains a non-finite value"));
        }
        while out.len() <= r.k {
            out.push(QTable::zeros(n_states, n_actions));
        }
        out[r.k].set(r.state, r.action, r.value);
    }
    Ok(out)
}

pub fn write_error_csv(errors: &[QTable], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "k,state,action,value")?;
    for (k, e) in errors.iter().enumerate() {
        for s in 0..e.n_states() {
            for a in 0..e.n_actions() {
                writeln!(out, "{},{},{},{}", k, s, a, crate::fmt_f64(e.get(s, a)))?;
            }
        }
    }
    Ok(())
}

/// `π_k` of the bound (`π_k Q_k = m_β Q_k`) gives `π_k Q_k − m_β Q_k = 0`; used as a sanity probe.
pub fn policy_matching_residual(q: &QTable, params: GviParams) -> Result<f64> {
    let pi = mellowmax_policy(q, params.beta)?;
    Ok(pi
        .expect(q)
        .sup_distance(&mellowmax_unchecked(q, params.beta)))
}
