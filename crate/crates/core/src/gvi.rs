//! Exact generalized value iteration
//! `Q ← T_β Q + α (Q − m_β Q) (+ ε)` and its analytic predictions.
//!
//! Special cases: `α = 0` is softmax VI (plain VI when `β = ∞`), `β = ∞`
//! is advantage learning, `α = 1` is dynamic policy programming.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, GviError, Result};
use crate::mdp::{Mdp, PolicyTable, QTable, SoftmaxTemp, VTable};
use crate::operators::{
    mellowmax_policy, mellowmax_row, mellowmax_unchecked, optimal_q, soft_fixed_point,
};

/// Tolerance and cap for the `Q^θ` fixed-point solve.
pub const THETA_FIXED_POINT_TOL: f64 = 1e-12;
pub const THETA_FIXED_POINT_MAX_ITERS: usize = 1_000_000;

/// `(α, β)` of the GVI update. The discount comes from the MDP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GviParams {
    pub alpha: f64,
    pub beta: SoftmaxTemp,
}

impl GviParams {
    pub fn new(alpha: f64, beta: SoftmaxTemp) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid_param(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if beta.is_mean() {
            return Err(invalid_param("GVI needs beta > 0"));
        }
        Ok(GviParams { alpha, beta })
    }

    /// Value iteration: `α = 0, β = ∞`.
    pub fn value_iteration() -> Self {
        GviParams {
            alpha: 0.0,
            beta: SoftmaxTemp::MAX,
        }
    }

    /// Effective inverse temperature `θ = β / (1 − α)`, infinite when
    /// `α = 1` or `β = ∞`.
    pub fn theta(&self) -> SoftmaxTemp {
        if self.alpha >= 1.0 || self.beta.is_max() {
            SoftmaxTemp::MAX
        } else {
            SoftmaxTemp::new(self.beta.value() / (1.0 - self.alpha)).expect("positive theta")
        }
    }
}

/// One GVI step on a raw table. `m_q` must be `m_β q`.
pub(crate) fn gvi_step_raw(mdp: &Mdp, q: &QTable, m_q: &VTable, params: &GviParams) -> QTable {
    let mut next = mdp.backup(m_q);
    if params.alpha != 0.0 {
        for s in 0..q.n_states() {
            let m = m_q.get(s);
            let (row, out) = (q.row(s), next.row_mut(s));
            for (o, &x) in out.iter_mut().zip(row) {
                *o += params.alpha * (x - m);
            }
        }
    }
    next
}

/// `T_β q + α (q − m_β q) + ε`.
pub fn gvi_step(
    mdp: &Mdp,
    q: &QTable,
    params: GviParams,
    error: Option<&QTable>,
) -> Result<QTable> {
    if q.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid_input("q-table shape does not match the MDP"));
    }
    q.ensure_finite()?;
    let mut next = gvi_step_raw(mdp, q, &mellowmax_unchecked(q, params.beta), &params);
    if let Some(eps) = error {
        q.ensure_same_shape(eps)?;
        next = next.add(eps);
    }
    Ok(next)
}

/// Options for [`gvi_solve`].
#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once the sup-norm change falls below this; `0` runs all iterations.
    pub tol: f64,
    /// Keep every `stride`-th iterate (plus the first and last); `None` keeps none.
    pub snapshot_stride: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 100_000,
            tol: 1e-10,
            snapshot_stride: None,
        }
    }
}

/// Log of a GVI run.
#[derive(Clone, Debug, Default)]
pub struct GviTrace {
    /// `(iteration, Q_iteration)` pairs.
    pub q_history: Vec<(usize, QTable)>,
    /// `‖Q_{k+1} − Q_k‖∞` for every performed step.
    pub residuals: Vec<f64>,
    /// `ε_k` used at each step, when errors were injected.
    pub injected_errors: Vec<QTable>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when `‖Q_0‖∞ > V_max`, outside the bound's precondition.
    pub q0_exceeds_vmax: bool,
}

pub fn gvi_solve(
    mdp: &Mdp,
    params: GviParams,
    q0: &QTable,
    opts: &SolveOptions,
) -> Result<(QTable, GviTrace)> {
    gvi_solve_with_errors(mdp, params, q0, opts, |_| None)
}

/// Runs AGVI with `errors(k)` added at step `k`. Errors are recorded in the trace.
pub fn gvi_solve_with_errors(
    mdp: &Mdp,
    params: GviParams,
    q0: &QTable,
    opts: &SolveOptions,
    mut errors: impl FnMut(usize) -> Option<QTable>,
) -> Result<(QTable, GviTrace)> {
    if q0.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid_input(
            "initial q-table shape does not match the MDP",
        ));
    }
    q0.ensure_finite()?;
    let mut trace = GviTrace {
        q0_exceeds_vmax: q0.sup_norm() > mdp.v_max(),
        ..GviTrace::default()
    };
    let keep = |k: usize| opts.snapshot_stride.is_some_and(|s| s > 0 && k.is_multiple_of(s));
    if opts.snapshot_stride.is_some() {
        trace.q_history.push((0, q0.clone()));
    }
    let mut q = q0.clone();
    for k in 0..opts.max_iters {
        let mut next = gvi_step_raw(mdp, &q, &mellowmax_unchecked(&q, params.beta), &params);
        if let Some(eps) = errors(k) {
            q.ensure_same_shape(&eps)?;
            next = next.add(&eps);
            trace.injected_errors.push(eps);
        }
        if !next.is_finite() {
            return Err(GviError::Numerical(format!(
                "GVI iterate became non-finite at step {}",
                k + 1
            )));
        }
        let residual = next.sup_distance(&q);
        trace.residuals.push(residual);
        q = next;
        trace.iterations = k + 1;
        if keep(k + 1) {
            trace.q_history.push((k + 1, q.clone()));
        }
        if residual < opts.tol {
            trace.converged = true;
            break;
        }
    }
    if opts.snapshot_stride.is_some()
        && trace.q_history.last().map(|(k, _)| *k) != Some(trace.iterations)
    {
        trace.q_history.push((trace.iterations, q.clone()));
    }
    Ok((q, trace))
}

/// All iterates `Q_0 … Q_n` of AGVI driven by the given error sequence.
pub fn agvi_iterates(
    mdp: &Mdp,
    params: GviParams,
    q0: &QTable,
    errors: &[QTable],
) -> Result<Vec<QTable>> {
    let mut out = Vec::with_capacity(errors.len() + 1);
    out.push(q0.clone());
    let mut q = q0.clone();
    for eps in errors {
        q = gvi_step(mdp, &q, params, Some(eps))?;
        out.push(q.clone());
    }
    Ok(out)
}

/// `Q^θ`, the fixed point of `T_θ` (`Q*` when `θ = ∞`).
pub fn theta_fixed_point(mdp: &Mdp, params: GviParams) -> Result<QTable> {
    soft_fixed_point(
        mdp,
        params.theta(),
        THETA_FIXED_POINT_TOL,
        THETA_FIXED_POINT_MAX_ITERS,
    )
}

/// Limit of error-free GVI for `α ≠ 1`:
/// `m_θ Q^θ + (Q^θ − m_θ Q^θ) / (1 − α)`.
pub fn theorem1_limit(mdp: &Mdp, params: GviParams) -> Result<QTable> {
    if params.alpha >= 1.0 {
        return Err(GviError::Unsupported(
            "GVI has no limit for alpha = 1; use theorem1_divergent_form".into(),
        ));
    }
    let theta = params.theta();
    let q_theta = theta_fixed_point(mdp, params)?;
    let m = mellowmax_unchecked(&q_theta, theta);
    let scale = 1.0 / (1.0 - params.alpha);
    Ok(QTable::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        m.get(s) + scale * (q_theta.get(s, a) - m.get(s))
    }))
}

/// Asymptotic form of the `α = 1` iterate at step `k`:
/// `V* + Q_0 + k A* − m_β((k − 1) A* + Q_0)`.
pub fn theorem1_divergent_form(
    mdp: &Mdp,
    params: GviParams,
    q0: &QTable,
    k: usize,
) -> Result<QTable> {
    if params.alpha != 1.0 {
        return Err(GviError::Unsupported(
            "the divergent form applies only to alpha = 1".into(),
        ));
    }
    if q0.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid_input(
            "initial q-table shape does not match the MDP",
        ));
    }
    let q_star = optimal_q(mdp)?;
    Ok(divergent_form_from(&q_star, params.beta, q0, k))
}

/// [`theorem1_divergent_form`] with `Q*` already at hand.
pub fn divergent_form_from(q_star: &QTable, beta: SoftmaxTemp, q0: &QTable, k: usize) -> QTable {
    let (ns, na) = q_star.shape();
    let kf = k as f64;
    let mut out = QTable::zeros(ns, na);
    let mut shifted = vec![0.0; na];
    for s in 0..ns {
        let row = q_star.row(s);
        let v = crate::operators::row_max(row);
        for a in 0..na {
            shifted[a] = (kf - 1.0) * (row[a] - v) + q0.get(s, a);
        }
        let m = mellowmax_row(&shifted, beta);
        for a in 0..na {
            out.set(s, a, v + q0.get(s, a) + kf * (row[a] - v) - m);
        }
    }
    out
}

/// Gap above which the greedy action of the GVI limit is guaranteed optimal:
/// `γ log|A| / (1 − γ) · (1 − α) / β`.
pub fn action_gap_threshold(params: GviParams, gamma: f64, n_actions: usize) -> f64 {
    if params.beta.is_max() || params.alpha >= 1.0 {
        return 0.0;
    }
    gamma * (n_actions as f64).ln() / (1.0 - gamma) * (1.0 - params.alpha) / params.beta.value()
}

/// The auxiliary sequence `q_k` together with the AGVI iterates it explains.
#[derive(Clone, Debug)]
pub struct AuxSequence {
    pub params: GviParams,
    /// `q_0 … q_k`.
    pub aux: Vec<QTable>,
    /// `Q_0 … Q_k`.
    pub iterates: Vec<QTable>,
    /// `π_0 … π_{k−1}` with `π_j Q_j = m_β Q_j`.
    pub policies: Vec<PolicyTable>,
    /// `A_0 … A_k`, `A_j = Σ_{i<j} α^i`.
    pub a_coef: Vec<f64>,
    /// `α^0 … α^k`.
    pub alpha_pow: Vec<f64>,
}

impl AuxSequence {
    /// `A_k q_k + α^k q_0`.
    pub fn weighted(&self, k: usize) -> QTable {
        let q0 = &self.aux[0];
        self.aux[k].zip_with(q0, |x, y| self.a_coef[k] * x + self.alpha_pow[k] * y)
    }

    /// Right-hand side of the iterate identity, for `k ≥ 1`:
    /// `A_k q_k + α^k q_0 − α m_β(A_{k−1} q_{k−1} + α^{k−1} q_0)`.
    pub fn reconstruct_iterate(&self, k: usize) -> QTable {
        assert!(k >= 1 && k < self.aux.len());
        let prev = mellowmax_unchecked(&self.weighted(k - 1), self.params.beta);
        self.weighted(k)
            .add_state_values(&prev.map(|m| -self.params.alpha * m))
    }
}

/// Builds `q_0 … q_k` from `A_{j+1} q_{j+1} = A_j T^{π_j} q_j + α^j (T^{π_j} q_0 + E_j)`
/// where `α^j E_j = Σ_{i ≤ j} α^{j−i} ε_i`, alongside the AGVI iterates `Q_j`.
pub fn q_aux_sequence(
    mdp: &Mdp,
    params: GviParams,
    q0: &QTable,
    errors: &[QTable],
    k: usize,
) -> Result<AuxSequence> {
    if errors.len() < k {
        return Err(invalid_input(format!(
            "need {k} error tables, got {}",
            errors.len()
        )));
    }
    if q0.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid_input(
            "initial q-table shape does not match the MDP",
        ));
    }
    let (ns, na) = q0.shape();
    let mut seq = AuxSequence {
        params,
        aux: vec![q0.clone()],
        iterates: vec![q0.clone()],
        policies: Vec::with_capacity(k),
        a_coef: vec![0.0],
        alpha_pow: vec![1.0],
    };
    let mut weighted_err = QTable::zeros(ns, na);
    for j in 0..k {
        let eps = &errors[j];
        q0.ensure_same_shape(eps)?;
        let q_j = &seq.iterates[j];
        let pi = mellowmax_policy(q_j, params.beta)?;
        weighted_err = weighted_err.zip_with(eps, |w, e| params.alpha * w + e);

        let (a_j, p_j) = (seq.a_coef[j], seq.alpha_pow[j]);
        let a_next = a_j + p_j;
        let t_qj = mdp.backup(&pi.expect(&seq.aux[j]));
        let t_q0 = mdp.backup(&pi.expect(q0));
        let q_next = QTable::from_fn(ns, na, |s, a| {
            (a_j * t_qj.get(s, a) + p_j * t_q0.get(s, a) + weighted_err.get(s, a)) / a_next
        });

        let big_next = gvi_step(mdp, q_j, params, Some(eps))?;
        seq.aux.push(q_next);
        seq.iterates.push(big_next);
        seq.policies.push(pi);
        seq.a_coef.push(a_next);
        seq.alpha_pow.push(p_j * params.alpha);
    }
    Ok(seq)
}

/// Writes a Q-table as `state,action,value` CSV.
pub fn write_q_csv(q: &QTable, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "state,action,value")?;
    for s in 0..q.n_states() {
        for a in 0..q.n_actions() {
            writeln!(out, "{},{},{}", s, a, crate::fmt_f64(q.get(s, a)))?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct QCsvRow {
    state: usize,
    action: usize,
    value: f64,
}

/// Reads the `state,action,value` layout back; every pair must appear exactly once.
pub fn read_q_csv(text: &str) -> Result<QTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| invalid_input(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["state", "action", "value"] {
        return Err(invalid_input(
            "q-table CSV must start with state,action,value",
        ));
    }
    let mut entries = Vec::new();
    for row in reader.deserialize::<QCsvRow>() {
        entries.push(row.map_err(|e| invalid_input(format!("q-table CSV: {e}")))?);
    }
    let ns = entries.iter().map(|e| e.state + 1).max().unwrap_or(0);
    let na = entries.iter().map(|e| e.action + 1).max().unwrap_or(0);
    let mut seen = vec![false; ns * na];
    let mut q = QTable::zeros(ns, na);
    for e in &entries {
        let idx = e.state * na + e.action;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(invalid_input(format!(
                "q-table CSV repeats ({}, {})",
                e.state, e.action
            )));
        }
        q.set(e.state, e.action, e.value);
    }
    if ns == 0 || seen.iter().any(|x| !x) {
        return Err(invalid_input(
            "q-table CSV does not cover every state-action pair",
        ));
    }
    q.ensure_finite()?;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{bellman_soft, max_value};

    fn t(b: f64) -> SoftmaxTemp {
        SoftmaxTemp::new(b).unwrap()
    }

    fn small_mdp() -> Mdp {
        Mdp::new(
            2,
            2,
            0.9,
            1.0,
            vec![1.0, 0.0, 0.3, -0.5],
            vec![0.2, 0.8, 1.0, 0.0, 0.5, 0.5, 0.1, 0.9],
        )
        .unwrap()
    }

    #[test]
    fn theta_derivation() {
        assert!(GviParams::new(1.0, t(5.0)).unwrap().theta().is_max());
        assert!(GviParams::new(0.3, SoftmaxTemp::MAX)
            .unwrap()
            .theta()
            .is_max());
        assert_eq!(GviParams::new(0.5, t(5.0)).unwrap().theta().value(), 10.0);
        assert!(GviParams::new(1.2, t(5.0)).is_err());
        assert!(GviParams::new(0.2, SoftmaxTemp::MEAN).is_err());
    }

    #[test]
    fn vi_reduction() {
        let mdp = small_mdp();
        let q = QTable::from_rows(&[vec![0.4, -1.0], vec![2.0, 0.1]]).unwrap();
        let step = gvi_step(&mdp, &q, GviParams::value_iteration(), None).unwrap();
        let vi = mdp.backup(&max_value(&q));
        assert!(step.sup_distance(&vi) < 1e-15);
    }

    #[test]
    fn single_action_fixed_point_ignores_alpha() {
        let mdp = Mdp::new(1, 1, 0.5, 1.0, vec![1.0], vec![1.0]).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let p = GviParams::new(alpha, t(3.0)).unwrap();
            let q = gvi_step(&mdp, &QTable::filled(1, 1, 2.0), p, None).unwrap();
            assert_eq!(q.get(0, 0), 2.0);
            let (q, tr) =
                gvi_solve(&mdp, p, &QTable::zeros(1, 1), &SolveOptions::default()).unwrap();
            assert!(tr.converged);
            assert!((q.get(0, 0) - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn al_reduction_matches_direct_formula() {
        // Two-action bandit-style MDP, evaluated independently.
        let mdp = Mdp::new(1, 2, 0.7, 1.0, vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let q = QTable::from_rows(&[vec![0.25, -0.75]]).unwrap();
        let step = gvi_step(
            &mdp,
            &q,
            GviParams::new(1.0, SoftmaxTemp::MAX).unwrap(),
            None,
        )
        .unwrap();
        let max = 0.25;
        let expect = [
            1.0 + 0.7 * max + (0.25 - max),
            0.0 + 0.7 * max + (-0.75 - max),
        ];
        assert!((step.get(0, 0) - expect[0]).abs() < 1e-15);
        assert!((step.get(0, 1) - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_solves_soft_fixed_point() {
        let mdp = small_mdp();
        let p = GviParams::new(0.0, t(2.0)).unwrap();
        let opts = SolveOptions {
            tol: 1e-12,
            ..SolveOptions::default()
        };
        let (q, _) = gvi_solve(&mdp, p, &QTable::zeros(2, 2), &opts).unwrap();
        assert!(bellman_soft(&mdp, &q, t(2.0)).unwrap().sup_distance(&q) < 1e-11);
        let lim = theorem1_limit(&mdp, p).unwrap();
        assert!(lim.sup_distance(&q) < 1e-10);
    }

    #[test]
    fn bandit_limit_gap() {
        let mdp = Mdp::new(1, 2, 0.0, 1.0, vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        for b in [0.5, 3.0, f64::INFINITY] {
            let lim = theorem1_limit(&mdp, GviParams::new(0.5, t(b)).unwrap()).unwrap();
            assert!((lim.get(0, 0) - lim.get(0, 1) - 2.0).abs() < 1e-12);
        }
        assert!(matches!(
            theorem1_limit(&mdp, GviParams::new(1.0, t(1.0)).unwrap()),
            Err(GviError::Unsupported(_))
        ));
    }

    #[test]
    fn divergent_form_is_constant_when_all_actions_optimal() {
        let mdp = Mdp::new(1, 2, 0.5, 1.0, vec![0.4, 0.4], vec![1.0, 1.0]).unwrap();
        let p = GviParams::new(1.0, t(2.0)).unwrap();
        let q0 = QTable::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let a = theorem1_divergent_form(&mdp, p, &q0, 10).unwrap();
        let b = theorem1_divergent_form(&mdp, p, &q0, 10_000).unwrap();
        assert!(a.sup_distance(&b) < 1e-9);
        let v_star = 0.8;
        let m0 = mellowmax_row(q0.row(0), t(2.0));
        assert!((a.get(0, 0) - (v_star + 0.3 - m0)).abs() < 1e-9);
        assert!(
            theorem1_divergent_form(&mdp, GviParams::new(0.5, t(2.0)).unwrap(), &q0, 3).is_err()
        );
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(
            action_gap_threshold(GviParams::new(0.3, SoftmaxTemp::MAX).unwrap(), 0.99, 2),
            0.0
        );
        assert_eq!(
            action_gap_threshold(GviParams::new(1.0, t(10.0)).unwrap(), 0.99, 2),
            0.0
        );
        let v = action_gap_threshold(GviParams::new(0.0, t(10.0)).unwrap(), 0.99, 2);
        assert!((v - 99.0 * 2f64.ln() / 10.0).abs() < 1e-9);
        assert!((v - 6.8622).abs() < 1e-4);
    }

    #[test]
    fn aux_sequence_trivial_length() {
        let mdp = small_mdp();
        let q0 = QTable::zeros(2, 2);
        let seq = q_aux_sequence(&mdp, GviParams::new(0.5, t(1.0)).unwrap(), &q0, &[], 0).unwrap();
        assert_eq!(seq.aux, vec![q0]);
    }

    #[test]
    fn solve_records_snapshots_and_flags_large_q0() {
        let mdp = small_mdp();
        let opts = SolveOptions {
            max_iters: 25,
            tol: 0.0,
            snapshot_stride: Some(10),
        };
        let (_, tr) = gvi_solve(
            &mdp,
            GviParams::new(0.5, t(1.0)).unwrap(),
            &QTable::filled(2, 2, 100.0),
            &opts,
        )
        .unwrap();
        let ks: Vec<usize> = tr.q_history.iter().map(|(k, _)| *k).collect();
        assert_eq!(ks, vec![0, 10, 20, 25]);
        assert_eq!(tr.residuals.len(), 25);
        assert!(tr.q0_exceeds_vmax);
        assert!(!tr.converged);
    }

    #[test]
    fn q_csv_round_trip() {
        let q = QTable::from_rows(&[vec![0.1, -3.0e-9], vec![1.0 / 3.0, 12345.678]]).unwrap();
        let mut buf = Vec::new();
        write_q_csv(&q, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("state,action,value\n0,0,0.1\n"));
        assert_eq!(read_q_csv(&text).unwrap(), q);
    }
}
