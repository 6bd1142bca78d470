//! Value and policy operators over Q-tables: max, mellowmax, Boltzmann and
//! the Bellman operators built on them.
//!
//! Every log-sum-exp subtracts the row maximum before exponentiating. The
//! `β = ∞` and `β = 0` sentinels take explicit branches.

use crate::error::{invalid_input, invalid_param, GviError, Result};
use crate::mdp::{Mdp, PolicyTable, QTable, SoftmaxTemp, VTable};

/// Fixed-point tolerance used by policy evaluation unless overridden.
pub const DEFAULT_EVAL_TOL: f64 = 1e-10;
/// Iteration cap for policy evaluation.
pub const DEFAULT_EVAL_MAX_ITERS: usize = 1_000_000;

const ROOT_TOL: f64 = 1e-10;
const ROOT_MAX_ITERS: usize = 200;

#[inline]
pub fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[inline]
pub fn row_mean(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `m_β` on a single row.
#[inline]
pub fn mellowmax_row(row: &[f64], beta: SoftmaxTemp) -> f64 {
    if beta.is_max() {
        return row_max(row);
    }
    if beta.is_mean() {
        return row_mean(row);
    }
    let b = beta.value();
    let mx = row_max(row);
    let sum: f64 = row.iter().map(|&x| (b * (x - mx)).exp()).sum();
    mx + (sum / row.len() as f64).ln() / b
}

/// `b_β` on a single row, for `β ∈ (0, ∞]`.
#[inline]
pub fn boltzmann_value_row(row: &[f64], beta: f64) -> f64 {
    if beta == f64::INFINITY {
        return row_max(row);
    }
    let mx = row_max(row);
    let (mut num, mut den) = (0.0, 0.0);
    for &x in row {
        let w = (beta * (x - mx)).exp();
        num += w * x;
        den += w;
    }
    num / den
}

/// Writes the Boltzmann distribution at inverse temperature `beta` into `out`.
#[inline]
pub fn softmax_row_into(row: &[f64], beta: f64, out: &mut [f64]) {
    if beta == f64::INFINITY {
        out.fill(0.0);
        out[argmax(row)] = 1.0;
        return;
    }
    let mx = row_max(row);
    let mut den = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (beta * (x - mx)).exp();
        den += *o;
    }
    for o in out.iter_mut() {
        *o /= den;
    }
}

fn require_positive(beta: SoftmaxTemp, what: &str) -> Result<()> {
    if beta.is_mean() {
        return Err(invalid_param(format!("{what} is defined only for β > 0")));
    }
    Ok(())
}

pub fn mellowmax(q: &QTable, beta: SoftmaxTemp) -> Result<VTable> {
    q.ensure_finite()?;
    Ok(mellowmax_unchecked(q, beta))
}

pub(crate) fn mellowmax_unchecked(q: &QTable, beta: SoftmaxTemp) -> VTable {
    VTable::from_raw(q.rows().map(|row| mellowmax_row(row, beta)).collect())
}

pub fn max_value(q: &QTable) -> VTable {
    VTable::from_raw(q.rows().map(row_max).collect())
}

/// Softmax-weighted mean of each row.
pub fn boltzmann_value(q: &QTable, beta: SoftmaxTemp) -> Result<VTable> {
    q.ensure_finite()?;
    require_positive(beta, "the Boltzmann operator")?;
    Ok(VTable::from_raw(
        q.rows()
            .map(|row| boltzmann_value_row(row, beta.value()))
            .collect(),
    ))
}

/// `π(a|s) ∝ exp(β Q(s,a))`; `β = ∞` gives the lowest-index greedy policy.
pub fn boltzmann_policy(q: &QTable, beta: SoftmaxTemp) -> Result<PolicyTable> {
    q.ensure_finite()?;
    require_positive(beta, "the Boltzmann policy")?;
    Ok(boltzmann_policy_unchecked(q, beta.value()))
}

pub(crate) fn boltzmann_policy_unchecked(q: &QTable, beta: f64) -> PolicyTable {
    let (ns, na) = q.shape();
    let mut probs = vec![0.0; ns * na];
    for (s, out) in probs.chunks_mut(na).enumerate() {
        softmax_row_into(q.row(s), beta, out);
    }
    PolicyTable::from_raw(ns, na, probs)
}

pub fn greedy_policy(q: &QTable) -> PolicyTable {
    boltzmann_policy_unchecked(q, f64::INFINITY)
}

/// Inverse temperature `β̂ ≥ 0` at which the Boltzmann value of `row`
/// equals `target`, found by bracket doubling and bisection. Returns
/// `None` for constant rows, where every temperature works.
fn matching_temperature(row: &[f64], target: f64) -> Result<Option<f64>> {
    let (lo_v, hi_v) = row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| {
            (l.min(x), h.max(x))
        });
    let scale = 1.0f64.max(lo_v.abs()).max(hi_v.abs());
    if hi_v - lo_v <= f64::EPSILON * scale {
        return Ok(None);
    }
    let gap = |b: f64| boltzmann_value_row(row, b) - target;
    if gap(0.0) >= 0.0 {
        return Ok(Some(0.0));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut expansions = 0;
    while gap(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 || !hi.is_finite() {
            return Err(GviError::Numerical(format!(
                "no bracket for the mellowmax-matching temperature (target {target})"
            )));
        }
    }
    for _ in 0..ROOT_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = gap(mid);
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (g_lo, g_hi) = (gap(lo).abs(), gap(hi).abs());
    let best = if g_lo <= g_hi { lo } else { hi };
    let residual = g_lo.min(g_hi);
    if residual > ROOT_TOL * scale {
        return Err(GviError::Numerical(format!(
            "mellowmax-matching temperature residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(Some(best))
}

/// A Boltzmann policy whose expected value equals `m_β q` at every state.
///
/// The per-state temperature is bracketed in `[0, β]` because `b_β ≥ m_β`
/// and `b_β` is non-decreasing in `β`.
pub fn mellowmax_policy(q: &QTable, beta: SoftmaxTemp) -> Result<PolicyTable> {
    q.ensure_finite()?;
    require_positive(beta, "the mellowmax policy")?;
    if beta.is_max() {
        return Ok(greedy_policy(q));
    }
    let (ns, na) = q.shape();
    let mut probs = vec![0.0; ns * na];
    for (s, out) in probs.chunks_mut(na).enumerate() {
        let row = q.row(s);
        match matching_temperature(row, mellowmax_row(row, beta))? {
            Some(t) => softmax_row_into(row, t, out),
            None => out.fill(1.0 / na as f64),
        }
    }
    Ok(PolicyTable::from_raw(ns, na, probs))
}

fn check_mdp_shape(mdp: &Mdp, q: &QTable) -> Result<()> {
    if q.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid_input(format!(
            "table shape {:?} does not match MDP ({}, {})",
            q.shape(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// `T^π q = r + γ P^π q`.
pub fn bellman_policy(mdp: &Mdp, q: &QTable, pi: &PolicyTable) -> Result<QTable> {
    check_mdp_shape(mdp, q)?;
    if pi.shape() != q.shape() {
        return Err(invalid_input("policy shape does not match the q-table"));
    }
    Ok(mdp.backup(&pi.expect(q)))
}

/// `T_β q = r + γ P m_β q`; `β = ∞` is the Bellman optimality operator.
pub fn bellman_soft(mdp: &Mdp, q: &QTable, beta: SoftmaxTemp) -> Result<QTable> {
    check_mdp_shape(mdp, q)?;
    q.ensure_finite()?;
    Ok(mdp.backup(&mellowmax_unchecked(q, beta)))
}

pub fn policy_q_value(mdp: &Mdp, pi: &PolicyTable) -> Result<QTable> {
    policy_q_value_with(mdp, pi, DEFAULT_EVAL_TOL, DEFAULT_EVAL_MAX_ITERS)
}

/// `Q^π` by iterating `T^π` from zero until the sup-norm change drops below `tol`.
pub fn policy_q_value_with(
    mdp: &Mdp,
    pi: &PolicyTable,
    tol: f64,
    max_iters: usize,
) -> Result<QTable> {
    if pi.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid_input("policy shape does not match the MDP"));
    }
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = mdp.backup(&pi.expect(&q));
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
    Err(GviError::Convergence {
        what: "policy evaluation",
        iterations: max_iters,
        residual,
    })
}

/// Fixed point of `T_β` by plain iteration from zero.
pub fn soft_fixed_point(
    mdp: &Mdp,
    beta: SoftmaxTemp,
    tol: f64,
    max_iters: usize,
) -> Result<QTable> {
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = mdp.backup(&mellowmax_unchecked(&q, beta));
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
    Err(GviError::Convergence {
        what: "soft value iteration",
        iterations: max_iters,
        residual,
    })
}

/// `Q*` by value iteration.
pub fn optimal_q(mdp: &Mdp) -> Result<QTable> {
    soft_fixed_point(mdp, SoftmaxTemp::MAX, 1e-12, 1_000_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_table(row: &[f64]) -> QTable {
        QTable::from_rows(&[row.to_vec()]).unwrap()
    }

    fn t(b: f64) -> SoftmaxTemp {
        SoftmaxTemp::new(b).unwrap()
    }

    #[test]
    fn mellowmax_examples() {
        for b in [0.0, 0.3, 7.0, f64::INFINITY] {
            let v = mellowmax(&row_table(&[2.5, 2.5, 2.5]), t(b)).unwrap();
            assert!((v.get(0) - 2.5).abs() < 1e-15);
        }
        assert_eq!(
            mellowmax(&row_table(&[1.0, 0.0]), SoftmaxTemp::MAX)
                .unwrap()
                .get(0),
            1.0
        );
        assert_eq!(
            mellowmax(&row_table(&[1.0, 0.0]), SoftmaxTemp::MEAN)
                .unwrap()
                .get(0),
            0.5
        );
        let v = mellowmax(&row_table(&[1.0, 0.0]), t(1.0)).unwrap().get(0);
        let direct = ((1f64.exp() + 1.0) / 2.0).ln();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.620115).abs() < 1e-6);
    }

    #[test]
    fn mellowmax_is_stable_for_large_values() {
        let v = mellowmax(&row_table(&[1000.0, 999.0]), t(50.0))
            .unwrap()
            .get(0);
        assert!(v.is_finite() && v < 1000.0 && v > 999.0);
    }

    #[test]
    fn mellowmax_rejects_non_finite() {
        let q = QTable::from_raw(1, 2, vec![f64::NAN, 0.0]);
        assert!(matches!(
            mellowmax(&q, t(1.0)),
            Err(GviError::InvalidInput(_))
        ));
    }

    #[test]
    fn boltzmann_examples() {
        let v = boltzmann_value(&row_table(&[1.0, 0.0]), t(1.0))
            .unwrap()
            .get(0);
        let e = 1f64.exp();
        assert!((v - e / (e + 1.0)).abs() < 1e-15);
        assert!((v - 0.731059).abs() < 1e-6);
        assert_eq!(
            boltzmann_value(&row_table(&[3.0, 3.0]), t(2.0))
                .unwrap()
                .get(0),
            3.0
        );
        assert!(matches!(
            boltzmann_value(&row_table(&[1.0, 0.0]), SoftmaxTemp::MEAN),
            Err(GviError::InvalidParameter(_))
        ));
    }

    #[test]
    fn boltzmann_policy_examples() {
        let p = boltzmann_policy(&row_table(&[0.0, 0.0]), t(1.0)).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        let p = boltzmann_policy(&row_table(&[1.0, 0.0]), SoftmaxTemp::MAX).unwrap();
        assert_eq!(p.row(0), &[1.0, 0.0]);
        let p = boltzmann_policy(&row_table(&[1.0, 0.0]), t(1.0)).unwrap();
        let e = 1f64.exp();
        assert!((p.prob(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.prob(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
        let p = boltzmann_policy(&row_table(&[2.0, 5.0, 5.0]), SoftmaxTemp::MAX).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn mellowmax_policy_matches_mellowmax() {
        let q = QTable::from_rows(&[
            vec![1.0, 0.0, -2.0],
            vec![4.0, 4.0, 4.0],
            vec![0.3, 0.2, 9.0],
        ])
        .unwrap();
        for b in [0.1, 1.0, 10.0, 300.0] {
            let pi = mellowmax_policy(&q, t(b)).unwrap();
            let m = mellowmax(&q, t(b)).unwrap();
            let e = pi.expect(&q);
            assert!(e.sup_distance(&m) < 1e-10, "beta {b}");
        }
        let pi = mellowmax_policy(&q, t(3.0)).unwrap();
        assert_eq!(pi.row(1), &[1.0 / 3.0; 3]);
        let pi = mellowmax_policy(&q, SoftmaxTemp::MAX).unwrap();
        assert!(pi.expect(&q).sup_distance(&max_value(&q)) < 1e-15);
    }

    #[test]
    fn bellman_examples() {
        let mdp = Mdp::new(1, 1, 0.5, 1.0, vec![1.0], vec![1.0]).unwrap();
        let q = row_table(&[2.0]);
        let pi = PolicyTable::uniform(1, 1);
        assert_eq!(bellman_policy(&mdp, &q, &pi).unwrap().get(0, 0), 2.0);
        let zero_gamma = mdp.with_gamma(0.0).unwrap();
        assert_eq!(
            bellman_soft(&zero_gamma, &row_table(&[17.0]), t(3.0))
                .unwrap()
                .get(0, 0),
            1.0
        );
        assert!(bellman_policy(&mdp, &QTable::zeros(2, 1), &pi).is_err());
    }

    #[test]
    fn geometric_series_policy_value() {
        let mdp = Mdp::new(1, 1, 0.9, 1.0, vec![1.0], vec![1.0]).unwrap();
        let q = policy_q_value(&mdp, &PolicyTable::uniform(1, 1)).unwrap();
        assert!((q.get(0, 0) - 10.0).abs() < 1e-8);
    }

    #[test]
    fn uniform_policy_on_symmetric_mdp_matches_linear_solve() {
        // Two states, two actions: action 0 stays, action 1 swaps. Rewards r(0,·)=1, r(1,·)=0.
        let gamma = 0.8;
        let mdp = Mdp::new(
            2,
            2,
            gamma,
            1.0,
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        let q = policy_q_value(&mdp, &PolicyTable::uniform(2, 2)).unwrap();
        // Uniform policy mixes both states equally: V = (I - γ P_π)^{-1} r_π with
        // P_π = [[.5,.5],[.5,.5]], r_π = [1, 0].  V0 - V1 = 1, V0 + V1 = 1/(1-γ).
        let sum = 1.0 / (1.0 - gamma);
        let (v0, v1) = ((sum + 1.0) / 2.0, (sum - 1.0) / 2.0);
        assert!((q.get(0, 0) - (1.0 + gamma * v0)).abs() < 1e-8);
        assert!((q.get(0, 1) - (1.0 + gamma * v1)).abs() < 1e-8);
        assert!((q.get(1, 0) - gamma * v1).abs() < 1e-8);
        assert!((q.get(1, 1) - gamma * v0).abs() < 1e-8);
    }

    #[test]
    fn policy_evaluation_reports_cap() {
        let mdp = Mdp::new(1, 1, 0.99, 1.0, vec![1.0], vec![1.0]).unwrap();
        let err = policy_q_value_with(&mdp, &PolicyTable::uniform(1, 1), 1e-12, 10).unwrap_err();
        assert!(matches!(err, GviError::Convergence { .. }));
    }

    #[test]
    fn soft_fixed_point_residual() {
        let mdp = Mdp::new(
            2,
            2,
            0.9,
            1.0,
            vec![1.0, 0.0, 0.5, -1.0],
            vec![0.2, 0.8, 1.0, 0.0, 0.5, 0.5, 0.0, 1.0],
        )
        .unwrap();
        let q = soft_fixed_point(&mdp, t(2.0), 1e-12, 100_000).unwrap();
        let tq = bellman_soft(&mdp, &q, t(2.0)).unwrap();
        assert!(tq.sup_distance(&q) < 1e-11);
    }
}
