//! KL- and entropy-regularized policy search, and its correspondence with GVI.
//!
//! The per-state objective is
//! `Σ_a π (r + γPv) − (1/η) KL(π ‖ π̃) + (1/θ) H(π)` with `η = kl_coeff`,
//! `θ = ent_coeff` and `H` the Shannon entropy. Its maximizer is
//! `π ∝ π̃^α exp(β (r + γPv))` with `α = θ/(θ+η)` and `β = θη/(θ+η)`.

use crate::error::{invalid_input, invalid_param, GviError, Result};
use crate::gvi::GviParams;
use crate::mdp::{Mdp, PolicyTable, QTable, SoftmaxTemp, VTable};
use crate::operators::{mellowmax_unchecked, DEFAULT_EVAL_MAX_ITERS, DEFAULT_EVAL_TOL};

/// Reference-policy entries below this are rejected rather than clipped.
pub const REFERENCE_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegParams {
    pub kl_coeff: f64,
    pub ent_coeff: f64,
}

impl RegParams {
    pub fn new(kl_coeff: f64, ent_coeff: f64) -> Result<Self> {
        for (name, v) in [("kl_coeff", kl_coeff), ("ent_coeff", ent_coeff)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid_param(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(RegParams {
            kl_coeff,
            ent_coeff,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.ent_coeff / (self.ent_coeff + self.kl_coeff)
    }

    pub fn beta(&self) -> f64 {
        self.ent_coeff * self.kl_coeff / (self.ent_coeff + self.kl_coeff)
    }

    /// Inverse map: `ent = β/(1−α)`, `kl = β/α`; needs `0 < α < 1` and finite `β`.
    pub fn from_gvi(params: GviParams) -> Result<Self> {
        let (a, b) = (params.alpha, params.beta);
        if !(a > 0.0 && a < 1.0) || !b.is_finite_positive() {
            return Err(GviError::Unsupported(format!(
                "regularized form needs 0 < alpha < 1 and finite beta, got alpha={a}, beta={b}"
            )));
        }
        RegParams::new(b.value() / a, b.value() / (1.0 - a))
    }

    pub fn gvi_params(&self) -> Result<GviParams> {
        GviParams::new(self.alpha(), SoftmaxTemp::new(self.beta())?)
    }
}

fn check_reference(mdp: &Mdp, reference: &PolicyTable) -> Result<()> {
    if reference.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid_input(
            "reference policy shape does not match the MDP",
        ));
    }
    for s in 0..reference.n_states() {
        if let Some(a) = reference.row(s).iter().position(|&p| p < REFERENCE_FLOOR) {
            return Err(GviError::InfiniteKl {
                state: s,
                action: a,
            });
        }
    }
    Ok(())
}

/// `(1/β) log Σ_a π̃^α exp(β q)` per state, max-shifted.
fn log_partition(q: &QTable, reference: &PolicyTable, alpha: f64, beta: f64) -> VTable {
    let mut buf = vec![0.0; q.n_actions()];
    VTable::from_raw(
        (0..q.n_states())
            .map(|s| {
                for ((x, &v), &p) in buf.iter_mut().zip(q.row(s)).zip(reference.row(s)) {
                    *x = alpha * p.ln() + beta * v;
                }
                let mx = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (mx + buf.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()) / beta
            })
            .collect(),
    )
}

/// `π ∝ π̃^α exp(β q)` per state.
fn reweighted_policy(q: &QTable, reference: &PolicyTable, alpha: f64, beta: f64) -> PolicyTable {
    let (ns, na) = q.shape();
    let mut probs = Vec::with_capacity(ns * na);
    for s in 0..ns {
        let logits: Vec<f64> = q
            .row(s)
            .iter()
            .zip(reference.row(s))
            .map(|(&v, &p)| alpha * p.ln() + beta * v)
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        probs.extend(w.iter().map(|x| x / z));
    }
    PolicyTable::from_raw(ns, na, probs)
}

/// `−(1/η) KL(π ‖ π̃) + (1/θ) H(π)` per state.
fn regularizer(pi: &PolicyTable, reference: &PolicyTable, reg: RegParams) -> Result<VTable> {
    let mut out = Vec::with_capacity(pi.n_states());
    for s in 0..pi.n_states() {
        let mut kl = 0.0;
        let mut ent = 0.0;
        for (a, (&p, &r)) in pi.row(s).iter().zip(reference.row(s)).enumerate() {
            if p <= 0.0 {
                continue;
            }
            if r < REFERENCE_FLOOR {
                return Err(GviError::InfiniteKl {
                    state: s,
                    action: a,
                });
            }
            kl += p * (p.ln() - r.ln());
            ent -= p * p.ln();
        }
        out.push(-kl / reg.kl_coeff + ent / reg.ent_coeff);
    }
    Ok(VTable::from_raw(out))
}

/// The bracketed per-state objective, evaluated at a given policy.
pub fn regularized_objective(
    mdp: &Mdp,
    v: &VTable,
    pi: &PolicyTable,
    reference: &PolicyTable,
    reg: RegParams,
) -> Result<VTable> {
    let bonus = regularizer(pi, reference, reg)?;
    Ok(pi.expect(&mdp.backup(v)).zip_with(&bonus, |x, b| x + b))
}

/// Regularized state value of `pi` against `reference`, by fixed-point iteration.
pub fn regularized_value(
    mdp: &Mdp,
    pi: &PolicyTable,
    reference: &PolicyTable,
    reg: RegParams,
) -> Result<VTable> {
    if pi.shape() != (mdp.n_states(), mdp.n_actions()) || reference.shape() != pi.shape() {
        return Err(invalid_input("policy shape does not match the MDP"));
    }
    let bonus = regularizer(pi, reference, reg)?;
    let mut v = VTable::zeros(mdp.n_states());
    let mut residual = f64::INFINITY;
    for _ in 0..DEFAULT_EVAL_MAX_ITERS {
        let next = pi.expect(&mdp.backup(&v)).zip_with(&bonus, |x, b| x + b);
        residual = next.sup_distance(&v);
        v = next;
        if residual < DEFAULT_EVAL_TOL {
            return Ok(v);
        }
    }
    Err(GviError::Convergence {
        what: "regularized policy evaluation",
        iterations: DEFAULT_EVAL_MAX_ITERS,
        residual,
    })
}

/// `L v = (1/β) log Σ_a π̃^α exp(β (r + γPv))`.
pub fn l_operator(
    mdp: &Mdp,
    v: &VTable,
    reference: &PolicyTable,
    reg: RegParams,
) -> Result<VTable> {
    check_reference(mdp, reference)?;
    Ok(log_partition(
        &mdp.backup(v),
        reference,
        reg.alpha(),
        reg.beta(),
    ))
}

/// The maximizer of the bracketed objective at `v`.
pub fn optimal_reg_policy(
    mdp: &Mdp,
    v: &VTable,
    reference: &PolicyTable,
    reg: RegParams,
) -> Result<PolicyTable> {
    check_reference(mdp, reference)?;
    Ok(reweighted_policy(
        &mdp.backup(v),
        reference,
        reg.alpha(),
        reg.beta(),
    ))
}

/// Fixed point of `L` for a fixed reference, iterated from zero to `tol`.
pub fn l_fixed_point(
    mdp: &Mdp,
    reference: &PolicyTable,
    reg: RegParams,
    tol: f64,
    max_iters: usize,
) -> Result<VTable> {
    check_reference(mdp, reference)?;
    let (alpha, beta) = (reg.alpha(), reg.beta());
    let mut v = VTable::zeros(mdp.n_states());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = log_partition(&mdp.backup(&v), reference, alpha, beta);
        residual = next.sup_distance(&v);
        v = next;
        if residual < tol {
            return Ok(v);
        }
    }
    Err(GviError::Convergence {
        what: "regularized Bellman fixed point",
        iterations: max_iters,
        residual,
    })
}

#[derive(Clone, Debug)]
pub struct PiLikeResult {
    pub value: VTable,
    pub policy: PolicyTable,
    /// Value and policy after each outer iteration.
    pub history: Vec<(VTable, PolicyTable)>,
}

/// Alternates solving `V = L V` for the current reference and replacing the
/// reference by the maximizing policy; starts from the uniform policy.
pub fn pi_like_solve(mdp: &Mdp, reg: RegParams, outer_iters: usize) -> Result<PiLikeResult> {
    let mut reference = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
    let mut value = VTable::zeros(mdp.n_states());
    let mut history = Vec::with_capacity(outer_iters);
    for _ in 0..outer_iters {
        value = l_fixed_point(
            mdp,
            &reference,
            reg,
            DEFAULT_EVAL_TOL,
            DEFAULT_EVAL_MAX_ITERS,
        )?;
        reference = optimal_reg_policy(mdp, &value, &reference, reg)?;
        history.push((value.clone(), reference.clone()));
    }
    Ok(PiLikeResult {
        value,
        policy: reference,
        history,
    })
}

/// Which policy-improvement rule `vi_like_step` applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Improvement {
    /// `π_{k+1} = π_k^α exp(β(r + γPV_k)) / exp(βV_{k+1})`; the one that matches GVI.
    #[default]
    Modified,
    /// `π_{k+1} ∝ π_k^α exp(β(r + γPV_{k+1}))`, renormalized. Comparison only.
    Unmodified,
}

/// `V_{k+1} = L_{π_k} V_k` followed by the chosen improvement rule.
pub fn vi_like_step(
    mdp: &Mdp,
    v: &VTable,
    pi: &PolicyTable,
    reg: RegParams,
    rule: Improvement,
) -> Result<(VTable, PolicyTable)> {
    check_reference(mdp, pi)?;
    let (alpha, beta) = (reg.alpha(), reg.beta());
    let q = mdp.backup(v);
    let next_v = log_partition(&q, pi, alpha, beta);
    let next_pi = match rule {
        Improvement::Modified => {
            let (ns, na) = q.shape();
            let mut probs = Vec::with_capacity(ns * na);
            for s in 0..ns {
                let norm = beta * next_v.get(s);
                probs.extend(
                    q.row(s)
                        .iter()
                        .zip(pi.row(s))
                        .map(|(&x, &p)| (alpha * p.ln() + beta * x - norm).exp()),
                );
            }
            PolicyTable::from_raw(ns, na, probs)
        }
        Improvement::Unmodified => reweighted_policy(&mdp.backup(&next_v), pi, alpha, beta),
    };
    Ok((next_v, next_pi))
}

/// `Q_{k+1} = r + γPV_k + (α/β) log π_k + (α−γ)/((1−γ)β) · log|A|`.
pub fn gvi_equivalence(
    mdp: &Mdp,
    v_k: &VTable,
    pi_k: &PolicyTable,
    reg: RegParams,
) -> Result<QTable> {
    check_reference(mdp, pi_k)?;
    let (alpha, beta, gamma) = (reg.alpha(), reg.beta(), mdp.gamma());
    let shift = (alpha - gamma) / ((1.0 - gamma) * beta) * (mdp.n_actions() as f64).ln();
    let q = mdp.backup(v_k);
    let logp = QTable::from_raw(
        q.n_states(),
        q.n_actions(),
        pi_k.probs().iter().map(|p| p.ln()).collect(),
    );
    Ok(q.zip_with(&logp, |x, l| x + alpha / beta * l + shift))
}

/// `V_{k+1} − m_β Q_{k+1}`, which should equal `(1−α) log|A| / ((1−γ)β)`.
pub fn value_offset(v_next: &VTable, q_next: &QTable, reg: RegParams) -> Result<VTable> {
    let m = mellowmax_unchecked(q_next, SoftmaxTemp::new(reg.beta())?);
    Ok(v_next.zip_with(&m, |a, b| a - b))
}

pub fn expected_value_offset(reg: RegParams, gamma: f64, n_actions: usize) -> f64 {
    (1.0 - reg.alpha()) * (n_actions as f64).ln() / ((1.0 - gamma) * reg.beta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{boltzmann_policy, mellowmax, policy_q_value};

    fn bandit(rewards: &[f64], gamma: f64) -> Mdp {
        let n = rewards.len();
        Mdp::new(
            1,
            n,
            gamma,
            rewards.iter().fold(0.0, |m: f64, r| m.max(r.abs())),
            rewards.to_vec(),
            vec![1.0; n],
        )
        .unwrap()
    }

    fn two_state() -> Mdp {
        Mdp::new(
            2,
            3,
            0.9,
            1.0,
            vec![1.0, 0.0, -0.3, 0.2, 0.5, -1.0],
            vec![0.3, 0.7, 1.0, 0.0, 0.5, 0.5, 0.1, 0.9, 0.0, 1.0, 0.6, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn parameter_map() {
        let reg = RegParams::new(3.0, 1.0).unwrap();
        assert!((reg.alpha() - 0.25).abs() < 1e-15);
        assert!((reg.beta() - 0.75).abs() < 1e-15);
        assert!(RegParams::new(0.0, 1.0).is_err());
        assert!(RegParams::new(1.0, f64::NAN).is_err());
        let back = RegParams::from_gvi(reg.gvi_params().unwrap()).unwrap();
        assert!((back.kl_coeff - 3.0).abs() < 1e-12 && (back.ent_coeff - 1.0).abs() < 1e-12);
        assert!(RegParams::from_gvi(GviParams::value_iteration()).is_err());
    }

    #[test]
    fn uniform_reference_value() {
        let mdp = two_state();
        let reg = RegParams::new(2.0, 5.0).unwrap();
        let u = PolicyTable::uniform(2, 3);
        let v = regularized_value(&mdp, &u, &u, reg).unwrap();
        let v_pi = u.expect(&policy_q_value(&mdp, &u).unwrap());
        let bonus = 3f64.ln() / (5.0 * 0.1);
        for s in 0..2 {
            assert!((v.get(s) - v_pi.get(s) - bonus).abs() < 1e-8);
        }
    }

    #[test]
    fn vanishing_regularizers() {
        let mdp = two_state();
        let reg = RegParams::new(1e8, 1e8).unwrap();
        let pi = PolicyTable::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]]).unwrap();
        let r = PolicyTable::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        let v = regularized_value(&mdp, &pi, &r, reg).unwrap();
        let v_pi = pi.expect(&policy_q_value(&mdp, &pi).unwrap());
        assert!(v.sup_distance(&v_pi) < 1e-6);
    }

    #[test]
    fn scalar_case() {
        // One state, two actions: V = (p·r + bonus)/(1 − γ).
        let mdp = bandit(&[1.0, -0.5], 0.5);
        let reg = RegParams::new(2.0, 4.0).unwrap();
        let pi = PolicyTable::from_rows(&[vec![0.25, 0.75]]).unwrap();
        let r = PolicyTable::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let kl = 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        let h = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let expect = (0.25 - 0.375 - kl / 2.0 + h / 4.0) / 0.5;
        assert!((regularized_value(&mdp, &pi, &r, reg).unwrap().get(0) - expect).abs() < 1e-9);
    }

    #[test]
    fn zero_reference_mass() {
        let mdp = bandit(&[0.0, 1.0], 0.5);
        let reg = RegParams::new(1.0, 1.0).unwrap();
        let pi = PolicyTable::uniform(1, 2);
        let r = PolicyTable::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            regularized_value(&mdp, &pi, &r, reg),
            Err(GviError::InfiniteKl {
                state: 0,
                action: 1
            })
        ));
        assert!(matches!(
            l_operator(&mdp, &VTable::zeros(1), &r, reg),
            Err(GviError::InfiniteKl { .. })
        ));
        // No mass under π there means no KL penalty.
        let det = PolicyTable::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(regularized_value(&mdp, &det, &r, reg).is_ok());
    }

    #[test]
    fn uniform_reference_l_is_shifted_mellowmax() {
        let mdp = two_state();
        let reg = RegParams::new(1.5, 0.7).unwrap();
        let u = PolicyTable::uniform(2, 3);
        let v = VTable::new(vec![0.4, -1.2]).unwrap();
        let l = l_operator(&mdp, &v, &u, reg).unwrap();
        let m = mellowmax(&mdp.backup(&v), SoftmaxTemp::new(reg.beta()).unwrap()).unwrap();
        let shift = (1.0 - reg.alpha()) * 3f64.ln() / reg.beta();
        for s in 0..2 {
            assert!((l.get(s) - m.get(s) - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_policy_attains_l() {
        let mdp = two_state();
        let reg = RegParams::new(0.8, 2.0).unwrap();
        let r = PolicyTable::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        let v = VTable::new(vec![0.3, 1.1]).unwrap();
        let pi = optimal_reg_policy(&mdp, &v, &r, reg).unwrap();
        for s in 0..2 {
            assert!((pi.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let obj = regularized_objective(&mdp, &v, &pi, &r, reg).unwrap();
        assert!(obj.sup_distance(&l_operator(&mdp, &v, &r, reg).unwrap()) < 1e-8);
    }

    #[test]
    fn constant_rows_give_powered_reference() {
        let mdp = bandit(&[0.5, 0.5, 0.5], 0.9);
        let reg = RegParams::new(1.0, 3.0).unwrap();
        let r = PolicyTable::from_rows(&[vec![0.6, 0.3, 0.1]]).unwrap();
        let pi = optimal_reg_policy(&mdp, &VTable::zeros(1), &r, reg).unwrap();
        let w: Vec<f64> = r.row(0).iter().map(|p| p.powf(0.75)).collect();
        let z: f64 = w.iter().sum();
        for (p, x) in pi.row(0).iter().zip(&w) {
            assert!((p - x / z).abs() < 1e-12);
        }
    }

    #[test]
    fn small_alpha_is_boltzmann() {
        let mdp = two_state();
        // ent ≪ kl  ⇒  α ≈ 0, β ≈ ent.
        let reg = RegParams::new(1e12, 2.0).unwrap();
        let r = PolicyTable::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        let v = VTable::new(vec![0.3, 1.1]).unwrap();
        let pi = optimal_reg_policy(&mdp, &v, &r, reg).unwrap();
        let b = boltzmann_policy(&mdp.backup(&v), SoftmaxTemp::new(reg.beta()).unwrap()).unwrap();
        assert!(pi.sup_distance(&b) < 1e-9);
    }

    #[test]
    fn vi_like_scalar_first_step() {
        let mdp = bandit(&[1.0, 0.0, -2.0], 0.8);
        let reg = RegParams::new(2.0, 2.0).unwrap();
        let (a, b) = (reg.alpha(), reg.beta());
        let (v1, pi1) = vi_like_step(
            &mdp,
            &VTable::zeros(1),
            &PolicyTable::uniform(1, 3),
            reg,
            Improvement::Modified,
        )
        .unwrap();
        let expect = (1.0 / b)
            * [1.0, 0.0, -2.0]
                .iter()
                .map(|r: &f64| (1.0f64 / 3.0).powf(a) * (b * r).exp())
                .sum::<f64>()
                .ln();
        assert!((v1.get(0) - expect).abs() < 1e-12);
        assert!((pi1.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (_, pi_u) = vi_like_step(
            &mdp,
            &VTable::zeros(1),
            &PolicyTable::uniform(1, 3),
            reg,
            Improvement::Unmodified,
        )
        .unwrap();
        assert!((pi_u.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vi_like_consistency_and_equivalence() {
        let mdp = two_state();
        let reg = RegParams::new(1.3, 2.1).unwrap();
        let beta = SoftmaxTemp::new(reg.beta()).unwrap();
        let expect = expected_value_offset(reg, mdp.gamma(), 3);
        let mut v = VTable::zeros(2);
        let mut pi = PolicyTable::uniform(2, 3);
        let mut q_gvi: Option<QTable> = None;
        let params = reg.gvi_params().unwrap();
        for _ in 0..30 {
            let q_next = gvi_equivalence(&mdp, &v, &pi, reg).unwrap();
            let (v_next, pi_next) =
                vi_like_step(&mdp, &v, &pi, reg, Improvement::Modified).unwrap();
            for x in value_offset(&v_next, &q_next, reg).unwrap().values() {
                assert!((x - expect).abs() < 1e-9);
            }
            assert!(pi_next.sup_distance(&boltzmann_policy(&q_next, beta).unwrap()) < 1e-9);
            q_gvi = Some(match q_gvi {
                None => q_next.clone(),
                Some(q) => crate::gvi::gvi_step(&mdp, &q, params, None).unwrap(),
            });
            assert!(q_gvi.as_ref().unwrap().sup_distance(&q_next) < 1e-8);
            v = v_next;
            pi = pi_next;
        }
    }

    #[test]
    fn pi_like_single_outer_iteration() {
        let mdp = two_state();
        let reg = RegParams::new(1.0, 1.0).unwrap();
        let res = pi_like_solve(&mdp, reg, 1).unwrap();
        let u = PolicyTable::uniform(2, 3);
        // Iterate L by hand.
        let mut v = VTable::zeros(2);
        for _ in 0..2000 {
            v = l_operator(&mdp, &v, &u, reg).unwrap();
        }
        assert!(res.value.sup_distance(&v) < 1e-9);
        assert_eq!(res.history.len(), 1);
    }
}
