//! Scalar metrics and cross-seed aggregation.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid_input, GviError, Result};
use crate::mdp::QTable;
use crate::operators::row_max;

/// `Σ_s (max_a q̃ − max_a q) / |Σ_s max_a q|`; positive means over-estimation.
pub fn error_ratio(q_est: &QTable, q_true: &QTable) -> Result<f64> {
    q_est.ensure_same_shape(q_true)?;
    let denom: f64 = q_true.rows().map(row_max).sum();
    if denom == 0.0 || !denom.is_finite() {
        return Err(GviError::DegenerateMetric(format!(
            "error ratio denominator is {denom}"
        )));
    }
    let num: f64 = q_est
        .rows()
        .zip(q_true.rows())
        .map(|(e, t)| row_max(e) - row_max(t))
        .sum();
    Ok(num / denom.abs())
}

/// `q(s, 0) − q(s, 1)` per state; two-action tables only.
pub fn action_gap_curve(q: &QTable) -> Result<Vec<f64>> {
    if q.n_actions() != 2 {
        return Err(invalid_input(format!(
            "action gap needs exactly 2 actions, got {}",
            q.n_actions()
        )));
    }
    Ok(q.rows().map(|r| r[0] - r[1]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stat {
    Median,
    Mean,
    P05,
    P95,
}

impl Stat {
    pub fn name(self) -> &'static str {
        match self {
            Stat::Median => "median",
            Stat::Mean => "mean",
            Stat::P05 => "p05",
            Stat::P95 => "p95",
        }
    }

    pub fn of(self, values: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(invalid_input("statistic of an empty sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(GviError::Numerical("NaN in aggregated sample".into()));
        }
        if self == Stat::Mean {
            return Ok(values.iter().sum::<f64>() / values.len() as f64);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(match self {
            Stat::Median => percentile_sorted(&sorted, 0.5),
            Stat::P05 => percentile_sorted(&sorted, 0.05),
            Stat::P95 => percentile_sorted(&sorted, 0.95),
            Stat::Mean => unreachable!(),
        })
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stat {
    type Err = GviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Stat::Median),
            "mean" => Ok(Stat::Mean),
            "p05" => Ok(Stat::P05),
            "p95" => Ok(Stat::P95),
            _ => Err(invalid_input(format!("unknown statistic {s:?}"))),
        }
    }
}

/// Linear interpolation between order statistics at rank `h = (n − 1) p`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Columnwise statistic across equally long rows (one row per seed).
pub fn aggregate(rows: &[Vec<f64>], stat: Stat) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| invalid_input("nothing to aggregate"))?;
    if rows.iter().any(|r| r.len() != first.len()) {
        return Err(invalid_input("aggregated rows differ in length"));
    }
    let mut column = Vec::with_capacity(rows.len());
    (0..first.len())
        .map(|j| {
            column.clear();
            column.extend(rows.iter().map(|r| r[j]));
            stat.of(&column)
        })
        .collect()
}
