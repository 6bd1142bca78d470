//! Generalized value iteration: operators, solvers, bounds, environments and experiments.

pub mod agent;
pub mod bound;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod gvi;
pub mod mdp;
pub mod operators;
pub mod regsearch;
pub mod rng;

pub use error::{GviError, Result};
pub use gvi::GviParams;
pub use mdp::{Mdp, PolicyTable, QTable, SoftmaxTemp, VTable};

/// Shortest string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:?}")
    }
}
