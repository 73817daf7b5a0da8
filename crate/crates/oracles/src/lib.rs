//! Brute-force reference implementations for the empo test suites.
//!
//! Nothing here calls the numerical kernels of `empo-core`: log-probabilities,
//! advantages, cosines and gradients are recomputed from the raw data
//! (feature lists, returns, key vectors). Only data types and the
//! environment simulator itself are shared, the latter because the
//! environment search *is* the oracle for environment claims.

pub mod env;
pub mod fixtures;
pub mod grpo;
pub mod policy;
pub mod retrieve;
pub mod stats;

use serde::{Deserialize, Serialize};

pub use env::{oracle_env_optimum, EnvOptimum, SearchError};
pub use grpo::{oracle_advantages, oracle_grpo_step};
pub use policy::{central_difference, naive_logprob, naive_probs};
pub use retrieve::oracle_retrieve;
pub use stats::{mann_whitney_greater, sign_flip_greater};

/// One oracle comparison, serialised to JSON when a check fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub case: String,
    pub expected: f64,
    pub actual: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

impl OracleReport {
    pub fn new(case: impl Into<String>, expected: f64, actual: f64) -> Self {
        let abs_err = (expected - actual).abs();
        let rel_err = abs_err / expected.abs().max(actual.abs()).max(f64::MIN_POSITIVE);
        OracleReport { case: case.into(), expected, actual, abs_err, rel_err }
    }

    /// Relative error, except that two values both within `floor` of zero agree.
    pub fn rel_err_with_floor(&self, floor: f64) -> f64 {
        if self.expected.abs() <= floor && self.actual.abs() <= floor {
            0.0
        } else {
            self.abs_err / self.expected.abs().max(self.actual.abs())
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report is plain data")
    }
}

/// Worst report of a batch by relative error (with `floor`), if any.
pub fn worst(reports: &[OracleReport], floor: f64) -> Option<&OracleReport> {
    reports.iter().max_by(|a, b| a.rel_err_with_floor(floor).total_cmp(&b.rel_err_with_floor(floor)))
}
