//! Search for the least favorable noise under a second-moment budget.
//!
//! Every value returned here is the objective of an explicit feasible noise,
//! so `L_hat` is always an upper bound on the true value function.

mod curve;
mod mixture;
mod support;
mod weights;

use serde::{Deserialize, Serialize};

use crate::condexp::ObjectiveReport;
use crate::dist::Noise;
use crate::error::{Error, Result};

pub use curve::{
    eps_grid, trace_l_curve, write_curve_csv, write_curve_dat, LCurvePoint, SolveSummary,
    WitnessSource,
};
pub use mixture::{normalize_mixture, optimize_gaussian_mixture};
pub use support::{
    optimize_support_and_weights, optimize_support_and_weights_with_mode, propose_support,
};
pub use weights::{optimize_weights, optimize_weights_with_mode, weight_gradient};

/// Whether `E[Y^2]` must equal the budget or may fall below it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    Equality,
    Inequality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub step_init: f64,
    /// Stopping threshold on the per-step improvement, relative to `var X`.
    pub tol_obj: f64,
    pub tol_feas: f64,
    pub support_size: usize,
    pub q_min: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iters: 500,
            step_init: 0.1,
            tol_obj: 1e-10,
            tol_feas: 1e-10,
            support_size: 5,
            q_min: 1e-6,
            seed: 42,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.restarts == 0 || self.max_iters == 0 {
            return bad("restarts and max_iters must be positive");
        }
        if !(self.step_init > 0.0 && self.tol_obj > 0.0 && self.tol_feas > 0.0 && self.q_min > 0.0)
        {
            return bad("step_init, tol_obj, tol_feas and q_min must be positive");
        }
        if self.support_size < 2 {
            return bad("support_size must be at least 2");
        }
        if self.q_min >= 1.0 / self.support_size as f64 {
            return bad("q_min must be below 1 / support_size");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveResult {
    pub best_noise: Noise,
    pub report: ObjectiveReport,
    pub epsilon: f64,
    /// `eps^2 - E[Y^2]`.
    pub saturation_gap: f64,
    pub restarts_used: usize,
    pub converged: bool,
    /// `(iteration, J)` of the winning run.
    pub trace: Vec<(usize, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let c = OptimizerConfig {
            q_min: 0.3,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = OptimizerConfig {
            restarts: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = OptimizerConfig {
            support_size: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_from_partial_json() {
        let c: OptimizerConfig = serde_json::from_str(r#"{"restarts": 4}"#).unwrap();
        assert_eq!(c.restarts, 4);
        assert_eq!(c.max_iters, 500);
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"restart": 4}"#).is_err());
    }
}
