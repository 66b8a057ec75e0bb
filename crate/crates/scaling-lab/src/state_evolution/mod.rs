//! Fixed-point solvers for the four state-evolution systems.

mod bayes;
mod kde;
mod lasso;
mod quadratic;

use serde::{Deserialize, Serialize};

pub use bayes::{se_bayes_diagonal, se_bayes_spectrum};
pub use kde::{cubic_density_integral, se_quadratic_bayes, silverman_bandwidth, KdeIntegral};
pub use lasso::{lasso_nu_equation, lasso_risk_formula, se_lasso, se_lasso_spectrum, solve_nu, Spectrum};
pub use quadratic::{goe_draws, se_quadratic_erm, se_quadratic_erm_extended, JEstimator, JStats};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagSEOutput {
    pub nu: f64,
    pub delta_hat: f64,
    pub risk: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadSEOutput {
    pub delta: f64,
    pub eps: f64,
    pub risk: f64,
    pub mc_stderr: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BayesSEOutput {
    pub q_hat: f64,
    pub risk: f64,
    pub residual: f64,
}

/// Estimator for `∂J/∂δ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D1Method {
    /// `dνᵢ/dδ = vᵢᵀZvᵢ`.
    Perturbation,
    /// Central difference with step `1e−4·δ` on common draws.
    FiniteDifference,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MCConfig {
    /// GOE draws per estimated quantity.
    pub samples: usize,
    pub seed: u64,
    pub d1_method: D1Method,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig { samples: 10, seed: 0, d1_method: D1Method::Perturbation }
    }
}
