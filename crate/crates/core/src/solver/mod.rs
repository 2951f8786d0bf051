//! Sparse acyclic estimation of `A` from `B̂ ≈ (I − A)⁻¹`.
//!
//! Solves `min ‖A‖₁` subject to `h(A) = 0` and `‖B̂(I − A) − I‖_max ≤ λ`
//! by ADMM on the split `Z = B̂(I − A) − I`, with the acyclicity constraint
//! handled by an outer augmented-Lagrangian loop.

pub mod acyclicity;
mod admm;
mod select;

use serde::{Deserialize, Serialize};

use crate::dag::EdgeGraph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use acyclicity::{h_log_det, h_log_det_signed, h_trace_exp, Acyclicity};
pub use admm::admm_solve;
pub use select::{pbic_score, select_lambda, GridPoint, Selection};

/// ADMM and augmented-Lagrangian settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub acyclicity: Acyclicity,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Adapt `rho` to keep primal and dual residuals within a factor 10.
    pub rho_balancing: bool,
    /// Initial multiplier of `h(A)`.
    pub lag_alpha: f64,
    /// Initial coefficient of `h(A)²/2`.
    pub quad_mu: f64,
    pub quad_mu_growth: f64,
    pub quad_mu_max: f64,
    /// Max-norm bound on `Z − (B̂ − B̂A − I)` at exit.
    pub primal_tol: f64,
    /// Bound on `‖ρB̂ΔA‖_F / √p` at exit.
    pub dual_tol: f64,
    pub h_tol: f64,
    pub rel_change_tol: f64,
    /// Relative-change stopping rule of the proximal-gradient A-update.
    pub inner_tol: f64,
    pub max_outer: usize,
    /// ADMM iterations per outer round.
    pub max_admm: usize,
    /// ADMM iterations per λ over all rounds.
    pub max_total_admm: usize,
    /// Proximal-gradient iterations per A-update.
    pub max_inner: usize,
    /// Proximal-gradient iterations per λ over all A-updates.
    pub max_total_inner: usize,
    pub power_iterations: usize,
    /// Hard threshold τ applied to `Â`.
    pub threshold: f64,
    /// PBIC sparsity weight `C_w`.
    pub pbic_weight: f64,
    /// Candidate λ values for PBIC selection.
    pub lambda_grid: Vec<f64>,
    /// Warm-start each grid point from the previous solution (sequential sweep).
    pub warm_start: bool,
    /// Re-solve on a fixed greedy order when residual cycles remain.
    pub polish: bool,
    /// ADMM iterations allowed for each fixed-order re-solve.
    pub polish_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            acyclicity: Acyclicity::default(),
            rho: 1.0,
            rho_balancing: true,
            lag_alpha: 0.0,
            quad_mu: 1.0,
            quad_mu_growth: 10.0,
            quad_mu_max: 1e8,
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            h_tol: 1e-8,
            rel_change_tol: 1e-6,
            inner_tol: 1e-9,
            max_outer: 100,
            max_admm: 2000,
            max_total_admm: 5000,
            max_inner: 5000,
            max_total_inner: 250_000,
            power_iterations: 20,
            threshold: 0.01,
            pbic_weight: 2.0,
            lambda_grid: default_lambda_grid(),
            warm_start: true,
            polish: true,
            polish_iterations: 500,
        }
    }
}

/// 20 log-spaced points on `[1e−3, 1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-3, 1.0, 20)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points)
                .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
                .collect()
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.acyclicity.validate()?;
        let positive = [
            ("rho", self.rho),
            ("quad_mu", self.quad_mu),
            ("quad_mu_growth", self.quad_mu_growth),
            ("quad_mu_max", self.quad_mu_max),
            ("primal_tol", self.primal_tol),
            ("dual_tol", self.dual_tol),
            ("h_tol", self.h_tol),
            ("rel_change_tol", self.rel_change_tol),
            ("inner_tol", self.inner_tol),
            ("pbic_weight", self.pbic_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.lag_alpha >= 0.0) {
            return Err(Error::InvalidParameter(
                "lag_alpha must be nonnegative".into(),
            ));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::InvalidThreshold(self.threshold));
        }
        if self.max_outer == 0
            || self.max_admm == 0
            || self.max_total_admm == 0
            || self.max_inner == 0
            || self.max_total_inner == 0
            || self.polish_iterations == 0
        {
            return Err(Error::InvalidParameter(
                "iteration budgets must be positive".into(),
            ));
        }
        if let Some(bad) = self.lambda_grid.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "lambda grid value {bad} is negative"
            )));
        }
        Ok(())
    }
}

/// One ADMM iteration of the residual trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub outer: usize,
    pub primal: f64,
    pub dual: f64,
    pub h: f64,
    pub objective: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub lambda: f64,
    pub a_hat: Matrix,
    /// `‖B̂(I − Â) − I‖_max`.
    pub feasibility_gap: f64,
    pub h_value: f64,
    /// `‖Â‖₁`.
    pub l1: f64,
    pub outer_iterations: usize,
    pub admm_iterations: usize,
    pub inner_iterations: usize,
    pub trace: Vec<TraceRow>,
    /// `Â` after hard thresholding at τ.
    pub a_thresholded: Matrix,
    pub graph: EdgeGraph,
    /// Trailing windows over which the combined residual grew.
    pub monotonicity_warnings: usize,
    /// Returned by the fixed-order re-solve.
    pub polished: bool,
}

/// Elementwise clamp to `[−λ, λ]`.
pub fn project_linf(m: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(m.map(|x| x.clamp(-lambda, lambda)))
}

/// `B̂(I − A) − I`.
pub fn residual(b_hat: &Matrix, a: &Matrix) -> Matrix {
    let p = b_hat.nrows();
    let id = Matrix::identity(p, p);
    b_hat * (&id - a) - id
}
