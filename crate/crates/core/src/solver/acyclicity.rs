//! Smooth acyclicity functions and their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, Matrix};

/// Which smooth function enforces `h(A) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Acyclicity {
    /// `tr exp(A∘A) − p`.
    TraceExp,
    /// `−log det(uI − A∘A) + p log u`.
    LogDet { u: f64 },
    /// `−log det(uI − A) + p log u`, applied to the signed matrix.
    LogDetSigned { u: f64 },
}

impl Default for Acyclicity {
    fn default() -> Self {
        Acyclicity::LogDet { u: 1.0 }
    }
}

impl Acyclicity {
    pub fn evaluate(&self, a: &Matrix) -> Result<(f64, Matrix)> {
        match *self {
            Acyclicity::TraceExp => h_trace_exp(a),
            Acyclicity::LogDet { u } => h_log_det(a, u),
            Acyclicity::LogDetSigned { u } => h_log_det_signed(a, u),
        }
    }

    pub fn value(&self, a: &Matrix) -> Result<f64> {
        self.evaluate(a).map(|(v, _)| v)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Acyclicity::TraceExp => Ok(()),
            Acyclicity::LogDet { u } | Acyclicity::LogDetSigned { u } => {
                if u > 0.0 && u.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "log-det scale u must be positive, got {u}"
                    )))
                }
            }
        }
    }
}

/// `h(A) = tr exp(A∘A) − p` with gradient `2·exp(A∘A)ᵀ ∘ A`.
pub fn h_trace_exp(a: &Matrix) -> Result<(f64, Matrix)> {
    let p = a.nrows();
    let sq = a.component_mul(a);
    let e = expm(&sq)?;
    let value = e.trace() - p as f64;
    let grad = e.transpose().component_mul(a) * 2.0;
    Ok((value, grad))
}

/// `h(A) = −log det(uI − A∘A) + p log u` with gradient `2·(uI − A∘A)⁻ᵀ ∘ A`.
///
/// The domain is `ρ(A∘A) < u`; for the nonnegative matrix `A∘A` that holds
/// exactly when `uI − A∘A` is invertible with an entrywise nonnegative inverse.
pub fn h_log_det(a: &Matrix, u: f64) -> Result<(f64, Matrix)> {
    let p = a.nrows();
    let m = Matrix::identity(p, p) * u - a.component_mul(a);
    let lu = m.lu();
    let det = lu.determinant();
    if !(det > 0.0) {
        return Err(Error::DomainViolation);
    }
    let inv = lu.try_inverse().ok_or(Error::DomainViolation)?;
    let scale = crate::linalg::max_abs(&inv);
    if inv.iter().any(|&x| x < -1e-12 * scale) {
        return Err(Error::DomainViolation);
    }
    let value = -det.ln() + p as f64 * u.ln();
    let grad = inv.transpose().component_mul(a) * 2.0;
    Ok((value, grad))
}

/// Signed variant `−log det(uI − A) + p log u` with gradient `(uI − A)⁻ᵀ`.
pub fn h_log_det_signed(a: &Matrix, u: f64) -> Result<(f64, Matrix)> {
    let p = a.nrows();
    let m = Matrix::identity(p, p) * u - a;
    let lu = m.lu();
    let det = lu.determinant();
    if !(det > 0.0) {
        return Err(Error::DomainViolation);
    }
    let inv = lu.try_inverse().ok_or(Error::DomainViolation)?;
    let value = -det.ln() + p as f64 * u.ln();
    Ok((value, inv.transpose()))
}
