//! Latent means from count moments and column recovery of the mixing matrix.
//!
//! Under `X | Z ~ Poisson(S e^Z)` with `Z ~ N(μ, σ²)`:
//! `E[X/S] = e^{μ + σ²/2}` and `E[X(X−1)/S²] = e^{2μ + 2σ²}`, so
//! `σ² = log(m₂/m₁²)` and `μ = log m₁ − σ²/2`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::dataset::{EnvironmentData, StudyDataset};
use crate::error::{Error, Result};
use crate::glm::CovariateFit;
use crate::linalg::Matrix;

/// Which empirical second moment feeds the variance map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondMoment {
    /// `mean(X(X−1)/S²)`: unbiased for `E[e^{2Z}]` with per-cell scales.
    #[default]
    Factorial,
    /// `mean(Y(Y−1))` with `Y = X/S`; equals the factorial form when `S ≡ 1`.
    Scaled,
}

/// Per-cell, per-gene measurement scales `L_i · exp(ŝ_j(C_i))`.
pub fn scales(env: &EnvironmentData, fit: Option<&CovariateFit>) -> Result<Matrix> {
    let (n, p) = env.counts.shape();
    let mut s = Matrix::zeros(n, p);
    for i in 0..n {
        let l = env.library_sizes[i];
        let cov = env.covariates.row(i).transpose();
        for j in 0..p {
            let offset = match fit {
                Some(f) if env.covariates.ncols() > 0 => f.offset(j, cov.as_view()),
                _ => 0.0,
            };
            let v = l * offset.exp();
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidScale {
                    row: i,
                    gene: j,
                    value: v,
                });
            }
            s[(i, j)] = v;
        }
    }
    Ok(s)
}

/// Scaled counts `Ŷ = X / (L·exp(ŝ))` for every environment.
///
/// Environment intercepts from the GLM are deliberately not applied: they
/// carry the mean shift that the later steps estimate.
pub fn scaled_counts(dataset: &StudyDataset, fit: Option<&CovariateFit>) -> Result<Vec<Matrix>> {
    dataset
        .environments
        .iter()
        .map(|env| {
            let s = scales(env, fit)?;
            Ok(Matrix::from_fn(env.n(), env.counts.ncols(), |i, j| {
                env.counts[(i, j)] as f64 / s[(i, j)]
            }))
        })
        .collect()
}

/// Result of the moment map for one gene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentMoment {
    pub mu: f64,
    pub sigma2: f64,
    /// Second moment was nonpositive; `sigma2` floored at zero.
    pub underflow: bool,
}

/// Maps first and second factorial moments to the latent Gaussian mean and variance.
pub fn latent_from_moments(gene: usize, m1: f64, m2: f64) -> Result<LatentMoment> {
    if !(m1 > 0.0) || !m1.is_finite() {
        return Err(Error::DegenerateGene {
            gene,
            reason: format!("first moment {m1} is not positive"),
        });
    }
    let (sigma2, underflow) = if m2 > 0.0 {
        ((m2 / (m1 * m1)).ln().max(0.0), false)
    } else {
        (0.0, true)
    };
    Ok(LatentMoment {
        mu: m1.ln() - 0.5 * sigma2,
        sigma2,
        underflow,
    })
}

/// Latent mean and diagonal variance for one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMoments {
    pub mu: DVector<f64>,
    pub sigma2: DVector<f64>,
    /// Genes whose second moment underflowed.
    pub underflow: Vec<usize>,
}

/// Empirical moment map on one environment's counts `x` with scales `s`.
pub fn estimate_latent_mean(
    x: &crate::dataset::CountMatrix,
    s: &Matrix,
    form: SecondMoment,
) -> Result<EnvMoments> {
    let (n, p) = x.shape();
    if s.shape() != (n, p) {
        return Err(Error::ShapeMismatch(
            "scale matrix shape differs from counts".into(),
        ));
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut mu = DVector::zeros(p);
    let mut sigma2 = DVector::zeros(p);
    let mut underflow = Vec::new();
    for j in 0..p {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            let xv = x[(i, j)] as f64;
            let sv = s[(i, j)];
            m1 += xv / sv;
            m2 += match form {
                SecondMoment::Factorial => xv * (xv - 1.0) / (sv * sv),
                SecondMoment::Scaled => (xv / sv) * (xv / sv - 1.0),
            };
        }
        m1 /= n as f64;
        m2 /= n as f64;
        let lm = latent_from_moments(j, m1, m2)?;
        mu[j] = lm.mu;
        sigma2[j] = lm.sigma2;
        if lm.underflow {
            underflow.push(j);
        }
    }
    Ok(EnvMoments {
        mu,
        sigma2,
        underflow,
    })
}

/// Estimate for one environment together with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvEstimate {
    pub id: String,
    pub target: Option<usize>,
    /// Cells used; `None` for exact population means.
    pub n: Option<usize>,
    pub moments: EnvMoments,
}

/// Latent mean estimates for the control and every intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMeanEstimates {
    pub p: usize,
    pub environments: Vec<EnvEstimate>,
}

impl LatentMeanEstimates {
    /// Wraps exact means (noiseless mode). `means[0]` is the control.
    pub fn from_population(means: &[DVector<f64>], targets: &[usize]) -> Result<Self> {
        if means.len() != targets.len() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} mean vectors for {} interventions",
                means.len(),
                targets.len()
            )));
        }
        let p = means[0].len();
        let mut environments = vec![EnvEstimate {
            id: "control".into(),
            target: None,
            n: None,
            moments: EnvMoments {
                mu: means[0].clone(),
                sigma2: DVector::zeros(p),
                underflow: vec![],
            },
        }];
        for (m, (mu, &t)) in means[1..].iter().zip(targets).enumerate() {
            environments.push(EnvEstimate {
                id: format!("env{}", m + 1),
                target: Some(t),
                n: None,
                moments: EnvMoments {
                    mu: mu.clone(),
                    sigma2: DVector::zeros(p),
                    underflow: vec![],
                },
            });
        }
        Ok(Self { p, environments })
    }

    pub fn control(&self) -> Result<&EnvEstimate> {
        self.environments
            .iter()
            .find(|e| e.target.is_none())
            .ok_or(Error::MissingControl)
    }

    pub fn underflow_count(&self) -> usize {
        self.environments
            .iter()
            .map(|e| e.moments.underflow.len())
            .sum()
    }
}

/// Steps one and two for every environment of a dataset.
pub fn estimate_all(
    dataset: &StudyDataset,
    fit: Option<&CovariateFit>,
    form: SecondMoment,
) -> Result<LatentMeanEstimates> {
    dataset.control()?;
    let environments = dataset
        .environments
        .par_iter()
        .map(|env| {
            let s = scales(env, fit)?;
            let moments = estimate_latent_mean(&env.counts, &s, form).map_err(|e| match e {
                Error::DegenerateGene { gene, reason } => Error::DegenerateGene {
                    gene,
                    reason: format!("{reason} in environment {}", env.id),
                },
                other => other,
            })?;
            if !moments.underflow.is_empty() {
                warn!(env = %env.id, genes = ?moments.underflow, "second moment underflow");
            }
            Ok(EnvEstimate {
                id: env.id.clone(),
                target: env.target,
                n: Some(env.n()),
                moments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentMeanEstimates {
        p: dataset.p(),
        environments,
    })
}

/// When an intervention contrast is strong enough to normalize by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastRule {
    /// Absolute floor on `|Δμ̂_ℓ|`.
    pub abs_eps: f64,
    /// Relative floor `rel_coef · √(log p / n_m)`; skipped for population means.
    pub rel_coef: f64,
}

impl Default for ContrastRule {
    fn default() -> Self {
        Self {
            abs_eps: 1e-6,
            rel_coef: 0.1,
        }
    }
}

impl ContrastRule {
    pub fn floor(&self, p: usize, n: Option<usize>) -> f64 {
        match n {
            Some(n) if n > 0 && p > 1 => self
                .abs_eps
                .max(self.rel_coef * ((p as f64).ln() / n as f64).sqrt()),
            _ => self.abs_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnProvenance {
    pub gene: usize,
    pub environments: Vec<String>,
    /// Weighted mean of `|Δμ̂_ℓ|` over the environments used.
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedEnvironment {
    pub id: String,
    pub target: usize,
    pub contrast: f64,
    pub floor: f64,
}

/// `B̂` with unit diagonal; column `ℓ` from the environments targeting `ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingEstimate {
    pub b_hat: Matrix,
    pub columns: Vec<ColumnProvenance>,
    pub dropped: Vec<DroppedEnvironment>,
}

/// Step three: normalized mean contrasts stacked into `B̂`.
pub fn assemble_b_hat(
    estimates: &LatentMeanEstimates,
    rule: &ContrastRule,
) -> Result<MixingEstimate> {
    let p = estimates.p;
    let control = &estimates.control()?.moments.mu;

    let mut sums = vec![DVector::<f64>::zeros(p); p];
    let mut weights = vec![0.0; p];
    let mut contrast_sums = vec![0.0; p];
    let mut used: Vec<Vec<String>> = vec![Vec::new(); p];
    let mut targeted = vec![false; p];
    let mut dropped = Vec::new();

    for env in &estimates.environments {
        let Some(target) = env.target else { continue };
        if target >= p {
            return Err(Error::InvalidNode { node: target, p });
        }
        targeted[target] = true;
        let delta = &env.moments.mu - control;
        let pivot = delta[target];
        let floor = rule.floor(p, env.n);
        if !(pivot.abs() >= floor) {
            warn!(env = %env.id, target, contrast = pivot, floor, "weak intervention dropped");
            dropped.push(DroppedEnvironment {
                id: env.id.clone(),
                target,
                contrast: pivot,
                floor,
            });
            continue;
        }
        let w = env.n.unwrap_or(1) as f64;
        sums[target] += delta / pivot * w;
        weights[target] += w;
        contrast_sums[target] += pivot.abs() * w;
        used[target].push(env.id.clone());
    }

    let missing: Vec<usize> = (0..p).filter(|&j| !targeted[j]).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIntervention(missing));
    }
    if let Some(gene) = (0..p).find(|&j| weights[j] == 0.0) {
        return Err(Error::WeakIntervention { gene });
    }

    let mut b_hat = Matrix::zeros(p, p);
    let mut columns = Vec::with_capacity(p);
    for l in 0..p {
        let mut col = &sums[l] / weights[l];
        col[l] = 1.0;
        b_hat.set_column(l, &col);
        columns.push(ColumnProvenance {
            gene: l,
            environments: std::mem::take(&mut used[l]),
            contrast: contrast_sums[l] / weights[l],
        });
    }
    Ok(MixingEstimate {
        b_hat,
        columns,
        dropped,
    })
}
