//! Per-gene Poisson GLM for measurement-layer covariate effects.
//!
//! Model: `log E[X_ij] = log L_i + β_jᵀ C_i + δ_j⁽ᵐ⁾`, one free intercept per
//! environment. The environment intercepts absorb the mean shifts so that
//! `β_j` reflects only the measurement layer.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use tracing::warn;

use crate::dataset::StudyDataset;
use crate::error::{Error, Result};

pub const MAX_IRLS_ITER: usize = 100;
pub const DEVIANCE_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneFit {
    pub beta: Vec<f64>,
    /// One intercept per environment, in dataset order.
    pub intercepts: Vec<f64>,
    pub iterations: usize,
    pub deviance_change: f64,
    pub ridge_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateFit {
    pub genes: Vec<GeneFit>,
}

impl CovariateFit {
    /// Fitted `ŝ_j(C)` for one cell.
    pub fn offset(&self, gene: usize, covariates: nalgebra::DVectorView<'_, f64>) -> f64 {
        self.genes[gene]
            .beta
            .iter()
            .zip(covariates.iter())
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Fits every gene independently.
pub fn fit_covariates(dataset: &StudyDataset) -> Result<CovariateFit> {
    let genes = (0..dataset.p())
        .into_par_iter()
        .map(|j| fit_covariate_glm(dataset, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(CovariateFit { genes })
}

fn poisson_deviance(y: f64, mu: f64) -> f64 {
    let term = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    2.0 * (term - (y - mu))
}

/// Offset Poisson regression for gene `gene` by iteratively reweighted least squares.
pub fn fit_covariate_glm(dataset: &StudyDataset, gene: usize) -> Result<GeneFit> {
    let p = dataset.p();
    if gene >= p {
        return Err(Error::InvalidNode { node: gene, p });
    }
    let q = dataset.q();
    let envs = &dataset.environments;
    let total: u64 = envs.iter().map(|e| e.counts.column(gene).sum()).sum();
    if total == 0 {
        return Err(Error::DegenerateGene {
            gene,
            reason: "all counts are zero".into(),
        });
    }

    if q == 0 {
        // saturated intercepts: closed-form MLE per environment
        let intercepts = envs
            .iter()
            .map(|e| {
                let x: u64 = e.counts.column(gene).sum();
                let l: f64 = e.library_sizes.iter().sum();
                (x as f64 / l).ln()
            })
            .collect();
        return Ok(GeneFit {
            beta: Vec::new(),
            intercepts,
            iterations: 0,
            deviance_change: 0.0,
            ridge_used: false,
        });
    }

    // linear predictor excluding the offset, per environment and cell
    let mut eta: Vec<Vec<f64>> = envs
        .iter()
        .map(|e| {
            e.counts
                .column(gene)
                .iter()
                .zip(&e.library_sizes)
                .map(|(&x, l)| (x as f64 + 0.1).ln() - l.ln())
                .collect()
        })
        .collect();
    let mut beta = DVector::zeros(q);
    let mut intercepts = vec![0.0; envs.len()];
    let mut deviance = f64::INFINITY;
    let mut deviance_change = f64::INFINITY;
    let mut ridge_used = false;

    for iter in 1..=MAX_IRLS_ITER {
        // accumulate the blocks of XᵀWX and XᵀWz, eliminating the indicator block
        let mut cwc = DMatrix::<f64>::zeros(q, q);
        let mut cwz = DVector::<f64>::zeros(q);
        let mut env_w = vec![0.0; envs.len()];
        let mut env_wz = vec![0.0; envs.len()];
        let mut env_wc = vec![DVector::<f64>::zeros(q); envs.len()];
        for (e, env) in envs.iter().enumerate() {
            for i in 0..env.n() {
                let y = env.counts[(i, gene)] as f64;
                let lin = eta[e][i];
                let mu = (lin + env.library_sizes[i].ln()).exp();
                let w = mu;
                let z = lin + (y - mu) / mu;
                let c = env.covariates.row(i).transpose();
                cwc += &c * c.transpose() * w;
                cwz += &c * (w * z);
                env_w[e] += w;
                env_wz[e] += w * z;
                env_wc[e] += &c * w;
            }
        }
        let solve = |ridge: f64| -> Option<(DVector<f64>, Vec<f64>)> {
            let mut reduced = cwc.clone();
            let mut rhs = cwz.clone();
            for e in 0..envs.len() {
                let s = env_w[e] + ridge;
                if !(s > 0.0) {
                    return None;
                }
                reduced -= &env_wc[e] * env_wc[e].transpose() / s;
                rhs -= &env_wc[e] * (env_wz[e] / s);
            }
            let scale = (0..q).map(|k| cwc[(k, k)]).fold(0.0, f64::max);
            for k in 0..q {
                if ridge == 0.0 && !(reduced[(k, k)] > 1e-10 * scale) {
                    return None;
                }
                reduced[(k, k)] += ridge;
            }
            let b = reduced.cholesky()?.solve(&rhs);
            let d = (0..envs.len())
                .map(|e| (env_wz[e] - env_wc[e].dot(&b)) / (env_w[e] + ridge))
                .collect();
            Some((b, d))
        };
        let (b, d) = match solve(0.0) {
            Some(sol) => sol,
            None => {
                if !ridge_used {
                    warn!(gene, "rank-deficient GLM design, adding ridge {RIDGE:e}");
                }
                ridge_used = true;
                solve(RIDGE).ok_or_else(|| {
                    Error::NumericalFailure(format!(
                        "GLM normal equations for gene {gene} are singular"
                    ))
                })?
            }
        };
        beta = b;
        intercepts = d;

        let mut new_dev = 0.0;
        for (e, env) in envs.iter().enumerate() {
            for i in 0..env.n() {
                let lin = env.covariates.row(i).transpose().dot(&beta) + intercepts[e];
                eta[e][i] = lin;
                let mu = (lin + env.library_sizes[i].ln()).exp();
                new_dev += poisson_deviance(env.counts[(i, gene)] as f64, mu);
            }
        }
        if !new_dev.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "GLM for gene {gene} diverged"
            )));
        }
        deviance_change = (new_dev - deviance).abs() / (new_dev.abs() + 0.1);
        deviance = new_dev;
        if deviance_change < DEVIANCE_TOL {
            return Ok(GeneFit {
                beta: beta.iter().copied().collect(),
                intercepts,
                iterations: iter,
                deviance_change,
                ridge_used,
            });
        }
    }
    Err(Error::NotConverged(format!(
        "GLM for gene {gene} after {MAX_IRLS_ITER} iterations, relative deviance change {deviance_change:e}, beta {:?}, intercepts {:?}",
        beta.as_slice(),
        intercepts
    )))
}
