use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use tracing::warn;

use super::{admm_solve, residual, SolverConfig, SolverResult};
use crate::dag::hard_threshold;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Pseudo-BIC: relative residual plus `C_w` times the thresholded edge density.
pub fn pbic_score(b_hat: &Matrix, a_hat: &Matrix, c_w: f64, tau: f64) -> Result<f64> {
    let p = b_hat.nrows();
    let denom = (b_hat - Matrix::identity(p, p)).norm_squared();
    if denom == 0.0 {
        return Err(Error::UndefinedScore("B̂ equals the identity".into()));
    }
    Ok(residual(b_hat, a_hat).norm_squared() / denom + sparsity_term(a_hat, c_w, tau)?)
}

fn sparsity_term(a_hat: &Matrix, c_w: f64, tau: f64) -> Result<f64> {
    let p = a_hat.nrows();
    if p < 2 {
        return Ok(0.0);
    }
    let edges = hard_threshold(a_hat, tau)?
        .iter()
        .filter(|x| **x != 0.0)
        .count();
    Ok(c_w * edges as f64 / (p * (p - 1) / 2) as f64)
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub pbic: Option<f64>,
    pub edges: Option<usize>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub lambda: f64,
    pub result: SolverResult,
    pub grid: Vec<GridPoint>,
}

/// Solves along `grid` and keeps the PBIC minimizer, preferring larger λ on ties.
///
/// With warm starts the grid is swept from the largest λ down, each solve
/// seeded by the previous successful one. The sweep stops at the first λ
/// whose acyclicity stalls, or after two consecutive failures. When `B̂ = I` the residual ratio is 0/0 and only the sparsity
/// term is compared.
pub fn select_lambda(b_hat: &Matrix, grid: &[f64], cfg: &SolverConfig) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("lambda grid is empty".into()));
    }
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(|a, b| b.partial_cmp(a).expect("grid values are finite"));
    order.dedup();

    let score = |res: &SolverResult| -> Result<f64> {
        match pbic_score(b_hat, &res.a_hat, cfg.pbic_weight, cfg.threshold) {
            Err(Error::UndefinedScore(_)) => {
                sparsity_term(&res.a_hat, cfg.pbic_weight, cfg.threshold)
            }
            other => other,
        }
    };

    let timed = |lambda: f64, warm: Option<&Matrix>| {
        let start = Instant::now();
        let res = admm_solve(b_hat, lambda, cfg, warm);
        (res, start.elapsed().as_secs_f64())
    };
    let solves: Vec<(Result<SolverResult>, f64)> = if cfg.warm_start {
        let mut out = Vec::with_capacity(order.len());
        let mut warm: Option<Matrix> = None;
        let mut failures = 0;
        for &lambda in &order {
            let (res, secs) = timed(lambda, warm.as_ref());
            // feasible sets only shrink as λ decreases
            let infeasible = matches!(res, Err(Error::Infeasible(_)));
            match &res {
                Ok(r) => {
                    warm = Some(r.a_hat.clone());
                    failures = 0;
                }
                Err(_) => failures += 1,
            }
            out.push((res, secs));
            if infeasible || failures >= 2 {
                break;
            }
        }
        while out.len() < order.len() {
            out.push((
                Err(Error::NotConverged("skipped below a failed lambda".into())),
                0.0,
            ));
        }
        out
    } else {
        order
            .par_iter()
            .map(|&lambda| timed(lambda, None))
            .collect()
    };

    let mut grid_report = Vec::with_capacity(order.len());
    let mut best: Option<(f64, SolverResult)> = None;
    for (lambda, (res, seconds)) in order.iter().copied().zip(solves) {
        match res.and_then(|r| score(&r).map(|s| (s, r))) {
            Ok((s, r)) => {
                grid_report.push(GridPoint {
                    lambda,
                    pbic: Some(s),
                    edges: Some(r.graph.len()),
                    error: None,
                    seconds,
                });
                // descending order: a later point must be strictly better to win
                let better = match &best {
                    None => true,
                    Some((bs, _)) => s < bs - 1e-12 * bs.abs().max(1.0),
                };
                if better {
                    best = Some((s, r));
                }
            }
            Err(e) => {
                warn!(lambda, error = %e, "grid point failed");
                grid_report.push(GridPoint {
                    lambda,
                    pbic: None,
                    edges: None,
                    error: Some(e.to_string()),
                    seconds,
                });
            }
        }
    }
    let (_, result) =
        best.ok_or_else(|| Error::NotConverged("every lambda grid point failed".into()))?;
    Ok(Selection {
        lambda: result.lambda,
        result,
        grid: grid_report,
    })
}
