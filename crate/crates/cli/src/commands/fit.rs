use std::path::Path;
use std::time::Instant;

use latent_dag::dataset::StudyDataset;
use latent_dag::ingest::{load_study, validate_design, CoverageReport};
use latent_dag::io::{
    write_edge_list, write_estimates_csv, write_json, write_matrix_csv, write_rows,
};
use latent_dag::pipeline::{fit_dataset, fit_population, StageTimings};
use latent_dag::solver::GridPoint;
use serde::Serialize;
use tracing::{info, warn};

use super::write_config_echo;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::truth::read_truth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitFlags {
    /// Use the exact latent means of the stored truth instead of the counts.
    pub noiseless: bool,
    /// Drop untargeted and all-zero genes instead of aborting.
    pub restrict_genes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitWarnings {
    pub weak_interventions: usize,
    pub second_moment_underflow: usize,
    pub ridge_genes: usize,
    pub failed_grid_points: usize,
    pub monotonicity: usize,
    pub dropped_genes: Vec<String>,
}

/// Deterministic part of the fit outputs; timings live in `timings.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub config: RunConfig,
    pub noiseless: bool,
    pub genes: Vec<String>,
    pub coverage: Option<CoverageReport>,
    pub lambda_grid: Vec<f64>,
    pub lambda: f64,
    pub threshold: f64,
    pub edges: usize,
    pub feasibility_gap: f64,
    pub h_value: f64,
    pub l1: f64,
    pub outer_iterations: usize,
    pub admm_iterations: usize,
    pub inner_iterations: usize,
    pub polished: bool,
    pub warnings: FitWarnings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Timings {
    load: f64,
    #[serde(flatten)]
    stages: StageTimings,
    total: f64,
}

fn prepare(
    dataset: StudyDataset,
    flags: FitFlags,
) -> CliResult<(StudyDataset, CoverageReport, Vec<String>)> {
    let coverage = validate_design(&dataset);
    let zero = dataset.zero_genes();
    if coverage.is_complete() && zero.is_empty() {
        return Ok((dataset, coverage, vec![]));
    }
    if !flags.restrict_genes {
        if !coverage.is_complete() {
            return Err(CliError::Usage(format!(
                "genes without an intervention: {} (rerun with --restrict-genes to drop them)",
                coverage.untargeted_names.join(", ")
            )));
        }
        let names: Vec<&str> = zero
            .iter()
            .map(|&g| dataset.gene_names[g].as_str())
            .collect();
        return Err(CliError::Usage(format!(
            "genes with zero total count: {} (rerun with --restrict-genes to drop them)",
            names.join(", ")
        )));
    }
    let keep: Vec<usize> = (0..dataset.p())
        .filter(|g| !coverage.untargeted.contains(g) && !zero.contains(g))
        .collect();
    let dropped: Vec<String> = (0..dataset.p())
        .filter(|g| !keep.contains(g))
        .map(|g| dataset.gene_names[g].clone())
        .collect();
    warn!(genes = ?dropped, "dropping genes before estimation");
    let restricted = dataset.restrict_genes(&keep)?;
    Ok((restricted, coverage, dropped))
}

/// Runs the estimator on the dataset in `data` and writes every artifact to `out`.
pub fn cmd_fit(data: &Path, out: &Path, cfg: &RunConfig, flags: FitFlags) -> CliResult<FitReport> {
    cfg.validate()?;
    let total = Instant::now();
    let (fit, genes, coverage, dropped, load) = if flags.noiseless {
        let truth = read_truth(data)?;
        let spec = truth.spec()?;
        let load = total.elapsed().as_secs_f64();
        let fit = fit_population(&spec, &truth.design, &cfg.fit)?;
        (fit, truth.genes, None, vec![], load)
    } else {
        let dataset = load_study(data)?;
        let (dataset, coverage, dropped) = prepare(dataset, flags)?;
        let load = total.elapsed().as_secs_f64();
        let fit = fit_dataset(&dataset, &cfg.fit)?;
        (fit, dataset.gene_names, Some(coverage), dropped, load)
    };

    let sel = &fit.selection;
    let res = &sel.result;
    write_estimates_csv(&out.join("mu_hat.csv"), &fit.estimates, &genes)?;
    write_matrix_csv(&out.join("b_hat.csv"), &fit.mixing.b_hat, &genes)?;
    write_matrix_csv(&out.join("a_hat.csv"), &res.a_hat, &genes)?;
    write_matrix_csv(&out.join("a_thresholded.csv"), &res.a_thresholded, &genes)?;
    write_edge_list(&out.join("edges.csv"), &res.a_thresholded, &genes)?;
    write_rows(&out.join("trace.csv"), &res.trace)?;
    write_rows(&out.join("lambda_grid.csv"), &grid_rows(&sel.grid))?;
    write_json(
        &out.join("columns.json"),
        &serde_json::json!({ "columns": fit.mixing.columns, "dropped": fit.mixing.dropped }),
    )?;
    if let Some(cov) = &fit.covariate_fit {
        write_json(&out.join("covariate_fit.json"), cov)?;
    }

    let report = FitReport {
        config: cfg.clone(),
        noiseless: flags.noiseless,
        genes,
        coverage,
        lambda_grid: cfg.fit.solver.lambda_grid.clone(),
        lambda: sel.lambda,
        threshold: cfg.fit.solver.threshold,
        edges: res.graph.len(),
        feasibility_gap: res.feasibility_gap,
        h_value: res.h_value,
        l1: res.l1,
        outer_iterations: res.outer_iterations,
        admm_iterations: res.admm_iterations,
        inner_iterations: res.inner_iterations,
        polished: res.polished,
        warnings: FitWarnings {
            weak_interventions: fit.mixing.dropped.len(),
            second_moment_underflow: fit.estimates.underflow_count(),
            ridge_genes: fit
                .covariate_fit
                .as_ref()
                .map_or(0, |c| c.genes.iter().filter(|g| g.ridge_used).count()),
            failed_grid_points: sel.grid.iter().filter(|g| g.error.is_some()).count(),
            monotonicity: res.monotonicity_warnings,
            dropped_genes: dropped,
        },
    };
    write_json(&out.join("report.json"), &report)?;
    write_config_echo(out, cfg)?;
    let timings = Timings {
        load,
        stages: fit.timings,
        total: total.elapsed().as_secs_f64(),
    };
    write_json(&out.join("timings.json"), &timings)?;
    info!(lambda = report.lambda, edges = report.edges, out = %out.display(), "fit written");
    Ok(report)
}

#[derive(Serialize)]
struct GridRow<'a> {
    lambda: f64,
    pbic: Option<f64>,
    edges: Option<usize>,
    error: Option<&'a str>,
}

fn grid_rows(grid: &[GridPoint]) -> Vec<GridRow<'_>> {
    grid.iter()
        .map(|g| GridRow {
            lambda: g.lambda,
            pbic: g.pbic,
            edges: g.edges,
            error: g.error.as_deref(),
        })
        .collect()
}
