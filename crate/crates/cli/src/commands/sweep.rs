use std::path::Path;

use latent_dag::dag::{hard_threshold, EdgeGraph};
use latent_dag::eval::edge_metrics;
use latent_dag::io::{write_edge_list, write_json, write_matrix_csv, write_rows};
use latent_dag::pipeline::{fit_dataset, FitOptions};
use latent_dag::seed::child_seed;
use latent_dag::synth::{gen_study, SynthConfig};
use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use super::write_config_echo;
use crate::config::RunConfig;
use crate::error::CliResult;

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub degree: f64,
    pub alpha: f64,
    pub n_intervention: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub cell: usize,
    pub degree: f64,
    pub alpha: f64,
    pub n_intervention: usize,
    pub replicate: usize,
    pub seed: u64,
    pub true_edges: Option<usize>,
    pub edges: Option<usize>,
    pub lambda: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub shd: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub degree: f64,
    pub alpha: f64,
    pub n_intervention: usize,
    pub replicates: usize,
    pub failures: usize,
    pub f1_mean: Option<f64>,
    pub f1_sd: Option<f64>,
    pub shd_mean: Option<f64>,
    pub shd_sd: Option<f64>,
    pub precision_mean: Option<f64>,
    pub recall_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub runs: Vec<RunRow>,
    pub cells: Vec<CellSummary>,
}

pub fn cells(cfg: &RunConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &degree in &cfg.sweep.degrees {
        for &alpha in &cfg.sweep.alphas {
            for &n_intervention in &cfg.sweep.n_interventions {
                out.push(Cell {
                    index: out.len(),
                    degree,
                    alpha,
                    n_intervention,
                });
            }
        }
    }
    out
}

/// Seed of replicate `r`; shared by every cell so that cells compare the
/// same graphs and noise covariances.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    child_seed(master, replicate as u64)
}

pub fn cell_synth(base: &SynthConfig, cell: &Cell) -> SynthConfig {
    SynthConfig {
        degree: cell.degree,
        alpha: cell.alpha,
        n_intervention: cell.n_intervention,
        ..base.clone()
    }
}

/// Simulate, fit and score one replicate in memory.
pub fn run_replicate(
    synth: &SynthConfig,
    fit: &FitOptions,
    seed: u64,
    keep: Option<&Path>,
) -> latent_dag::Result<(usize, f64, EdgeGraph, latent_dag::eval::MetricsReport)> {
    let study = gen_study(synth, seed)?;
    let truth = study.spec.dag.graph();
    let out = fit_dataset(&study.dataset, fit)?;
    let res = &out.selection.result;
    let estimate = EdgeGraph::from_weights(&hard_threshold(&res.a_hat, fit.solver.threshold)?);
    let metrics = edge_metrics(&estimate, &truth)?;
    if let Some(dir) = keep {
        let names = &study.dataset.gene_names;
        write_matrix_csv(&dir.join("a_true.csv"), study.spec.dag.weights(), names)?;
        write_matrix_csv(&dir.join("b_hat.csv"), &out.mixing.b_hat, names)?;
        write_matrix_csv(&dir.join("a_hat.csv"), &res.a_hat, names)?;
        write_edge_list(&dir.join("edges.csv"), &res.a_thresholded, names)?;
        write_json(&dir.join("metrics.json"), &metrics)?;
    }
    Ok((truth.len(), out.selection.lambda, estimate, metrics))
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1)
        .then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

pub fn summarize(cells: &[Cell], runs: &[RunRow]) -> Vec<CellSummary> {
    cells
        .iter()
        .map(|c| {
            let rows: Vec<&RunRow> = runs.iter().filter(|r| r.cell == c.index).collect();
            let ok: Vec<&&RunRow> = rows.iter().filter(|r| r.error.is_none()).collect();
            let f1: Vec<f64> = ok.iter().filter_map(|r| r.f1).collect();
            let shd: Vec<f64> = ok.iter().filter_map(|r| r.shd.map(|s| s as f64)).collect();
            let prec: Vec<f64> = ok.iter().filter_map(|r| r.precision).collect();
            let rec: Vec<f64> = ok.iter().filter_map(|r| r.recall).collect();
            let (f1_mean, f1_sd) = mean_sd(&f1);
            let (shd_mean, shd_sd) = mean_sd(&shd);
            CellSummary {
                cell: c.index,
                degree: c.degree,
                alpha: c.alpha,
                n_intervention: c.n_intervention,
                replicates: rows.len(),
                failures: rows.len() - ok.len(),
                f1_mean,
                f1_sd,
                shd_mean,
                shd_sd,
                precision_mean: mean_sd(&prec).0,
                recall_mean: mean_sd(&rec).0,
            }
        })
        .collect()
}

/// Runs every cell × replicate on a worker pool and aggregates F1 and SHD.
/// A failing run is recorded with its error and the sweep carries on.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> CliResult<SweepOutput> {
    cfg.validate()?;
    let grid = cells(cfg);
    let jobs: Vec<(Cell, usize)> = grid
        .iter()
        .flat_map(|c| (0..cfg.sweep.replicates).map(move |r| (*c, r)))
        .collect();
    info!(cells = grid.len(), runs = jobs.len(), "sweep started");

    let runs: Vec<RunRow> = jobs
        .par_iter()
        .map(|&(cell, replicate)| {
            let seed = replicate_seed(cfg.seed, replicate);
            let synth = cell_synth(&cfg.synth, &cell);
            let keep_dir = cfg.sweep.keep_runs.then(|| {
                out.join("runs")
                    .join(format!("cell{}_rep{}", cell.index, replicate))
            });
            let mut row = RunRow {
                cell: cell.index,
                degree: cell.degree,
                alpha: cell.alpha,
                n_intervention: cell.n_intervention,
                replicate,
                seed,
                true_edges: None,
                edges: None,
                lambda: None,
                precision: None,
                recall: None,
                f1: None,
                shd: None,
                error: None,
            };
            match run_replicate(&synth, &cfg.fit, seed, keep_dir.as_deref()) {
                Ok((true_edges, lambda, estimate, m)) => {
                    row.true_edges = Some(true_edges);
                    row.edges = Some(estimate.len());
                    row.lambda = Some(lambda);
                    row.precision = Some(m.precision);
                    row.recall = Some(m.recall);
                    row.f1 = Some(m.f1);
                    row.shd = Some(m.shd);
                }
                Err(e) => {
                    warn!(cell = cell.index, replicate, error = %e, "run failed");
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect();

    let summary = summarize(&grid, &runs);
    write_rows(&out.join("runs.csv"), &runs)?;
    write_rows(&out.join("summary.csv"), &summary)?;
    write_config_echo(out, cfg)?;
    Ok(SweepOutput {
        runs,
        cells: summary,
    })
}
