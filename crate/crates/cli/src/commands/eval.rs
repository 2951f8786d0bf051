use std::path::{Path, PathBuf};

use latent_dag::dag::{hard_threshold, EdgeGraph};
use latent_dag::eval::{edge_metrics, updown_ks_analysis, KsReport, MetricsReport};
use latent_dag::ingest::load_study;
use latent_dag::io::{read_edge_list, read_matrix_csv, write_json, write_rows};
use latent_dag::{Error, Matrix};
use serde::Serialize;
use tracing::info;

use super::write_config_echo;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::truth::TRUTH_DIR;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub edges: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsSummary {
    pub perturbations: usize,
    /// Perturbations with both an upstream and a downstream gene.
    pub comparable: usize,
    pub downstream_stronger: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub reference: PathBuf,
    pub threshold: f64,
    pub metrics: MetricsReport,
    pub best_f1: SweepRow,
    pub ks: Option<KsSummary>,
}

/// Reference graph from a dataset directory (its stored truth), a dense
/// matrix CSV, or an edge list with a `src,dst[,weight]` header.
pub fn read_reference(path: &Path, names: &[String]) -> CliResult<Matrix> {
    if path.is_dir() {
        return read_reference(&path.join(TRUTH_DIR).join("A.csv"), names);
    }
    let header = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(path, e))?
        .lines()
        .next()
        .unwrap_or("")
        .to_owned();
    if header.replace(' ', "").starts_with("src,dst") {
        return Ok(read_edge_list(path, names)?);
    }
    let (m, ref_names) = read_matrix_csv(path)?;
    if m.nrows() != m.ncols() || m.ncols() != names.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference is {}×{}, estimate has {} genes",
            m.nrows(),
            m.ncols(),
            names.len()
        ))
        .into());
    }
    if ref_names != names {
        // align by name when the gene order differs
        let idx: Option<Vec<usize>> = names
            .iter()
            .map(|n| ref_names.iter().position(|r| r == n))
            .collect();
        let idx = idx.ok_or_else(|| {
            Error::ShapeMismatch("reference and estimate name different genes".into())
        })?;
        return Ok(Matrix::from_fn(names.len(), names.len(), |j, i| {
            m[(idx[j], idx[i])]
        }));
    }
    Ok(m)
}

pub fn threshold_sweep(
    a_hat: &Matrix,
    truth: &EdgeGraph,
    taus: &[f64],
) -> CliResult<Vec<SweepRow>> {
    taus.iter()
        .map(|&tau| {
            let g = EdgeGraph::from_weights(&hard_threshold(a_hat, tau)?);
            let m = edge_metrics(&g, truth)?;
            Ok(SweepRow {
                tau,
                edges: g.len(),
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
                tn: m.tn,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                shd: m.shd,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct NamedKsRow<'a> {
    perturbation: &'a str,
    target: &'a str,
    gene: &'a str,
    relation: &'static str,
    d: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct NamedKsMedians<'a> {
    perturbation: &'a str,
    target: &'a str,
    upstream: Option<f64>,
    downstream: Option<f64>,
    unrelated: Option<f64>,
    n_upstream: usize,
    n_downstream: usize,
}

pub fn summarize_ks(report: &KsReport) -> KsSummary {
    let comparable: Vec<_> = report
        .medians
        .iter()
        .filter_map(|m| Some((m.upstream?, m.downstream?)))
        .collect();
    KsSummary {
        perturbations: report.medians.len(),
        comparable: comparable.len(),
        downstream_stronger: comparable.iter().filter(|(u, d)| d > u).count(),
    }
}

/// Scores the fit in `fit_dir` against `reference`; with `data`, also runs
/// the upstream/downstream KS analysis on the estimated graph.
pub fn cmd_eval(
    fit_dir: &Path,
    reference: &Path,
    data: Option<&Path>,
    out: &Path,
    cfg: &RunConfig,
) -> CliResult<EvalReport> {
    cfg.validate()?;
    let (a_hat, names) = read_matrix_csv(&fit_dir.join("a_hat.csv"))?;
    let truth_w = read_reference(reference, &names)?;
    if truth_w.shape() != a_hat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reference is {}×{}, estimate is {}×{}",
            truth_w.nrows(),
            truth_w.ncols(),
            a_hat.nrows(),
            a_hat.ncols()
        ))
        .into());
    }
    let truth = EdgeGraph::from_weights(&truth_w);
    let taus = cfg.eval.taus();
    let rows = threshold_sweep(&a_hat, &truth, &taus)?;
    write_rows(&out.join("pr_sweep.csv"), &rows)?;

    let threshold = cfg.fit.solver.threshold;
    let estimate = EdgeGraph::from_weights(&hard_threshold(&a_hat, threshold)?);
    let metrics = edge_metrics(&estimate, &truth)?;
    let best_f1 = threshold_sweep(&a_hat, &truth, &[threshold])?
        .into_iter()
        .chain(rows.iter().copied())
        .fold(None::<SweepRow>, |best, r| match best {
            Some(b) if b.f1 >= r.f1 => Some(b),
            _ => Some(r),
        })
        .expect("at least one threshold");

    let ks = match data {
        Some(dir) => {
            let dataset = load_study(dir)?;
            let keep: Option<Vec<usize>> = names
                .iter()
                .map(|n| dataset.gene_names.iter().position(|g| g == n))
                .collect();
            let keep =
                keep.ok_or_else(|| Error::ShapeMismatch("dataset lacks genes of the fit".into()))?;
            let dataset = dataset.restrict_genes(&keep)?;
            let report = updown_ks_analysis(&dataset, &estimate, &cfg.eval.ks)?;
            let gene = |g: usize| names[g].as_str();
            let named: Vec<NamedKsRow> = report
                .rows
                .iter()
                .map(|r| NamedKsRow {
                    perturbation: &r.perturbation,
                    target: gene(r.target),
                    gene: gene(r.gene),
                    relation: r.relation.as_str(),
                    d: r.d,
                    p_value: r.p_value,
                })
                .collect();
            write_rows(&out.join("ks_tests.csv"), &named)?;
            let medians: Vec<NamedKsMedians> = report
                .medians
                .iter()
                .map(|m| NamedKsMedians {
                    perturbation: &m.perturbation,
                    target: gene(m.target),
                    upstream: m.upstream,
                    downstream: m.downstream,
                    unrelated: m.unrelated,
                    n_upstream: m.n_upstream,
                    n_downstream: m.n_downstream,
                })
                .collect();
            write_rows(&out.join("ks_medians.csv"), &medians)?;
            Some(summarize_ks(&report))
        }
        None => None,
    };

    let report = EvalReport {
        config: cfg.clone(),
        reference: reference.to_path_buf(),
        threshold,
        metrics,
        best_f1,
        ks,
    };
    write_json(&out.join("eval_report.json"), &report)?;
    write_config_echo(out, cfg)?;
    info!(f1 = metrics.f1, shd = metrics.shd, out = %out.display(), "evaluation written");
    Ok(report)
}
