//! Graph-recovery metrics and the upstream/downstream KS analysis.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dag::EdgeGraph;
use crate::dataset::{EnvironmentData, StudyDataset};
use crate::error::{Error, Result};
use crate::seed::{child_seed, rng};

/// Directed-edge confusion counts over ordered pairs and derived scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: usize,
}

fn check_same_size(a: &EdgeGraph, b: &EdgeGraph) -> Result<()> {
    if a.p() != b.p() {
        return Err(Error::ShapeMismatch(format!(
            "graphs have {} and {} nodes",
            a.p(),
            b.p()
        )));
    }
    Ok(())
}

/// Precision, recall, F1 and SHD of `estimate` against `truth`.
///
/// Zero-denominator conventions: precision is 1 with no predicted edges,
/// recall is 1 with no true edges, so two empty graphs score F1 = 1.
pub fn edge_metrics(estimate: &EdgeGraph, truth: &EdgeGraph) -> Result<MetricsReport> {
    check_same_size(estimate, truth)?;
    let p = truth.p();
    let tp = estimate.edges().intersection(truth.edges()).count();
    let fp = estimate.len() - tp;
    let fn_ = truth.len() - tp;
    let tn = p * p.saturating_sub(1) - tp - fp - fn_;
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(MetricsReport {
        tp,
        fp,
        fn_,
        tn,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        shd: shd(estimate, truth)?,
    })
}

/// Structural Hamming distance: one unit per unordered pair whose directed
/// content differs (addition, deletion or reversal).
pub fn shd(estimate: &EdgeGraph, truth: &EdgeGraph) -> Result<usize> {
    check_same_size(estimate, truth)?;
    let pairs: BTreeSet<(usize, usize)> = estimate
        .edges()
        .iter()
        .chain(truth.edges())
        .map(|&(i, j)| (i.min(j), i.max(j)))
        .collect();
    Ok(pairs
        .into_iter()
        .filter(|&(i, j)| {
            (estimate.has_edge(i, j), estimate.has_edge(j, i))
                != (truth.has_edge(i, j), truth.has_edge(j, i))
        })
        .count())
}

/// Two-sample KS statistic and p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `sup_t |F̂_x(t) − F̂_y(t)|` by a merge scan, stepping over ties together.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    let xs = sorted(x);
    let ys = sorted(y);
    Ok(ks_sorted(&xs, &ys))
}

fn ks_sorted(xs: &[f64], ys: &[f64]) -> f64 {
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / nx - j as f64 / ny).abs());
    }
    d
}

const KS_TERMS: usize = 100;

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let q = if lambda < 1.0 {
        // theta-function form converges quickly for small arguments
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=KS_TERMS {
            let m = (2 * k - 1) as f64;
            let term = (c * m * m).exp();
            cdf += term;
            if term < 1e-17 * cdf {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf
    } else {
        let mut sum = 0.0;
        for k in 1..=KS_TERMS {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 * sum.abs() {
                break;
            }
        }
        2.0 * sum
    };
    q.clamp(1e-300, 1.0)
}

/// Asymptotic two-sample KS test with effective size `n_x n_y / (n_x + n_y)`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    let d = ks_statistic(x, y)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let ne = nx * ny / (nx + ny);
    Ok(KsResult {
        d,
        p_value: kolmogorov_sf(ne.sqrt() * d),
    })
}

/// Permutation p-value of the KS statistic, for small samples.
pub fn ks_permutation(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Result<KsResult> {
    let d = ks_statistic(x, y)?;
    let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut rng = rng(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        pooled.shuffle(&mut rng);
        let (a, b) = pooled.split_at(x.len());
        if ks_sorted(&sorted(a), &sorted(b)) >= d - 1e-12 {
            hits += 1;
        }
    }
    Ok(KsResult {
        d,
        p_value: (1 + hits) as f64 / (1 + resamples) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Upstream,
    Downstream,
    Unrelated,
}

impl Relation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Relation::Upstream => "upstream",
            Relation::Downstream => "downstream",
            Relation::Unrelated => "unrelated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsRow {
    pub perturbation: String,
    pub target: usize,
    pub gene: usize,
    pub relation: Relation,
    pub d: f64,
    pub p_value: f64,
}

/// Per-perturbation medians of `−log₁₀ p` by relation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsMedians {
    pub perturbation: String,
    pub target: usize,
    pub upstream: Option<f64>,
    pub downstream: Option<f64>,
    pub unrelated: Option<f64>,
    pub n_upstream: usize,
    pub n_downstream: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub rows: Vec<KsRow>,
    pub medians: Vec<KsMedians>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsOptions {
    /// Below this per-sample size the permutation p-value is used.
    pub min_asymptotic_n: usize,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for KsOptions {
    fn default() -> Self {
        Self {
            min_asymptotic_n: 30,
            resamples: 1000,
            seed: 0,
        }
    }
}

fn log_normalized(env: &EnvironmentData, gene: usize) -> Vec<f64> {
    env.counts
        .column(gene)
        .iter()
        .zip(&env.library_sizes)
        .map(|(&x, l)| (x as f64 / l).ln_1p())
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// KS tests of every non-target gene between each perturbation and the control,
/// grouped by the gene's position relative to the target in `graph`.
pub fn updown_ks_analysis(
    dataset: &StudyDataset,
    graph: &EdgeGraph,
    opts: &KsOptions,
) -> Result<KsReport> {
    let p = dataset.p();
    if graph.p() != p {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} nodes, dataset has {p} genes",
            graph.p()
        )));
    }
    let control = dataset.control()?;
    let control_values: Vec<Vec<f64>> = (0..p).map(|j| log_normalized(control, j)).collect();

    let per_env: Vec<(Vec<KsRow>, KsMedians)> = dataset
        .environments
        .par_iter()
        .enumerate()
        .filter_map(|(m, env)| env.target.map(|t| (m, env, t)))
        .map(|(m, env, target)| {
            let up = graph.ancestors(target)?;
            let down = graph.descendants(target)?;
            let mut rows = Vec::with_capacity(p.saturating_sub(1));
            for gene in (0..p).filter(|&g| g != target) {
                let relation = if down.contains(&gene) {
                    Relation::Downstream
                } else if up.contains(&gene) {
                    Relation::Upstream
                } else {
                    Relation::Unrelated
                };
                let x = log_normalized(env, gene);
                let y = &control_values[gene];
                let res = if x.len().min(y.len()) < opts.min_asymptotic_n {
                    let seed = child_seed(child_seed(opts.seed, m as u64), gene as u64);
                    ks_permutation(&x, y, opts.resamples, seed)?
                } else {
                    ks_two_sample(&x, y)?
                };
                rows.push(KsRow {
                    perturbation: env.id.clone(),
                    target,
                    gene,
                    relation,
                    d: res.d,
                    p_value: res.p_value,
                });
            }
            let pick = |rel: Relation| -> Vec<f64> {
                rows.iter()
                    .filter(|r| r.relation == rel)
                    .map(|r| -r.p_value.log10())
                    .collect()
            };
            let medians = KsMedians {
                perturbation: env.id.clone(),
                target,
                upstream: median(pick(Relation::Upstream)),
                downstream: median(pick(Relation::Downstream)),
                unrelated: median(pick(Relation::Unrelated)),
                n_upstream: up.len(),
                n_downstream: down.len(),
            };
            Ok((rows, medians))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for (r, m) in per_env {
        rows.extend(r);
        medians.push(m);
    }
    Ok(KsReport { rows, medians })
}
