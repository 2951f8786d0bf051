//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use latent_dag::dag::{is_acyclic, WeightedDag};
use latent_dag::eval::{
    edge_metrics, kolmogorov_sf, ks_statistic, shd, updown_ks_analysis, KsOptions,
};
use latent_dag::io::read_matrix_csv;
use latent_dag::moments::{
    assemble_b_hat, estimate_all, estimate_latent_mean, latent_from_moments, scales, ContrastRule,
    LatentMeanEstimates, SecondMoment,
};
use latent_dag::seed::{child_seed, rng};
use latent_dag::solver::{admm_solve, residual, select_lambda, Acyclicity, SolverConfig};
use latent_dag::synth::{
    gen_confounded_cov, gen_study, gen_study_from_spec, population_means, ScmSpec, SynthConfig,
};
use latent_dag::{dag::EdgeGraph, Matrix};
use latent_dag_cli::commands::{cmd_fit, cmd_simulate, run_replicate, summarize_ks, FitFlags};
use latent_dag_cli::RunConfig;
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn identification() -> Outcome {
    let start = Instant::now();
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let p = [5, 10, 20][k as usize % 3];
        let degree = [1.0, 2.0, 3.0][(k as usize / 3) % 3];
        let synth = SynthConfig {
            p,
            degree,
            n_control: 10,
            n_intervention: 10,
            ..Default::default()
        };
        let study = gen_study(&synth, 1000 + k).map_err(|e| e.to_string())?;
        let means = population_means(&study.spec, &study.design).map_err(|e| e.to_string())?;
        let targets: Vec<usize> = study
            .design
            .interventions
            .iter()
            .map(|iv| iv.target)
            .collect();
        let est =
            LatentMeanEstimates::from_population(&means, &targets).map_err(|e| e.to_string())?;
        let b = assemble_b_hat(&est, &ContrastRule::default())
            .map_err(|e| e.to_string())?
            .b_hat;
        let r = admm_solve(&b, 1e-6, &cfg, None).map_err(|e| format!("graph {k}: {e}"))?;
        let err = max_abs(&(&r.a_hat - study.spec.dag.weights()));
        worst = worst.max(err);
        if err > 1e-4 || r.graph != study.spec.dag.graph() {
            return Err(format!(
                "graph {k} (p={p}, d={degree}): error {err:e}, support mismatch {}",
                r.graph != study.spec.dag.graph()
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        secs < 30.0,
        format!("20 graphs, max error {worst:.2e}, {secs:.1}s"),
    )
}

fn moment_map() -> Outcome {
    let mut worst_closed: f64 = 0.0;
    for &(mu, s2) in &[(0.0, 0.5), (-1.3, 0.05), (2.0, 1.2), (0.4, 0.0)] {
        let m1 = (mu + 0.5 * s2 as f64).exp();
        let m2 = (2.0 * mu + 2.0 * s2 as f64).exp();
        let lm = latent_from_moments(0, m1, m2).map_err(|e| e.to_string())?;
        worst_closed = worst_closed
            .max((lm.mu - mu).abs())
            .max((lm.sigma2 - s2).abs());
    }
    if worst_closed > 1e-12 {
        return Err(format!("closed form error {worst_closed:e}"));
    }
    let synth = SynthConfig {
        p: 10,
        n_control: 200_000,
        n_intervention: 1,
        libsize_log_sd: 0.1,
        ..Default::default()
    };
    let study = gen_study(&synth, 77).map_err(|e| e.to_string())?;
    let control = study.dataset.control().map_err(|e| e.to_string())?;
    let s = scales(control, None).map_err(|e| e.to_string())?;
    let est = estimate_latent_mean(&control.counts, &s, SecondMoment::Factorial)
        .map_err(|e| e.to_string())?;
    let truth = &population_means(&study.spec, &study.design).map_err(|e| e.to_string())?[0];
    let mc = (&est.mu - truth).amax();
    check(
        mc <= 0.02,
        format!("closed form {worst_closed:.1e}, Monte Carlo max |mu error| {mc:.4} over 10 genes"),
    )
}

fn gradient_error(form: Acyclicity, a: &Matrix) -> f64 {
    let (_, grad) = form.evaluate(a).unwrap();
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..a.nrows() {
        for i in 0..a.ncols() {
            let (mut plus, mut minus) = (a.clone(), a.clone());
            plus[(j, i)] += step;
            minus[(j, i)] -= step;
            let fd = (form.value(&plus).unwrap() - form.value(&minus).unwrap()) / (2.0 * step);
            worst =
                worst.max((fd - grad[(j, i)]).abs() / grad[(j, i)].abs().max(fd.abs()).max(1e-3));
        }
    }
    worst
}

fn solver_contracts() -> Outcome {
    let cfg = SolverConfig::default();
    let mut returned = 0;
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    let mut worst_h: f64 = 0.0;
    for seed in 0..4 {
        let synth = SynthConfig {
            p: 10,
            alpha: -4.0,
            n_control: 2000,
            n_intervention: 300,
            ..Default::default()
        };
        let study = gen_study(&synth, seed).map_err(|e| e.to_string())?;
        let est = estimate_all(&study.dataset, None, SecondMoment::Factorial)
            .map_err(|e| e.to_string())?;
        let b = assemble_b_hat(&est, &ContrastRule::default())
            .map_err(|e| e.to_string())?
            .b_hat;
        let sel = select_lambda(&b, &cfg.lambda_grid, &cfg).map_err(|e| e.to_string())?;
        let mut results = vec![sel.result];
        let a_true = study.spec.dag.weights();
        let lambda_true = max_abs(&residual(&b, a_true)) * 1.01;
        let r = admm_solve(&b, lambda_true, &cfg, None).map_err(|e| e.to_string())?;
        let l1_true: f64 = a_true.iter().map(|x| x.abs()).sum();
        if r.l1 > l1_true + 1e-6 {
            return Err(format!(
                "seed {seed}: l1 {} exceeds feasible truth {l1_true}",
                r.l1
            ));
        }
        results.push(r);
        for lambda in [0.3, 0.1] {
            if let Ok(r) = admm_solve(&b, lambda, &cfg, None) {
                results.push(r);
            }
        }
        for r in &results {
            returned += 1;
            worst_gap = worst_gap.max(r.feasibility_gap - r.lambda);
            worst_h = worst_h.max(r.h_value);
            if !is_acyclic(&r.a_thresholded).unwrap_or(false) {
                return Err(format!("seed {seed}: thresholded estimate is cyclic"));
            }
        }
    }
    let mut worst_grad: f64 = 0.0;
    let mut r = rng(3);
    for p in [3, 6, 10] {
        let mut a = Matrix::from_fn(p, p, |_, _| r.gen_range(-0.3..0.3));
        a.fill_diagonal(0.0);
        for form in [Acyclicity::TraceExp, Acyclicity::LogDet { u: 1.0 }] {
            worst_grad = worst_grad.max(gradient_error(form, &a));
        }
    }
    check(
        worst_gap <= 1e-6 && worst_h <= 1e-8 && worst_grad <= 1e-5,
        format!("{returned} solutions, max gap-lambda {worst_gap:.1e}, max h {worst_h:.1e}, gradient rel error {worst_grad:.1e}"),
    )
}

fn trends() -> Outcome {
    let start = Instant::now();
    let base = SynthConfig {
        p: 20,
        degree: 2.0,
        sigma_c: 0.25,
        n_control: 2000,
        ..Default::default()
    };
    let fit = latent_dag::pipeline::FitOptions::default();
    let cells = [(-4.0, 100), (-4.0, 200), (-4.0, 500), (-2.0, 200)];
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..10).map(move |r| (c, r)))
        .collect();
    let runs: Vec<(usize, Result<(f64, f64), String>)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (alpha, n) = cells[c];
            let synth = SynthConfig {
                alpha,
                n_intervention: n,
                ..base.clone()
            };
            let seed = latent_dag_cli::commands::replicate_seed(0, r as usize);
            let res = run_replicate(&synth, &fit, seed, None)
                .map(|(_, _, _, m)| (m.f1, m.shd as f64))
                .map_err(|e| e.to_string());
            (c, res)
        })
        .collect();
    let mut f1 = BTreeMap::new();
    let mut shd = BTreeMap::new();
    for c in 0..cells.len() {
        let ok: Vec<(f64, f64)> = runs
            .iter()
            .filter(|(k, _)| *k == c)
            .map(|(_, r)| r.clone())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("cell {:?}: {e}", cells[c]))?;
        f1.insert(c, ok.iter().map(|x| x.0).sum::<f64>() / ok.len() as f64);
        shd.insert(c, ok.iter().map(|x| x.1).sum::<f64>() / ok.len() as f64);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "F1 a-4: n100 {:.3} n200 {:.3} n500 {:.3}; a-2 n200 {:.3}; SHD a-4: n100 {:.1} n200 {:.1} n500 {:.1}; a-2 n200 {:.1}; {secs:.0}s",
        f1[&0], f1[&1], f1[&2], f1[&3], shd[&0], shd[&1], shd[&2], shd[&3]
    );
    let ok = f1[&2] > f1[&0]
        && f1[&1] >= f1[&3]
        && shd[&2] < shd[&0]
        && shd[&1] <= shd[&3]
        && f1[&2] >= 0.8
        && secs <= 600.0;
    check(ok, detail)
}

fn random_graph(p: usize, density: f64, r: &mut impl Rng) -> EdgeGraph {
    let edges = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .filter(|_| r.gen_bool(density))
        .collect::<Vec<_>>();
    EdgeGraph::new(p, edges).unwrap()
}

fn metric_oracles() -> Outcome {
    let mut r = rng(2024);
    for k in 0..1000 {
        let (d1, d2) = (r.gen_range(0.0..0.6), r.gen_range(0.0..0.6));
        let est = random_graph(5, d1, &mut r);
        let truth = random_graph(5, d2, &mut r);
        let m = edge_metrics(&est, &truth).map_err(|e| e.to_string())?;
        let (mut tp, mut fp, mut fn_, mut tn, mut s) = (0, 0, 0, 0, 0);
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                match (est.has_edge(i, j), truth.has_edge(i, j)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
                if i < j
                    && (est.has_edge(i, j), est.has_edge(j, i))
                        != (truth.has_edge(i, j), truth.has_edge(j, i))
                {
                    s += 1;
                }
            }
        }
        if (m.tp, m.fp, m.fn_, m.tn, m.shd) != (tp, fp, fn_, tn, s)
            || shd(&est, &truth).unwrap() != s
        {
            return Err(format!("graph pair {k} disagrees with enumeration"));
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nx, ny) = (r.gen_range(1..100), r.gen_range(1..100));
        let x: Vec<f64> = (0..nx)
            .map(|_| r.gen_range(0..8) as f64 + r.gen_range(0.0..1.0f64).round() * 0.5)
            .collect();
        let y: Vec<f64> = (0..ny).map(|_| r.gen_range(0.0..8.0)).collect();
        let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
        let oracle = x
            .iter()
            .chain(&y)
            .map(|&t| (cdf(&x, t) - cdf(&y, t)).abs())
            .fold(0.0, f64::max);
        worst = worst.max((ks_statistic(&x, &y).map_err(|e| e.to_string())? - oracle).abs());
    }
    let sf = (kolmogorov_sf(1.0) - 0.26999967167735456).abs();
    check(
        worst <= 1e-12 && sf <= 1e-12,
        format!("1000 graph pairs exact, KS D max deviation {worst:.1e} over 100 pairs"),
    )
}

/// Chain 0 → 1 → … → p−1 with a few skip edges.
fn chain_heavy(p: usize, seed: u64) -> WeightedDag {
    let mut r = rng(seed);
    let mut a = Matrix::zeros(p, p);
    for i in 0..p - 1 {
        let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        a[(i + 1, i)] = sign * r.gen_range(0.5..0.8);
    }
    for i in (0..p.saturating_sub(3)).step_by(4) {
        a[(i + 3, i)] = r.gen_range(0.3..0.5);
    }
    WeightedDag::new(a).unwrap()
}

fn ks_directionality() -> Outcome {
    let p = 10;
    let synth = SynthConfig {
        p,
        alpha: -4.0,
        n_control: 2000,
        n_intervention: 500,
        ..Default::default()
    };
    let mut passes = 0;
    let mut tallies = Vec::new();
    for rep in 0..10u64 {
        let seed = child_seed(606, rep);
        let dag = chain_heavy(p, child_seed(seed, 0));
        let (sigma_e, loadings) = gen_confounded_cov(
            p,
            synth.n_uc,
            synth.sigma_c,
            synth.diag_lo,
            synth.diag_hi,
            child_seed(seed, 1),
        )
        .map_err(|e| e.to_string())?;
        let spec = ScmSpec {
            dag,
            eta0: DVector::from_element(p, synth.eta0),
            sigma_e,
            loadings,
        };
        let graph = spec.dag.graph();
        let study =
            gen_study_from_spec(spec, &synth, child_seed(seed, 2)).map_err(|e| e.to_string())?;
        let report = updown_ks_analysis(&study.dataset, &graph, &KsOptions::default())
            .map_err(|e| e.to_string())?;
        let s = summarize_ks(&report);
        if 2 * s.downstream_stronger > s.comparable {
            passes += 1;
        }
        tallies.push(format!("{}/{}", s.downstream_stronger, s.comparable));
    }
    check(
        passes >= 9,
        format!(
            "{passes}/10 replicates downstream-dominant (per replicate {})",
            tallies.join(" ")
        ),
    )
}

fn numeric_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "timings.json") {
                out.insert(
                    path.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.seed = 31;
    cfg.synth.p = 12;
    cfg.synth.alpha = -4.0;
    cfg.synth.n_control = 1500;
    cfg.synth.n_intervention = 300;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut fits = Vec::new();
    for run in ["a", "b"] {
        let data = root.path().join(run).join("data");
        let fit = root.path().join(run).join("fit");
        cmd_simulate(&cfg, &data).map_err(|e| e.to_string())?;
        cmd_fit(&data, &fit, &cfg, FitFlags::default()).map_err(|e| e.to_string())?;
        fits.push((numeric_files(&data), numeric_files(&fit), fit));
    }
    if fits[0].0 != fits[1].0 {
        return Err("simulated datasets differ".into());
    }
    let mut drift: f64 = 0.0;
    for name in ["b_hat.csv", "a_hat.csv", "a_thresholded.csv"] {
        let (x, _) = read_matrix_csv(&fits[0].2.join(name)).map_err(|e| e.to_string())?;
        let (y, _) = read_matrix_csv(&fits[1].2.join(name)).map_err(|e| e.to_string())?;
        drift = drift.max(max_abs(&(x - y)));
    }
    let identical = fits[0].1 == fits[1].1;
    check(
        drift <= 1e-12 && identical,
        format!("{} dataset files bit-exact, fit artifacts identical: {identical}, max drift {drift:.1e}", fits[0].0.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("population identification", identification),
        ("moment map round trip", moment_map),
        ("solver contracts", solver_contracts),
        ("sweep trends", trends),
        ("metric and KS oracles", metric_oracles),
        ("KS directionality", ks_directionality),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1}s]", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
