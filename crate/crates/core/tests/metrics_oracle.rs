use latent_dag::dag::EdgeGraph;
use latent_dag::eval::{edge_metrics, kolmogorov_sf, ks_statistic, ks_two_sample, shd};
use latent_dag::seed::rng;
use rand::Rng;

fn random_graph(p: usize, density: f64, r: &mut impl Rng) -> EdgeGraph {
    let mut edges = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j && r.gen_bool(density) {
                edges.push((i, j));
            }
        }
    }
    EdgeGraph::new(p, edges).unwrap()
}

struct Brute {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
    shd: usize,
}

fn brute(est: &EdgeGraph, truth: &EdgeGraph) -> Brute {
    let p = truth.p();
    let mut b = Brute {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
        shd: 0,
    };
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            match (est.has_edge(i, j), truth.has_edge(i, j)) {
                (true, true) => b.tp += 1,
                (true, false) => b.fp += 1,
                (false, true) => b.fn_ += 1,
                (false, false) => b.tn += 1,
            }
            if i < j
                && (est.has_edge(i, j), est.has_edge(j, i))
                    != (truth.has_edge(i, j), truth.has_edge(j, i))
            {
                b.shd += 1;
            }
        }
    }
    b
}

#[test]
fn metrics_match_pair_enumeration() {
    let mut r = rng(2024);
    for _ in 0..1000 {
        let d1 = r.gen_range(0.0..0.6);
        let d2 = r.gen_range(0.0..0.6);
        let est = random_graph(5, d1, &mut r);
        let truth = random_graph(5, d2, &mut r);
        let m = edge_metrics(&est, &truth).unwrap();
        let b = brute(&est, &truth);
        assert_eq!(
            (m.tp, m.fp, m.fn_, m.tn, m.shd),
            (b.tp, b.fp, b.fn_, b.tn, b.shd)
        );
        let precision = if b.tp + b.fp == 0 {
            1.0
        } else {
            b.tp as f64 / (b.tp + b.fp) as f64
        };
        let recall = if b.tp + b.fn_ == 0 {
            1.0
        } else {
            b.tp as f64 / (b.tp + b.fn_) as f64
        };
        assert_eq!(m.precision, precision);
        assert_eq!(m.recall, recall);
    }
}

#[test]
fn shd_is_a_metric() {
    let mut r = rng(7);
    for _ in 0..300 {
        let g: Vec<EdgeGraph> = (0..3).map(|_| random_graph(5, 0.3, &mut r)).collect();
        let d = |a: &EdgeGraph, b: &EdgeGraph| shd(a, b).unwrap();
        assert_eq!(d(&g[0], &g[0]), 0);
        assert_eq!(d(&g[0], &g[1]), d(&g[1], &g[0]));
        assert!(d(&g[0], &g[2]) <= d(&g[0], &g[1]) + d(&g[1], &g[2]));
    }
}

fn ks_double_loop(x: &[f64], y: &[f64]) -> f64 {
    let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    x.iter()
        .chain(y)
        .map(|&t| (cdf(x, t) - cdf(y, t)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn ks_statistic_matches_double_loop() {
    let mut r = rng(99);
    for k in 0..100 {
        let nx = r.gen_range(1..80);
        let ny = r.gen_range(1..80);
        // every other pair is integer-valued to exercise ties
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            if k % 2 == 0 {
                r.gen_range(0..6) as f64
            } else {
                r.gen::<f64>() * 3.0 - 1.0
            }
        };
        let x: Vec<f64> = (0..nx).map(|_| draw(&mut r)).collect();
        let y: Vec<f64> = (0..ny).map(|_| draw(&mut r)).collect();
        let d = ks_statistic(&x, &y).unwrap();
        assert!((d - ks_double_loop(&x, &y)).abs() <= 1e-12, "pair {k}");
    }
}

#[test]
fn kolmogorov_survival_reference_values() {
    // reference: scipy.stats.kstwobign.sf
    let table = [
        (0.3, 0.9999906941986655),
        (0.5, 0.9639452436648751),
        (0.8, 0.5441424115741981),
        (1.0, 0.26999967167735456),
        (1.2, 0.11224966667072497),
        (1.5, 0.022217962616525127),
        (2.0, 0.0006709252557796953),
        (3.0, 3.045995948942526e-08),
    ];
    for (x, want) in table {
        let got = kolmogorov_sf(x);
        assert!(
            (got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15,
            "{x}: {got} vs {want}"
        );
    }
}

#[test]
fn identical_samples_are_not_significant() {
    let x: Vec<f64> = (0..200).map(|i| (i as f64).sin()).collect();
    let res = ks_two_sample(&x, &x).unwrap();
    assert_eq!(res.d, 0.0);
    assert_eq!(res.p_value, 1.0);
}
