use latent_dag::dag::{is_acyclic, EdgeGraph};
use latent_dag::moments::{assemble_b_hat, estimate_all, ContrastRule, SecondMoment};
use latent_dag::solver::{admm_solve, residual, select_lambda, SolverConfig};
use latent_dag::synth::{gen_er_dag, gen_study, SynthConfig};
use latent_dag::Matrix;

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn noisy_b_hat(p: usize, seed: u64) -> (Matrix, Matrix) {
    let cfg = SynthConfig {
        p,
        alpha: -4.0,
        n_control: 2000,
        n_intervention: 500,
        ..Default::default()
    };
    let study = gen_study(&cfg, seed).unwrap();
    let est = estimate_all(&study.dataset, None, SecondMoment::Factorial).unwrap();
    let b = assemble_b_hat(&est, &ContrastRule::default())
        .unwrap()
        .b_hat;
    (b, study.spec.dag.weights().clone())
}

#[test]
fn identity_gives_empty_graph() {
    let b = Matrix::identity(6, 6);
    for lambda in [0.0, 1e-3, 0.5] {
        let r = admm_solve(&b, lambda, &SolverConfig::default(), None).unwrap();
        assert_eq!(max_abs(&r.a_hat), 0.0);
        assert!(r.graph.is_empty());
    }
}

#[test]
fn large_lambda_gives_empty_graph() {
    let (b, _) = noisy_b_hat(8, 1);
    let lambda = max_abs(&(&b - Matrix::identity(8, 8)));
    for scale in [1.0, 1.5] {
        let r = admm_solve(&b, lambda * scale, &SolverConfig::default(), None).unwrap();
        assert!(max_abs(&r.a_hat) <= 1e-8, "{}", max_abs(&r.a_hat));
    }
}

#[test]
fn noiseless_selection_recovers_support() {
    for seed in 0..3 {
        let dag = gen_er_dag(5, 1.5, 0.3, 0.6, seed).unwrap();
        let b = dag.mixing_matrix().unwrap().into_matrix();
        let sel = select_lambda(&b, &[1e-6, 1e-4, 1e-2, 0.1], &SolverConfig::default()).unwrap();
        assert_eq!(sel.result.graph, dag.graph(), "seed {seed}");
        assert!(max_abs(&(&sel.result.a_hat - dag.weights())) <= 1e-3);
    }
}

#[test]
fn noisy_solutions_satisfy_constraints() {
    let cfg = SolverConfig::default();
    for seed in 0..3 {
        let (b, _) = noisy_b_hat(10, seed);
        for lambda in [0.5, 0.2, 0.1] {
            let Ok(r) = admm_solve(&b, lambda, &cfg, None) else {
                continue;
            };
            assert!(
                r.feasibility_gap <= lambda + 1e-6,
                "seed {seed} lambda {lambda}: gap {}",
                r.feasibility_gap
            );
            assert!(r.h_value <= cfg.h_tol);
            assert!(is_acyclic(&r.a_thresholded).unwrap());
            assert_eq!(r.graph, EdgeGraph::from_weights(&r.a_thresholded));
        }
    }
}

#[test]
fn solution_is_no_denser_than_a_feasible_truth() {
    let cfg = SolverConfig::default();
    for seed in 0..3 {
        let (b, a_true) = noisy_b_hat(10, seed);
        let lambda = max_abs(&residual(&b, &a_true)) * 1.01;
        let r = admm_solve(&b, lambda, &cfg, None).unwrap();
        let l1_true: f64 = a_true.iter().map(|x| x.abs()).sum();
        assert!(r.l1 <= l1_true + 1e-6, "seed {seed}: {} vs {l1_true}", r.l1);
    }
}
