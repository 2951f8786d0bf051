//! Ground-truth latent SCMs and interventional Poisson count data.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::dag::{mixing_matrix, WeightedDag};
use crate::dataset::{CountMatrix, EnvironmentData, InterventionDesign, StudyDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed::{child_seed, rng};

pub use crate::dataset::Intervention;

/// Largest Poisson rate accepted by [`sample_counts`].
pub const MAX_RATE: f64 = 1e12;

const CHOLESKY_JITTER: f64 = 1e-10;

/// Latent linear Gaussian SCM `Z = AZ + η + ε`, `ε ~ N(0, Σ_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSpec {
    pub dag: WeightedDag,
    pub eta0: DVector<f64>,
    pub sigma_e: Matrix,
    /// p × n_uc confounder loadings; `Σ_e = D + UUᵀ`.
    pub loadings: Matrix,
}

impl ScmSpec {
    pub fn p(&self) -> usize {
        self.dag.p()
    }

    /// Intercept of the environment shifted by `iv` (control when `None`).
    pub fn eta(&self, iv: Option<&Intervention>) -> DVector<f64> {
        let mut eta = self.eta0.clone();
        if let Some(iv) = iv {
            eta[iv.target] += iv.shift;
        }
        eta
    }
}

/// Erdős–Rényi DAG under a uniformly random topological order.
///
/// Every ordered pair `(earlier, later)` gets an edge with probability
/// `degree / (p − 1)`, so the expected total degree per node is `degree`.
pub fn gen_er_dag(
    p: usize,
    degree: f64,
    weight_lo: f64,
    weight_hi: f64,
    seed: u64,
) -> Result<WeightedDag> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!("need p >= 2, got {p}")));
    }
    if !(degree > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "degree must be positive, got {degree}"
        )));
    }
    if !(weight_lo > 0.0 && weight_lo <= weight_hi) {
        return Err(Error::InvalidParameter(format!(
            "weight range [{weight_lo}, {weight_hi}] is invalid"
        )));
    }
    let prob = degree / (p - 1) as f64;
    if prob > 1.0 {
        return Err(Error::InvalidDensity(prob));
    }
    let mut rng = rng(seed);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let mut a = Matrix::zeros(p, p);
    for lo in 0..p {
        for hi in (lo + 1)..p {
            if rng.gen::<f64>() < prob {
                let magnitude = if weight_lo == weight_hi {
                    weight_lo
                } else {
                    rng.gen_range(weight_lo..=weight_hi)
                };
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                a[(order[hi], order[lo])] = sign * magnitude;
            }
        }
    }
    WeightedDag::new(a)
}

/// Diagonal-plus-low-rank noise covariance `D + UUᵀ`.
pub fn gen_confounded_cov(
    p: usize,
    n_uc: usize,
    sigma_c: f64,
    diag_lo: f64,
    diag_hi: f64,
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    if !(diag_lo > 0.0 && diag_lo <= diag_hi) {
        return Err(Error::InvalidParameter(format!(
            "diagonal range [{diag_lo}, {diag_hi}] is invalid"
        )));
    }
    if !(sigma_c >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_c must be >= 0, got {sigma_c}"
        )));
    }
    let mut rng = rng(seed);
    let diag: Vec<f64> = (0..p)
        .map(|_| {
            if diag_lo == diag_hi {
                diag_lo
            } else {
                rng.gen_range(diag_lo..=diag_hi)
            }
        })
        .collect();
    let mut u = Matrix::zeros(p, n_uc);
    if sigma_c > 0.0 {
        let normal = Normal::new(0.0, sigma_c).expect("sigma_c validated");
        for x in u.iter_mut() {
            *x = normal.sample(&mut rng);
        }
    }
    let mut sigma = &u * u.transpose();
    for (j, d) in diag.iter().enumerate() {
        sigma[(j, j)] += d;
    }
    Ok((sigma, u))
}

/// Exact latent means `μ⁽ᵐ⁾ = B η⁽ᵐ⁾`, control first, then one per intervention.
pub fn population_means(spec: &ScmSpec, design: &InterventionDesign) -> Result<Vec<DVector<f64>>> {
    let b = mixing_matrix(spec.dag.weights())?.into_matrix();
    let mut out = Vec::with_capacity(design.interventions.len() + 1);
    out.push(&b * spec.eta(None));
    for iv in &design.interventions {
        out.push(&b * spec.eta(Some(iv)));
    }
    Ok(out)
}

fn cholesky_lower(sigma: &Matrix) -> Result<Matrix> {
    if let Some(c) = sigma.clone().cholesky() {
        return Ok(c.l());
    }
    let p = sigma.nrows();
    let jittered = sigma + Matrix::identity(p, p) * CHOLESKY_JITTER;
    jittered.cholesky().map(|c| c.l()).ok_or(Error::NotPsd)
}

/// `n` latent draws (rows) of `Z = B(ε + η)`.
pub fn sample_latent(spec: &ScmSpec, eta: &DVector<f64>, n: usize, seed: u64) -> Result<Matrix> {
    let p = spec.p();
    let b = mixing_matrix(spec.dag.weights())?.into_matrix();
    let chol = cholesky_lower(&spec.sigma_e)?;
    // each row is (B(Lg + η))ᵀ = gᵀ(BL)ᵀ + (Bη)ᵀ
    let transform = (&b * chol).transpose();
    let mean = (&b * eta).transpose();
    let mut rng = rng(seed);
    let g = Matrix::from_fn(n, p, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let mut z = g * transform;
    for mut row in z.row_iter_mut() {
        row += &mean;
    }
    Ok(z)
}

/// Poisson counts with rate `L[i]·exp(s[i][j] + Z[i][j])`.
pub fn sample_counts(
    z: &Matrix,
    library_sizes: &[f64],
    offsets: Option<&Matrix>,
    seed: u64,
) -> Result<CountMatrix> {
    let (n, p) = z.shape();
    if library_sizes.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} library sizes for {n} cells",
            library_sizes.len()
        )));
    }
    if let Some(s) = offsets {
        if s.shape() != (n, p) {
            return Err(Error::ShapeMismatch(
                "offset matrix shape differs from Z".into(),
            ));
        }
    }
    if let Some(bad) = library_sizes.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "library size {bad} is not positive"
        )));
    }
    let mut rng = rng(seed);
    let mut counts = CountMatrix::zeros(n, p);
    // row-major draw order so results do not depend on the storage layout
    for i in 0..n {
        for j in 0..p {
            let s = offsets.map_or(0.0, |s| s[(i, j)]);
            let rate = library_sizes[i] * (s + z[(i, j)]).exp();
            if rate.is_nan() || rate > MAX_RATE {
                return Err(Error::RateOverflow { rate });
            }
            counts[(i, j)] = if rate <= 0.0 {
                0
            } else {
                Poisson::new(rate)
                    .expect("rate is positive and finite")
                    .sample(&mut rng) as u64
            };
        }
    }
    Ok(counts)
}

/// Linear covariate effect used to exercise the measurement-layer GLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateHook {
    /// Effect of each standard-normal covariate, shared across genes.
    pub coefficients: Vec<f64>,
}

/// Parameters of the synthetic study protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub p: usize,
    pub degree: f64,
    pub weight_lo: f64,
    pub weight_hi: f64,
    pub eta0: f64,
    pub alpha: f64,
    pub sigma_c: f64,
    pub n_uc: usize,
    pub diag_lo: f64,
    pub diag_hi: f64,
    pub n_control: usize,
    pub n_intervention: usize,
    pub envs_per_gene: usize,
    pub libsize_log_mean: f64,
    pub libsize_log_sd: f64,
    pub covariates: Option<CovariateHook>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            p: 50,
            degree: 2.0,
            weight_lo: 0.3,
            weight_hi: 0.6,
            eta0: -0.5,
            alpha: -2.0,
            sigma_c: 0.25,
            n_uc: 2,
            diag_lo: 0.5,
            diag_hi: 0.8,
            n_control: 5000,
            n_intervention: 200,
            envs_per_gene: 1,
            libsize_log_mean: 10f64.ln(),
            libsize_log_sd: 0.1,
            covariates: None,
        }
    }
}

impl SynthConfig {
    /// Low-density setting.
    pub const DEGREE_LOW: f64 = 2.0;
    /// High-density setting.
    pub const DEGREE_HIGH: f64 = 4.0;

    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("alpha must be nonzero".into()));
        }
        if self.n_control == 0 || self.n_intervention == 0 {
            return Err(Error::InvalidParameter(
                "sample sizes must be positive".into(),
            ));
        }
        if self.envs_per_gene == 0 {
            return Err(Error::InvalidParameter(
                "envs_per_gene must be positive".into(),
            ));
        }
        if !(self.libsize_log_sd >= 0.0) {
            return Err(Error::InvalidParameter(
                "libsize_log_sd must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn design(&self) -> InterventionDesign {
        let mut design = InterventionDesign {
            n_control: self.n_control,
            interventions: Vec::new(),
        };
        for _ in 0..self.envs_per_gene {
            design.interventions.extend(
                InterventionDesign::one_per_gene(
                    self.p,
                    self.alpha,
                    self.n_control,
                    self.n_intervention,
                )
                .interventions,
            );
        }
        design
    }
}

/// Simulated study together with its generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub dataset: StudyDataset,
    pub spec: ScmSpec,
    pub design: InterventionDesign,
}

const STREAM_DAG: u64 = 0;
const STREAM_COV: u64 = 1;
const STREAM_ENV: u64 = 2;

/// Full synthetic study: DAG, confounded noise, control plus one-sparse shifts.
pub fn gen_study(config: &SynthConfig, seed: u64) -> Result<Study> {
    config.validate()?;
    let p = config.p;
    let dag = gen_er_dag(
        p,
        config.degree,
        config.weight_lo,
        config.weight_hi,
        child_seed(seed, STREAM_DAG),
    )?;
    let (sigma_e, loadings) = gen_confounded_cov(
        p,
        config.n_uc,
        config.sigma_c,
        config.diag_lo,
        config.diag_hi,
        child_seed(seed, STREAM_COV),
    )?;
    let spec = ScmSpec {
        dag,
        eta0: DVector::from_element(p, config.eta0),
        sigma_e,
        loadings,
    };
    gen_study_from_spec(spec, config, seed)
}

/// Simulates the environments of `config` from a given SCM. `config.p`,
/// the graph and noise settings are ignored in favour of `spec`.
pub fn gen_study_from_spec(spec: ScmSpec, config: &SynthConfig, seed: u64) -> Result<Study> {
    config.validate()?;
    let p = spec.p();
    let config = &SynthConfig {
        p,
        ..config.clone()
    };
    let design = config.design();
    design.validate(p)?;
    let untargeted = design.untargeted(p);
    if !untargeted.is_empty() {
        warn!(?untargeted, "some genes are never intervened on");
    }

    let env_seed = child_seed(seed, STREAM_ENV);
    let mut environments = Vec::with_capacity(design.interventions.len() + 1);
    environments.push(simulate_environment(
        &spec,
        config,
        "control".into(),
        None,
        config.n_control,
        child_seed(env_seed, 0),
    )?);
    for (m, iv) in design.interventions.iter().enumerate() {
        environments.push(simulate_environment(
            &spec,
            config,
            format!("env{}", m + 1),
            Some(iv),
            iv.n,
            child_seed(env_seed, m as u64 + 1),
        )?);
    }
    let q = config
        .covariates
        .as_ref()
        .map_or(0, |c| c.coefficients.len());
    let dataset = StudyDataset {
        gene_names: (0..p).map(|j| format!("G{j}")).collect(),
        covariate_names: (0..q).map(|k| format!("C{k}")).collect(),
        environments,
    };
    Ok(Study {
        dataset,
        spec,
        design,
    })
}

fn simulate_environment(
    spec: &ScmSpec,
    config: &SynthConfig,
    id: String,
    iv: Option<&Intervention>,
    n: usize,
    seed: u64,
) -> Result<EnvironmentData> {
    let p = spec.p();
    let z = sample_latent(spec, &spec.eta(iv), n, child_seed(seed, 0))?;

    let mut lib_rng = rng(child_seed(seed, 1));
    let library_sizes: Vec<f64> = if config.libsize_log_sd > 0.0 {
        let dist = LogNormal::new(config.libsize_log_mean, config.libsize_log_sd)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        (0..n).map(|_| dist.sample(&mut lib_rng)).collect()
    } else {
        vec![config.libsize_log_mean.exp(); n]
    };

    let (covariates, offsets) = match &config.covariates {
        Some(hook) if !hook.coefficients.is_empty() => {
            let q = hook.coefficients.len();
            let mut cov_rng = rng(child_seed(seed, 2));
            let c = Matrix::from_fn(n, q, |_, _| {
                cov_rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let beta = DVector::from_vec(hook.coefficients.clone());
            let s = &c * beta;
            let offsets = DMatrix::from_fn(n, p, |i, _| s[i]);
            (c, Some(offsets))
        }
        _ => (Matrix::zeros(n, 0), None),
    };
    let counts = sample_counts(&z, &library_sizes, offsets.as_ref(), child_seed(seed, 3))?;
    Ok(EnvironmentData {
        id,
        target: iv.map(|iv| iv.target),
        counts,
        library_sizes,
        covariates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::is_acyclic;
    use crate::linalg::max_abs;

    fn chain_spec() -> ScmSpec {
        let mut a = Matrix::zeros(3, 3);
        a[(1, 0)] = 0.5;
        a[(2, 1)] = 0.5;
        ScmSpec {
            dag: WeightedDag::new(a).unwrap(),
            eta0: DVector::from_element(3, -0.5),
            sigma_e: Matrix::identity(3, 3),
            loadings: Matrix::zeros(3, 0),
        }
    }

    #[test]
    fn two_node_dag_always_has_its_edge() {
        for seed in 0..20 {
            let dag = gen_er_dag(2, 1.0, 0.3, 0.6, seed).unwrap();
            assert_eq!(dag.edge_count(), 1);
            let w = dag.weights().iter().find(|w| **w != 0.0).unwrap().abs();
            assert!((0.3..=0.6).contains(&w));
        }
    }

    #[test]
    fn dag_generation_is_deterministic_and_acyclic() {
        let a = gen_er_dag(30, 3.0, 0.3, 0.6, 11).unwrap();
        let b = gen_er_dag(30, 3.0, 0.3, 0.6, 11).unwrap();
        assert_eq!(a, b);
        assert!(is_acyclic(a.weights()).unwrap());
    }

    #[test]
    fn dag_generation_rejects_dense_request() {
        assert!(matches!(
            gen_er_dag(3, 3.0, 0.3, 0.6, 0),
            Err(Error::InvalidDensity(_))
        ));
    }

    #[test]
    fn expected_edge_count_matches_degree() {
        // p·d/2 edges on average; Monte Carlo over 1000 seeds
        let (p, d) = (50usize, 2.0);
        let counts: Vec<f64> = (0..1000)
            .map(|s| gen_er_dag(p, d, 0.3, 0.6, s).unwrap().edge_count() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let var =
            counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
        let se = (var / counts.len() as f64).sqrt();
        assert!((mean - 50.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn edge_signs_are_balanced() {
        let mut pos = 0usize;
        let mut total = 0usize;
        for s in 0..200 {
            for w in gen_er_dag(20, 2.0, 0.3, 0.6, s).unwrap().weights().iter() {
                if *w != 0.0 {
                    total += 1;
                    pos += (*w > 0.0) as usize;
                }
            }
        }
        let frac = pos as f64 / total as f64;
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / total as f64).sqrt());
    }

    #[test]
    fn confounded_covariance_structure() {
        let (sigma, u) = gen_confounded_cov(6, 2, 0.0, 0.5, 0.8, 3).unwrap();
        assert_eq!(max_abs(&u), 0.0);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(sigma[(i, j)], 0.0);
                }
            }
        }
        let (sigma, u) = gen_confounded_cov(6, 2, 0.5, 0.5, 0.8, 3).unwrap();
        let d = &sigma - &u * u.transpose();
        for i in 0..6 {
            assert!((0.5..=0.8).contains(&d[(i, i)]));
            for j in 0..6 {
                if i != j {
                    assert!(d[(i, j)].abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn population_means_of_chain() {
        let spec = chain_spec();
        let design = InterventionDesign {
            n_control: 10,
            interventions: vec![Intervention {
                target: 0,
                shift: -2.0,
                n: 10,
            }],
        };
        let mu = population_means(&spec, &design).unwrap();
        let expected0 = [-0.5, -0.75, -0.875];
        for j in 0..3 {
            assert!((mu[0][j] - expected0[j]).abs() < 1e-15);
        }
        let delta = &mu[1] - &mu[0];
        let expected = [-2.0, -1.0, -0.5];
        for j in 0..3 {
            assert!((delta[j] - expected[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn population_means_without_edges_are_intercepts() {
        let mut spec = chain_spec();
        spec.dag = WeightedDag::empty(3);
        let design = InterventionDesign::one_per_gene(3, 1.5, 5, 5);
        let mu = population_means(&spec, &design).unwrap();
        for (m, iv) in design.interventions.iter().enumerate() {
            assert_eq!(mu[m + 1], spec.eta(Some(iv)));
        }
    }

    #[test]
    fn latent_sample_mean_matches_population() {
        let mut spec = chain_spec();
        spec.sigma_e = Matrix::identity(3, 3) * 1e-6;
        let eta = spec.eta(None);
        let n = 100_000;
        let z = sample_latent(&spec, &eta, n, 5).unwrap();
        let b = mixing_matrix(spec.dag.weights()).unwrap().into_matrix();
        let mu = &b * &eta;
        let cov = &b * &spec.sigma_e * b.transpose();
        for j in 0..3 {
            let mean = z.column(j).mean();
            let se = (cov[(j, j)] / n as f64).sqrt();
            assert!((mean - mu[j]).abs() <= 4.0 * se, "gene {j}");
        }
    }

    #[test]
    fn latent_identity_covariance() {
        let mut spec = chain_spec();
        spec.dag = WeightedDag::empty(3);
        let n = 100_000;
        let z = sample_latent(&spec, &DVector::zeros(3), n, 9).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let c = z.column(i).dot(&z.column(j)) / n as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                // var of a product of unit normals is 1 (off-diagonal) or 2 (diagonal)
                let se = ((1.0 + target) / n as f64).sqrt();
                assert!((c - target).abs() <= 4.0 * se, "({i},{j}) = {c}");
            }
        }
        assert_eq!(z, sample_latent(&spec, &DVector::zeros(3), n, 9).unwrap());
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let mut spec = chain_spec();
        spec.sigma_e = -Matrix::identity(3, 3);
        assert!(matches!(
            sample_latent(&spec, &DVector::zeros(3), 5, 0),
            Err(Error::NotPsd)
        ));
    }

    #[test]
    fn zero_rate_gives_zero_counts() {
        let z = Matrix::from_element(4, 2, f64::NEG_INFINITY);
        let x = sample_counts(&z, &[1.0; 4], None, 0).unwrap();
        assert!(x.iter().all(|&v| v == 0));
    }

    #[test]
    fn poisson_mean_matches_rate() {
        let n = 100_000;
        let z = Matrix::from_element(n, 1, 0.0);
        let x = sample_counts(&z, &vec![10.0; n], None, 1).unwrap();
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let se = (10.0 / n as f64).sqrt();
        assert!((mean - 10.0).abs() <= 4.0 * se, "mean {mean}");
    }

    #[test]
    fn rate_overflow_is_reported() {
        let z = Matrix::from_element(1, 1, 40.0);
        assert!(matches!(
            sample_counts(&z, &[1.0], None, 0),
            Err(Error::RateOverflow { .. })
        ));
    }

    #[test]
    fn default_study_protocol() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.p, 50);
        assert_eq!(cfg.n_control, 5000);
        assert_eq!(cfg.eta0, -0.5);
        assert_eq!((cfg.diag_lo, cfg.diag_hi), (0.5, 0.8));
        assert_eq!((cfg.weight_lo, cfg.weight_hi), (0.3, 0.6));
        assert!((cfg.libsize_log_mean - 10f64.ln()).abs() < 1e-15);
        assert_eq!(cfg.libsize_log_sd, 0.1);
    }

    #[test]
    fn study_generation_is_reproducible() {
        let cfg = SynthConfig {
            p: 6,
            n_control: 50,
            n_intervention: 20,
            alpha: -4.0,
            ..SynthConfig::default()
        };
        let a = gen_study(&cfg, 42).unwrap();
        let b = gen_study(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset.environments.len(), 7);
        assert!(a.dataset.environments[0].is_control());
        assert_eq!(a.dataset.environments[3].target, Some(2));
        assert_eq!(a.dataset.q(), 0);
        a.dataset.validate().unwrap();
        let c = gen_study(&cfg, 43).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }
}
