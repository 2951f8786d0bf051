use tracing::{debug, warn};

use super::{project_linf, residual, Acyclicity, SolverConfig, SolverResult, TraceRow};
use crate::dag::{greedy_acyclic_order, hard_threshold, EdgeGraph};
use crate::error::{Error, Result};
use crate::linalg::{check_square_finite, l1_norm, max_abs, spectral_norm_estimate, Matrix};

const RHO_MIN: f64 = 1e-4;
const RHO_MAX: f64 = 1e6;
const BALANCE_EVERY: usize = 10;
const MONOTONE_WINDOW: usize = 50;
const MIN_STEP: f64 = 1e-18;
/// Outer rounds in a row at the largest `μ` with `h` shrinking by less than 1%
/// before giving up.
const STALL_ROUNDS: usize = 2;
const STALL_RATIO: f64 = 0.99;

/// Smooth part of the A-subproblem:
/// `ρ/2 ‖B̂A − C‖² + α h(A) + μ/2 h(A)²`.
struct Smooth<'a> {
    b: &'a Matrix,
    bt: &'a Matrix,
    c: &'a Matrix,
    rho: f64,
    alpha: f64,
    mu: f64,
    /// `None` once the support is restricted to a fixed order.
    acyclicity: Option<Acyclicity>,
}

impl Smooth<'_> {
    fn eval(&self, a: &Matrix) -> Result<(f64, Matrix)> {
        let r = self.b * a - self.c;
        let mut value = 0.5 * self.rho * r.norm_squared();
        let mut grad = self.bt * r * self.rho;
        if let Some(form) = self.acyclicity {
            let (h, gh) = acyclicity_term(form, a)?;
            if let Some(gh) = gh {
                value += self.alpha * h + 0.5 * self.mu * h * h;
                grad += gh * (self.alpha + self.mu * h);
            }
        }
        Ok((value, grad))
    }
}

/// `h` and its gradient; `None` when `A` has an acyclic support, where the
/// squared-weight forms vanish together with their gradients.
fn acyclicity_term(form: Acyclicity, a: &Matrix) -> Result<(f64, Option<Matrix>)> {
    let shortcut = !matches!(form, Acyclicity::LogDetSigned { .. });
    if shortcut && crate::dag::is_acyclic(a).unwrap_or(false) {
        return Ok((0.0, None));
    }
    let (h, g) = form.evaluate(a)?;
    Ok((h, Some(g)))
}

fn soft_threshold(m: &Matrix, t: f64, mask: Option<&Matrix>) -> Matrix {
    let mut out = m.map(|x| {
        if x > t {
            x - t
        } else if x < -t {
            x + t
        } else {
            0.0
        }
    });
    out.fill_diagonal(0.0);
    if let Some(mask) = mask {
        out.component_mul_assign(mask);
    }
    out
}

/// 0/1 mask of the entries `A_ji` with `i` before `j` in `order`.
fn order_mask(order: &[usize]) -> Matrix {
    let p = order.len();
    let mut pos = vec![0; p];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    Matrix::from_fn(p, p, |j, i| if pos[i] < pos[j] { 1.0 } else { 0.0 })
}

#[derive(Clone)]
struct Admm<'a> {
    cfg: &'a SolverConfig,
    b: &'a Matrix,
    bt: Matrix,
    id: Matrix,
    lambda: f64,
    b_norm_sq: f64,
    rho: f64,
    alpha: f64,
    mu: f64,
    a: Matrix,
    z: Matrix,
    v: Matrix,
    mask: Option<Matrix>,
    inner_total: usize,
    admm_total: usize,
    trace: Vec<TraceRow>,
    monotonicity_warnings: usize,
    /// Primal max-norm, dual and relative change of the last iteration.
    last: (f64, f64, f64),
}

impl Admm<'_> {
    fn lipschitz_step(&self) -> f64 {
        1.0 / (self.rho * self.b_norm_sq).max(1e-12)
    }

    /// Proximal gradient with backtracking on the A-subproblem.
    fn update_a(&mut self, c: &Matrix) -> Result<()> {
        let smooth = Smooth {
            b: self.b,
            bt: &self.bt,
            c,
            rho: self.rho,
            alpha: self.alpha,
            mu: self.mu,
            acyclicity: self.mask.is_none().then_some(self.cfg.acyclicity),
        };
        let mask = self.mask.as_ref();
        let mut a = self.a.clone();
        let (mut f, mut grad) = match smooth.eval(&a) {
            Ok(v) => v,
            // warm start outside the log-det domain: restart from the empty graph
            Err(Error::DomainViolation) => {
                a = Matrix::zeros(a.nrows(), a.ncols());
                smooth.eval(&a)?
            }
            Err(e) => return Err(e),
        };
        let max_step = self.lipschitz_step();
        let mut step = max_step;
        for _ in 0..self.cfg.max_inner {
            if self.inner_total >= self.cfg.max_total_inner {
                break;
            }
            self.inner_total += 1;
            let (cand, fc, gc) = loop {
                let cand = soft_threshold(&(&a - &grad * step), step, mask);
                match smooth.eval(&cand) {
                    Ok((fc, gc)) => {
                        let d = &cand - &a;
                        let bound = f + grad.dot(&d) + d.norm_squared() / (2.0 * step);
                        if fc <= bound + 1e-12 * f.abs().max(1e-300) {
                            break (cand, fc, gc);
                        }
                    }
                    Err(Error::DomainViolation) => {}
                    Err(e) => return Err(e),
                }
                step *= 0.5;
                if step < MIN_STEP {
                    // no descent possible at machine precision: current point is stationary
                    self.a = a;
                    return Ok(());
                }
            };
            let change = (&cand - &a).norm();
            step = (2.0 * step).min(max_step);
            a = cand;
            f = fc;
            grad = gc;
            if !f.is_finite() {
                return Err(Error::NumericalFailure(
                    "non-finite A-subproblem objective".into(),
                ));
            }
            if change <= self.cfg.inner_tol * a.norm().max(1.0) {
                break;
            }
        }
        self.a = a;
        Ok(())
    }

    /// Up to `budget` iterations; true on convergence.
    fn iterate(&mut self, outer: usize, budget: usize) -> Result<bool> {
        let cfg = self.cfg;
        let sqrt_p = (self.b.nrows() as f64).sqrt();
        let remaining = cfg.max_total_admm.saturating_sub(self.admm_total);
        for _ in 0..budget.min(remaining) {
            if self.inner_total >= cfg.max_total_inner {
                break;
            }
            self.admm_total += 1;
            let r_a = self.b * (&self.id - &self.a) - &self.id;
            self.z = project_linf(&(&r_a - &self.v / self.rho), self.lambda)?;
            let c = self.b - &self.id - &self.z - &self.v / self.rho;
            let a_prev = self.a.clone();
            self.update_a(&c)?;
            if self.a.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalFailure("NaN in ADMM iterate".into()));
            }
            let primal_m = &self.z - residual(self.b, &self.a);
            self.v += &primal_m * self.rho;
            let delta_a = &self.a - &a_prev;
            let dual = (self.b * &delta_a).norm() * self.rho;
            let primal_max = max_abs(&primal_m);
            let primal_f = primal_m.norm();
            let rel_change = delta_a.norm() / a_prev.norm().max(1.0);
            let h = if self.mask.is_some() {
                0.0
            } else {
                acyclicity_term(cfg.acyclicity, &self.a).map_or(f64::INFINITY, |t| t.0)
            };
            self.trace.push(TraceRow {
                iteration: self.admm_total,
                outer,
                primal: primal_f,
                dual,
                h,
                objective: l1_norm(&self.a),
                rho: self.rho,
            });
            self.last = (primal_max, dual, rel_change);
            let n = self.trace.len();
            if n >= 2 * MONOTONE_WINDOW && n % MONOTONE_WINDOW == 0 {
                let window = |from: usize| -> f64 {
                    self.trace[from..from + MONOTONE_WINDOW]
                        .iter()
                        .map(|t| t.primal + t.dual)
                        .sum::<f64>()
                };
                if window(n - MONOTONE_WINDOW) > window(n - 2 * MONOTONE_WINDOW) {
                    self.monotonicity_warnings += 1;
                }
            }
            if primal_max <= cfg.primal_tol
                && dual <= cfg.dual_tol * sqrt_p
                && rel_change <= cfg.rel_change_tol
            {
                return Ok(true);
            }
            if cfg.rho_balancing && self.admm_total % BALANCE_EVERY == 0 {
                if primal_f > 10.0 * dual && self.rho < RHO_MAX {
                    self.rho *= 2.0;
                } else if dual > 10.0 * primal_f && self.rho > RHO_MIN {
                    self.rho *= 0.5;
                }
            }
        }
        Ok(false)
    }
}

/// Solves the constrained ℓ₁ program for a single `λ`.
///
/// `warm` seeds the coefficient matrix (e.g. the solution at a neighbouring λ).
/// When an outer round leaves small residual cycles and `cfg.polish` is set,
/// the problem is re-solved on the entries consistent with the greedy acyclic
/// order of the current iterate, where it is convex and `h` vanishes exactly.
pub fn admm_solve(
    b_hat: &Matrix,
    lambda: f64,
    cfg: &SolverConfig,
    warm: Option<&Matrix>,
) -> Result<SolverResult> {
    check_square_finite(b_hat)?;
    cfg.validate()?;
    let p = b_hat.nrows();
    if (0..p).any(|j| (b_hat[(j, j)] - 1.0).abs() > 1e-12) {
        return Err(Error::InvalidMatrix("B̂ must have a unit diagonal".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let a0 = match warm {
        Some(w) if w.shape() == (p, p) => {
            let mut w = w.clone();
            w.fill_diagonal(0.0);
            w
        }
        Some(_) => {
            return Err(Error::ShapeMismatch(
                "warm start has the wrong shape".into(),
            ))
        }
        None => Matrix::zeros(p, p),
    };
    let spectral = spectral_norm_estimate(b_hat, cfg.power_iterations);
    let z0 = project_linf(&residual(b_hat, &a0), lambda)?;
    let mut st = Admm {
        cfg,
        b: b_hat,
        bt: b_hat.transpose(),
        id: Matrix::identity(p, p),
        lambda,
        b_norm_sq: spectral * spectral,
        rho: cfg.rho,
        alpha: cfg.lag_alpha,
        mu: cfg.quad_mu,
        a: a0,
        z: z0,
        v: Matrix::zeros(p, p),
        mask: None,
        inner_total: 0,
        admm_total: 0,
        trace: Vec::new(),
        monotonicity_warnings: 0,
        last: (f64::NAN, f64::NAN, f64::NAN),
    };

    let mut h_prev = f64::INFINITY;
    let mut stalled = 0usize;
    let mut tried_orders: Vec<Vec<usize>> = Vec::new();
    for outer in 0..cfg.max_outer {
        let converged = st.iterate(outer, cfg.max_admm)?;
        let h = cfg.acyclicity.value(&st.a)?;
        debug!(outer, h, admm = st.admm_total, rho = st.rho, "outer round");
        if converged && h <= cfg.h_tol {
            return finish(st, outer + 1, h, false);
        }
        if cfg.polish && h > cfg.h_tol {
            let order = greedy_acyclic_order(&st.a)?;
            if !tried_orders.contains(&order) {
                let mask = order_mask(&order);
                tried_orders.push(order);
                let mut polished = st.clone();
                polished.a.component_mul_assign(&mask);
                polished.mask = Some(mask);
                if polished.iterate(outer, cfg.polish_iterations)? {
                    let h = cfg.acyclicity.value(&polished.a)?;
                    debug!(
                        outer,
                        admm = polished.admm_total,
                        "polished on a fixed order"
                    );
                    return finish(polished, outer + 1, h, true);
                }
                st.admm_total = polished.admm_total;
                st.inner_total = polished.inner_total;
                st.trace = polished.trace;
            }
        }
        if st.admm_total >= cfg.max_total_admm || st.inner_total >= cfg.max_total_inner {
            break;
        }
        if h > cfg.h_tol {
            let capped = st.mu >= cfg.quad_mu_max;
            stalled = if capped && h > STALL_RATIO * h_prev {
                stalled + 1
            } else {
                0
            };
            if stalled >= STALL_ROUNDS {
                return Err(Error::Infeasible(format!(
                    "acyclicity stalled at lambda {lambda:e}: h = {h:e} after {} outer rounds ({} iterations); \
                     the constraint set likely has no acyclic member",
                    outer + 1,
                    st.admm_total
                )));
            }
            st.alpha += st.mu * h;
            if h > 0.25 * h_prev {
                st.mu = (st.mu * cfg.quad_mu_growth).min(cfg.quad_mu_max);
            }
            h_prev = h;
        }
    }
    let h = cfg.acyclicity.value(&st.a).unwrap_or(f64::NAN);
    Err(Error::NotConverged(format!(
        "ADMM at lambda {lambda:e} stopped after {} iterations ({} inner): h = {h:e}, primal = {:e}, dual = {:e}, relative change = {:e}, gap = {:e}",
        st.admm_total,
        st.inner_total,
        st.last.0,
        st.last.1,
        st.last.2,
        max_abs(&residual(b_hat, &st.a)),
    )))
}

fn finish(
    st: Admm<'_>,
    outer_iterations: usize,
    h_value: f64,
    polished: bool,
) -> Result<SolverResult> {
    if st.monotonicity_warnings > 0 {
        warn!(
            warnings = st.monotonicity_warnings,
            "ADMM residual grew over some trailing windows"
        );
    }
    let a_thresholded = hard_threshold(&st.a, st.cfg.threshold)?;
    let graph = EdgeGraph::from_weights(&a_thresholded);
    Ok(SolverResult {
        lambda: st.lambda,
        feasibility_gap: max_abs(&residual(st.b, &st.a)),
        h_value,
        l1: l1_norm(&st.a),
        outer_iterations,
        admm_iterations: st.admm_total,
        inner_iterations: st.inner_total,
        trace: st.trace,
        a_thresholded,
        graph,
        monotonicity_warnings: st.monotonicity_warnings,
        polished,
        a_hat: st.a,
    })
}
