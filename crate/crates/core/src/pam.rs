//! Inexact proximal alternating minimization (PAM) for the free-support
//! barycenter problem.
//!
//! Each outer iteration solves the (Z, w) block as a proximal QP with the
//! semi-proximal ADMM of [`crate::spadmm`], updates the support x in closed
//! form, then adjusts the proximal weight and inner tolerance schedules.

use std::collections::HashSet;
use std::time::Instant;

use log::{debug, warn};
use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{
    cost_matrices, evaluate_objval, objective, pinfeas_unchecked, BarycenterProblem, BarycenterState,
    Method, SolveReport, STATE_TOL,
};
use crate::numeric::{frob_dot, sq_dist, sq_dist1};
use crate::spadmm::{solve_subproblem, QpSubproblem, SpadmmConfig, SpadmmState};
use crate::{Error, Result};

/// Factor applied to alpha when the proximal energy test fires.
const ALPHA_DECAY: f64 = 0.1;
/// Proximal energy threshold, relative to the objective.
const ALPHA_ENERGY_RATIO: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PamConfig {
    pub alpha0: f64,
    pub alpha_min: f64,
    /// Constant proximal weight of the x block.
    pub rho: f64,
    pub eps0: f64,
    pub eps_decay: f64,
    pub eps_min: f64,
    pub pinf_tol: f64,
    pub k_max: usize,
    pub seed: u64,
    pub inner: SpadmmConfig,
    /// Overrides the eps schedule with a fixed inner tolerance.
    pub fixed_inner_tol: Option<f64>,
}

impl Default for PamConfig {
    fn default() -> Self {
        Self {
            alpha0: 100.0,
            alpha_min: 1e-8,
            rho: 1e-5,
            eps0: 5e-2,
            eps_decay: 0.8,
            eps_min: 1e-5,
            pinf_tol: 1e-4,
            k_max: 100,
            seed: 0,
            inner: SpadmmConfig::default(),
            fixed_inner_tol: None,
        }
    }
}

impl PamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min > 0.0 && self.alpha0 >= self.alpha_min) {
            return Err(Error::invalid("need alpha0 >= alpha_min > 0"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::invalid("rho must be positive"));
        }
        if !(self.eps_min > 0.0 && self.eps0 >= self.eps_min) {
            return Err(Error::invalid("need eps0 >= eps_min > 0"));
        }
        if !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return Err(Error::invalid("eps_decay must lie in (0, 1)"));
        }
        if !(self.pinf_tol >= 0.0) || self.k_max == 0 {
            return Err(Error::invalid("need pinf_tol >= 0 and k_max >= 1"));
        }
        if let Some(tol) = self.fixed_inner_tol {
            if !(tol > 0.0) {
                return Err(Error::invalid("fixed inner tolerance must be positive"));
            }
        }
        self.inner.validate()
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("alpha0".to_string(), format!("{:e}", self.alpha0)),
            ("alpha_min".to_string(), format!("{:e}", self.alpha_min)),
            ("rho".to_string(), format!("{:e}", self.rho)),
            ("eps0".to_string(), format!("{:e}", self.eps0)),
            ("eps_decay".to_string(), format!("{}", self.eps_decay)),
            ("eps_min".to_string(), format!("{:e}", self.eps_min)),
            ("pinf_tol".to_string(), format!("{:e}", self.pinf_tol)),
            ("k_max".to_string(), self.k_max.to_string()),
            ("tau".to_string(), format!("{}", self.inner.tau)),
            ("beta0".to_string(), format!("{}", self.inner.beta0)),
            ("adaptive_beta".to_string(), self.inner.adaptive_beta.to_string()),
            ("max_sweeps".to_string(), self.inner.max_sweeps.to_string()),
        ];
        if let Some(tol) = self.fixed_inner_tol {
            out.push(("fixed_inner_tol".to_string(), format!("{tol:e}")));
        }
        out
    }
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PamRecord {
    /// Objective at (Z^{k+1}, w^{k+1}, x^{k+1}).
    pub psi: f64,
    pub pinfeas: f64,
    pub alpha: f64,
    pub eps: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub inner_converged: bool,
    /// ||U^{k+1} - U^k|| over all blocks (Z, w, x).
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PamTrace {
    pub initial_psi: f64,
    pub records: Vec<PamRecord>,
}

impl PamTrace {
    /// Largest single-step increase of the objective, including the first step.
    pub fn max_increase(&self) -> f64 {
        let mut prev = self.initial_psi;
        let mut worst = f64::NEG_INFINITY;
        for r in &self.records {
            worst = worst.max(r.psi - prev);
            prev = r.psi;
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterSolution {
    pub state: BarycenterState,
    pub report: SolveReport,
    pub trace: PamTrace,
}

/// Feasible starting point: w = e/m, Z^t = (1/m) e (b^t)^T, and x sampled from
/// the distinct points of the pooled support.
///
/// When fewer than m distinct points exist all of them are used and the rest
/// are drawn with replacement.
pub fn init_state(problem: &BarycenterProblem, seed: u64) -> BarycenterState {
    let m = problem.m();
    let d = problem.dim();
    let mf = m as f64;
    let plans = problem
        .distributions()
        .iter()
        .map(|p| {
            let b = p.weights();
            Array2::from_shape_fn((m, b.len()), |(_, j)| b[j] / mf)
        })
        .collect();
    let w = Array1::from_elem(m, 1.0 / mf);

    let mut seen = HashSet::new();
    let mut pool: Vec<Array1<f64>> = Vec::new();
    for p in problem.distributions() {
        for a in p.support().outer_iter() {
            let key: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                pool.push(a.to_owned());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if pool.len() >= m {
        sample(&mut rng, pool.len(), m).into_vec()
    } else {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.extend((pool.len()..m).map(|_| rng.random_range(0..pool.len())));
        idx
    };
    let mut x = Array2::zeros((m, d));
    for (row, &i) in x.outer_iter_mut().zip(&chosen) {
        let mut row = row;
        row.assign(&pool[i]);
    }
    BarycenterState { plans, w, x }
}

/// Closed-form minimizer of
/// (1/N) sum_t sum_ij Z_ij ||x_i - a_j||^2 + (rho/2) ||x - x_prev||^2.
///
/// A row with zero transported mass keeps its previous position when
/// rho = 0.
pub fn x_update(
    plans: &[Array2<f64>],
    x_prev: &Array2<f64>,
    rho: f64,
    problem: &BarycenterProblem,
) -> Result<Array2<f64>> {
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("rho must be nonnegative, got {rho}")));
    }
    let (m, d) = x_prev.dim();
    if m != problem.m() || d != problem.dim() || plans.len() != problem.n_distributions() {
        return Err(Error::dim("x_update: plans or x do not match the problem"));
    }
    let partial: Vec<(Array2<f64>, Array1<f64>)> = plans
        .par_iter()
        .zip(problem.distributions().par_iter())
        .map(|(z, p)| (z.dot(p.support()), z.sum_axis(Axis(1))))
        .collect();
    let mut weighted = Array2::<f64>::zeros((m, d));
    let mut mass = Array1::<f64>::zeros(m);
    for (za, zm) in &partial {
        weighted += za;
        mass += zm;
    }
    let rho_n = rho * problem.n_distributions() as f64;
    let mut x = Array2::zeros((m, d));
    for i in 0..m {
        let denom = 2.0 * mass[i] + rho_n;
        if denom > 0.0 {
            for k in 0..d {
                x[[i, k]] = (2.0 * weighted[[i, k]] + rho_n * x_prev[[i, k]]) / denom;
            }
        } else {
            x.row_mut(i).assign(&x_prev.row(i));
        }
    }
    Ok(x)
}

/// Next (alpha, eps).
///
/// eps shrinks geometrically to its floor; alpha drops by a factor ten (to
/// its floor) when (alpha/2) ||U_{Z,w}^{k+1} - U_{Z,w}^k||^2 exceeds 1e-5
/// times f(Z^{k+1}, w^{k+1}, x^k).
pub fn update_schedules(
    alpha: f64,
    eps: f64,
    prox_change_sq: f64,
    f_value: f64,
    config: &PamConfig,
) -> (f64, f64) {
    let eps_next = config.eps_min.max(config.eps_decay * eps);
    let alpha_next = if 0.5 * alpha * prox_change_sq > ALPHA_ENERGY_RATIO * f_value {
        config.alpha_min.max(ALPHA_DECAY * alpha)
    } else {
        alpha
    };
    (alpha_next, eps_next)
}

pub fn solve_barycenter(problem: &BarycenterProblem, config: &PamConfig) -> Result<BarycenterSolution> {
    let init = init_state(problem, config.seed);
    solve_barycenter_from(problem, config, init)
}

/// Runs PAM from a given feasible starting state.
pub fn solve_barycenter_from(
    problem: &BarycenterProblem,
    config: &PamConfig,
    init: BarycenterState,
) -> Result<BarycenterSolution> {
    config.validate()?;
    init.check_shapes(problem)?;
    let violation = init.membership_violation(problem);
    if violation > STATE_TOL {
        return Err(Error::invalid(format!(
            "starting plans/weights violate their constraint sets by {violation:e}"
        )));
    }
    let start = Instant::now();
    let n = problem.n_distributions() as f64;
    let b_norm = problem.stacked_weight_norm();
    let marginals: Vec<Array1<f64>> = problem.distributions().iter().map(|p| p.weights().clone()).collect();

    let mut state = init;
    let mut trace = PamTrace {
        initial_psi: objective(&state, problem)?,
        records: Vec::new(),
    };
    let mut alpha = config.alpha0;
    let mut eps = config.eps0;
    let mut warm: Option<SpadmmState> = None;
    let mut inner_total = 0usize;
    let mut pin = f64::INFINITY;

    for k in 0..config.k_max {
        let costs = cost_matrices(state.x.view(), problem)?;
        let sub = QpSubproblem::new(costs, state.plans.clone(), state.w.clone(), alpha, marginals.clone())?;
        let tol = config.fixed_inner_tol.unwrap_or(eps);
        let sol = solve_subproblem(&sub, tol, &config.inner, warm.take())?;
        inner_total += sol.sweeps;
        if !sol.converged {
            warn!(
                "outer iteration {k}: inner solver stopped after {} sweeps (eta_p = {:e}, eta_gap = {:e})",
                sol.sweeps, sol.residuals.eta_p, sol.residuals.eta_gap
            );
        }

        let plans = sol.state.plans.clone();
        let w = sol.state.w.clone();
        let prox_sq: f64 = plans
            .iter()
            .zip(&state.plans)
            .map(|(a, b)| sq_dist(a.view(), b.view()))
            .sum::<f64>()
            + sq_dist1(w.view(), state.w.view());
        let f_mid: f64 = plans
            .iter()
            .zip(sub.costs())
            .map(|(z, f)| frob_dot(z.view(), f.view()))
            .sum::<f64>()
            / n;
        let x = x_update(&plans, &state.x, config.rho, problem)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite support at outer iteration {k}")));
        }
        let gap = (prox_sq + sq_dist(x.view(), state.x.view())).sqrt();

        state = BarycenterState { plans, w, x };
        pin = pinfeas_unchecked(&state.plans, &state.w, b_norm);
        let psi = objective(&state, problem)?;
        trace.records.push(PamRecord {
            psi,
            pinfeas: pin,
            alpha,
            eps: tol,
            beta: sol.state.beta,
            sweeps: sol.sweeps,
            inner_converged: sol.converged,
            gap,
        });
        debug!("pam k={k} psi={psi:.10e} pinfeas={pin:.3e} alpha={alpha:.1e} sweeps={}", sol.sweeps);

        warm = Some(sol.state);
        if pin <= config.pinf_tol {
            break;
        }
        (alpha, eps) = update_schedules(alpha, eps, prox_sq, f_mid, config);
    }

    let objval = evaluate_objval(&state.w, state.x.view(), problem)?;
    let report = SolveReport {
        method: Method::Pam,
        objval,
        pinfeas: pin,
        outer_iterations: trace.records.len(),
        inner_iterations: inner_total,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: pin <= config.pinf_tol,
        m: problem.m(),
        seed: config.seed,
        config: config.echo(),
    };
    Ok(BarycenterSolution { state, report, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiscreteDistribution;
    use ndarray::array;

    fn one_point_problem(a: f64) -> BarycenterProblem {
        let p = DiscreteDistribution::new(array![[a]], array![1.0]).unwrap();
        BarycenterProblem::new(vec![p], 1).unwrap()
    }

    #[test]
    fn init_state_example() {
        let p = DiscreteDistribution::new(array![[0.0], [1.0]], array![0.3, 0.7]).unwrap();
        let problem = BarycenterProblem::new(vec![p], 2).unwrap();
        let s = init_state(&problem, 1);
        let expected = array![[0.15, 0.35], [0.15, 0.35]];
        for (a, b) in s.plans[0].iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-16);
        }
        assert_eq!(s.w, array![0.5, 0.5]);
        assert_eq!(pinfeas_unchecked(&s.plans, &s.w, problem.stacked_weight_norm()), 0.0);
        // Both distinct points are used.
        let mut xs: Vec<f64> = s.x.iter().copied().collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 1.0]);
    }

    #[test]
    fn init_state_is_seed_deterministic() {
        let p = DiscreteDistribution::new(
            array![[0.0, 1.0], [1.0, 2.0], [3.0, 1.0], [2.0, 2.0]],
            array![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let problem = BarycenterProblem::new(vec![p], 2).unwrap();
        assert_eq!(init_state(&problem, 5), init_state(&problem, 5));
    }

    #[test]
    fn init_state_fills_with_replacement() {
        let p = DiscreteDistribution::new(array![[0.0], [1.0]], array![0.5, 0.5]).unwrap();
        let problem = BarycenterProblem::new(vec![p.clone(), p], 5).unwrap();
        let s = init_state(&problem, 3);
        assert_eq!(s.x.nrows(), 5);
        assert_eq!(s.x[[0, 0]], 0.0);
        assert_eq!(s.x[[1, 0]], 1.0);
        assert!(s.x.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn x_update_examples() {
        let problem = one_point_problem(2.0);
        let z = vec![array![[1.0]]];
        assert_eq!(x_update(&z, &array![[0.0]], 0.0, &problem).unwrap(), array![[2.0]]);
        let x = x_update(&z, &array![[0.0]], 1.0, &problem).unwrap();
        assert!((x[[0, 0]] - 4.0 / 3.0).abs() < 1e-15);

        let zero = vec![array![[0.0]]];
        assert_eq!(x_update(&zero, &array![[0.7]], 1.0, &problem).unwrap(), array![[0.7]]);
        assert_eq!(x_update(&zero, &array![[0.7]], 0.0, &problem).unwrap(), array![[0.7]]);
    }

    #[test]
    fn x_update_matches_numeric_minimization() {
        // Golden-section search on the 1-D objective 1*(x-2)^2 + 0.5*(x-0)^2.
        let f = |x: f64| (x - 2.0) * (x - 2.0) + 0.5 * x * x;
        let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        assert!((0.5 * (lo + hi) - 4.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn schedule_examples() {
        let c = PamConfig::default();
        let (_, eps) = update_schedules(100.0, 5e-2, 0.0, 1.0, &c);
        assert!((eps - 4e-2).abs() < 1e-17);
        let (alpha, _) = update_schedules(100.0, 5e-2, 1.0, 1.0, &c);
        assert!((alpha - 10.0).abs() < 1e-12);
        let (alpha, _) = update_schedules(1e-8, 5e-2, 1.0, 1.0, &c);
        assert_eq!(alpha, 1e-8);
        let (alpha, eps) = update_schedules(100.0, 1e-5, 1e-12, 1.0, &c);
        assert_eq!(alpha, 100.0);
        assert_eq!(eps, 1e-5);
    }

    #[test]
    fn config_validation() {
        assert!(PamConfig::default().validate().is_ok());
        let bad = PamConfig { eps_decay: 1.0, ..PamConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PamConfig { alpha_min: 200.0, ..PamConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn exact_barycenter_is_a_fixed_point() {
        let p = DiscreteDistribution::new(array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], array![0.2, 0.3, 0.5]).unwrap();
        let problem = BarycenterProblem::new(vec![p.clone(); 4], 3).unwrap();
        let diag = Array2::from_diag(p.weights());
        let init = BarycenterState { plans: vec![diag; 4], w: p.weights().clone(), x: p.support().clone() };
        let config = PamConfig { pinf_tol: 0.0, k_max: 20, ..PamConfig::default() };
        let sol = solve_barycenter_from(&problem, &config, init).unwrap();
        assert!(sol.report.objval <= 1e-12, "objval {}", sol.report.objval);
        assert!((&sol.state.x - p.support()).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn identical_copies_stop_on_pinfeas_with_descent() {
        let p = DiscreteDistribution::new(array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], array![0.2, 0.3, 0.5]).unwrap();
        let problem = BarycenterProblem::new(vec![p.clone(); 4], 3).unwrap();
        let mut init = init_state(&problem, 0);
        init.x = p.support().clone();
        let sol = solve_barycenter_from(&problem, &PamConfig::default(), init).unwrap();
        assert!(sol.report.converged);
        assert!(sol.report.pinfeas <= 1e-4);
        assert!(sol.trace.max_increase() <= 1e-12);
    }
}
