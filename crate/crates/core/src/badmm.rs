//! Three-block Bregman ADMM baseline.
//!
//! The quadratic penalty of ADMM is replaced by the KL divergence
//! D(Z, Y) = sum Z_ij (log(Z_ij / Y_ij) - 1), so the Z and Y blocks have
//! multiplicative closed forms: a column-wise softmax scaled to b_j and a
//! row-wise softmax scaled to w_i. One cycle updates Z, then w, then Y, then x,
//! then the multipliers.

use std::time::Instant;

use log::debug;
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::model::{
    cost_matrices, evaluate_objval, pinfeas_unchecked, BarycenterProblem, BarycenterState, Method,
    SolveReport, STATE_TOL,
};
use crate::numeric::row_sums;
use crate::pam::{init_state, x_update};
use crate::{Error, Result};

/// How the barycenter weights are refreshed between the Z and Y blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightUpdate {
    /// w = (1/N) sum_t Z^t e.
    #[default]
    RowMassMean,
    /// Exact minimizer of the Y block jointly over (Y, w in the simplex):
    /// w_i proportional to the geometric mean over t of sum_j Z_ij exp(Lambda_ij / rho).
    JointMinimizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BadmmConfig {
    /// KL penalty; `None` uses the mean entry of F(x^0) over all t.
    pub rho_kl: Option<f64>,
    pub pinf_tol: f64,
    pub k_max: usize,
    pub seed: u64,
    pub weight_update: WeightUpdate,
}

impl Default for BadmmConfig {
    fn default() -> Self {
        Self {
            rho_kl: None,
            pinf_tol: 1e-4,
            k_max: 2000,
            seed: 0,
            weight_update: WeightUpdate::RowMassMean,
        }
    }
}

impl BadmmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rho_kl {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::invalid(format!("KL penalty must be positive, got {r}")));
            }
        }
        if !(self.pinf_tol >= 0.0) || self.k_max == 0 {
            return Err(Error::invalid("need pinf_tol >= 0 and k_max >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BadmmState {
    pub plans: Vec<Array2<f64>>,
    pub split: Vec<Array2<f64>>,
    pub w: Array1<f64>,
    pub x: Array2<f64>,
    pub multipliers: Vec<Array2<f64>>,
    pub rho_kl: f64,
    pub weight_update: WeightUpdate,
}

impl BadmmState {
    /// Y^0 = Z^0 and zero multipliers on top of a barycenter state.
    pub fn from_state(state: BarycenterState, rho_kl: f64) -> Self {
        let multipliers = state.plans.iter().map(|z| Array2::zeros(z.dim())).collect();
        Self {
            split: state.plans.clone(),
            plans: state.plans,
            w: state.w,
            x: state.x,
            multipliers,
            rho_kl,
            weight_update: WeightUpdate::default(),
        }
    }

    pub fn to_barycenter_state(&self) -> BarycenterState {
        BarycenterState {
            plans: self.plans.clone(),
            w: self.w.clone(),
            x: self.x.clone(),
        }
    }
}

/// Mean entry of F(x) over all distributions; 1 when every entry is zero.
pub fn default_rho(x: &Array2<f64>, problem: &BarycenterProblem) -> Result<f64> {
    let costs = cost_matrices(x.view(), problem)?;
    let count: usize = costs.iter().map(|f| f.len()).sum();
    let total: f64 = costs.iter().map(|f| f.sum()).sum();
    let mean = total / count as f64;
    Ok(if mean > 0.0 && mean.is_finite() { mean } else { 1.0 })
}

/// Writes `target * softmax(logits)` into `out`; entries with -inf logits
/// get exactly zero mass. Returns false if every logit is -inf.
fn scaled_softmax(logits: &mut [f64], target: f64) -> bool {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    let scale = target / total;
    for l in logits.iter_mut() {
        *l *= scale;
    }
    true
}

fn ln_or_neg_inf(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// argmin over {z >= 0, sum z = mass} of <z, c> + rho sum z_i (log(z_i / y_i) - 1).
pub fn kl_column_update(y: &[f64], c: &[f64], rho: f64, mass: f64) -> Option<Vec<f64>> {
    let mut logits: Vec<f64> = y.iter().zip(c).map(|(&yi, &ci)| ln_or_neg_inf(yi) - ci / rho).collect();
    scaled_softmax(&mut logits, mass).then_some(logits)
}

/// One Z -> w -> Y -> x -> multiplier cycle.
pub fn badmm_step(state: &BadmmState, problem: &BarycenterProblem) -> Result<BadmmState> {
    let mut next = state.clone();
    step_in_place(&mut next, problem)?;
    Ok(next)
}

fn step_in_place(state: &mut BadmmState, problem: &BarycenterProblem) -> Result<()> {
    let rho = state.rho_kl;
    let m = problem.m();
    let costs = cost_matrices(state.x.view(), problem)?;

    // (a) Z columns: Z_ij proportional to Y_ij exp(-(F_ij + Lambda_ij)/rho), summing to b_j.
    state
        .plans
        .par_iter_mut()
        .zip(state.split.par_iter())
        .zip(state.multipliers.par_iter())
        .zip(costs.par_iter())
        .zip(problem.distributions().par_iter())
        .enumerate()
        .try_for_each(|(t, ((((z, y), lam), f), p))| -> Result<()> {
            let mut logits = vec![0.0; m];
            for (j, &bj) in p.weights().iter().enumerate() {
                for i in 0..m {
                    logits[i] = ln_or_neg_inf(y[[i, j]]) - (f[[i, j]] + lam[[i, j]]) / rho;
                }
                if !scaled_softmax(&mut logits, bj) {
                    return Err(Error::numerical(format!(
                        "distribution {t}, column {j}: split plan column is identically zero"
                    )));
                }
                for i in 0..m {
                    z[[i, j]] = logits[i];
                }
            }
            Ok(())
        })?;

    // (b) barycenter weights.
    let n = problem.n_distributions() as f64;
    state.w = match state.weight_update {
        WeightUpdate::RowMassMean => {
            let mut w = Array1::<f64>::zeros(m);
            for z in &state.plans {
                w += &row_sums(z.view());
            }
            w / n
        }
        WeightUpdate::JointMinimizer => {
            let logs: Vec<Array1<f64>> = state
                .plans
                .par_iter()
                .zip(state.multipliers.par_iter())
                .map(|(z, lam)| {
                    Array1::from_shape_fn(m, |i| {
                        let mut row: Vec<f64> =
                            (0..z.ncols()).map(|j| ln_or_neg_inf(z[[i, j]]) + lam[[i, j]] / rho).collect();
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        if max == f64::NEG_INFINITY {
                            return max;
                        }
                        row.iter_mut().for_each(|v| *v = (*v - max).exp());
                        max + row.iter().sum::<f64>().ln()
                    })
                })
                .collect();
            let mut logits = vec![0.0; m];
            for l in &logs {
                for i in 0..m {
                    logits[i] += l[i] / n;
                }
            }
            if !scaled_softmax(&mut logits, 1.0) {
                return Err(Error::numerical("every barycenter weight vanished"));
            }
            Array1::from(logits)
        }
    };

    // (c) Y rows: Y_ij proportional to Z_ij exp(Lambda_ij/rho), summing to w_i.
    let w = &state.w;
    state
        .split
        .par_iter_mut()
        .zip(state.plans.par_iter())
        .zip(state.multipliers.par_iter())
        .for_each(|((y, z), lam)| {
            let nt = z.ncols();
            let mut logits = vec![0.0; nt];
            for i in 0..m {
                if !(w[i] > 0.0) {
                    y.row_mut(i).fill(0.0);
                    continue;
                }
                for j in 0..nt {
                    logits[j] = ln_or_neg_inf(z[[i, j]]) + lam[[i, j]] / rho;
                }
                if !scaled_softmax(&mut logits, w[i]) {
                    // Row of Z^t is empty while other plans carry mass there:
                    // fall back to the multiplier weights alone.
                    for j in 0..nt {
                        logits[j] = lam[[i, j]] / rho;
                    }
                    scaled_softmax(&mut logits, w[i]);
                }
                for j in 0..nt {
                    y[[i, j]] = logits[j];
                }
            }
        });

    // (d) x = weighted means under Z (no proximal term).
    state.x = x_update(&state.plans, &state.x, 0.0, problem)?;

    // (e) Lambda += rho (Z - Y).
    state
        .multipliers
        .par_iter_mut()
        .zip(state.plans.par_iter())
        .zip(state.split.par_iter())
        .for_each(|((lam, z), y)| {
            ndarray::Zip::from(lam).and(z).and(y).for_each(|l, &zi, &yi| *l += rho * (zi - yi));
        });

    let finite = state.plans.iter().chain(&state.split).chain(&state.multipliers).all(|a| a.iter().all(|v| v.is_finite()))
        && state.x.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::numerical("non-finite B-ADMM iterate"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BadmmSolution {
    pub state: BadmmState,
    pub report: SolveReport,
}

pub fn solve_badmm(problem: &BarycenterProblem, config: &BadmmConfig) -> Result<BadmmSolution> {
    solve_badmm_from(problem, config, init_state(problem, config.seed))
}

/// Runs B-ADMM from a feasible barycenter state (typically the one PAM uses).
pub fn solve_badmm_from(
    problem: &BarycenterProblem,
    config: &BadmmConfig,
    init: BarycenterState,
) -> Result<BadmmSolution> {
    config.validate()?;
    init.check_shapes(problem)?;
    let violation = init.membership_violation(problem);
    if violation > STATE_TOL {
        return Err(Error::invalid(format!(
            "starting plans/weights violate their constraint sets by {violation:e}"
        )));
    }
    let start = Instant::now();
    let rho = match config.rho_kl {
        Some(r) => r,
        None => default_rho(&init.x, problem)?,
    };
    let b_norm = problem.stacked_weight_norm();
    let mut state = BadmmState::from_state(init, rho);
    state.weight_update = config.weight_update;
    let mut pin = f64::INFINITY;
    let mut iterations = 0;
    for k in 0..config.k_max {
        step_in_place(&mut state, problem)?;
        iterations = k + 1;
        pin = pinfeas_unchecked(&state.plans, &state.w, b_norm);
        if pin <= config.pinf_tol {
            break;
        }
    }
    debug!("badmm stopped after {iterations} iterations, pinfeas {pin:.3e}");
    let objval = evaluate_objval(&state.w, state.x.view(), problem)?;
    let report = SolveReport {
        method: Method::Badmm,
        objval,
        pinfeas: pin,
        outer_iterations: iterations,
        inner_iterations: iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: pin <= config.pinf_tol,
        m: problem.m(),
        seed: config.seed,
        config: vec![
            ("rho_kl".to_string(), format!("{rho:e}")),
            ("pinf_tol".to_string(), format!("{:e}", config.pinf_tol)),
            ("k_max".to_string(), config.k_max.to_string()),
            ("weight_update".to_string(), format!("{:?}", config.weight_update)),
        ],
    };
    Ok(BadmmSolution { state, report })
}

/// Column sums of each Z^t and row sums of each Y^t against their targets.
pub fn marginal_violation(state: &BadmmState, problem: &BarycenterProblem) -> f64 {
    let mut worst = 0.0_f64;
    for ((z, y), p) in state.plans.iter().zip(&state.split).zip(problem.distributions()) {
        for (s, b) in z.sum_axis(Axis(0)).iter().zip(p.weights()) {
            worst = worst.max((s - b).abs());
        }
        for (s, w) in y.sum_axis(Axis(1)).iter().zip(&state.w) {
            worst = worst.max((s - w).abs());
        }
        worst = worst.max(-z.iter().copied().fold(0.0, f64::min));
        worst = worst.max(-y.iter().copied().fold(0.0, f64::min));
    }
    worst.max((state.w.sum() - 1.0).abs())
}
