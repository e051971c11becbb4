//! Semi-proximal ADMM for the strongly convex QP solved in each outer PAM
//! iteration:
//!
//! ```text
//! min  sum_t [ <Z^t, F^t>/N + (a/2)||Z^t - Z^{t,k}||^2 ] + (a/2)||w - w^k||^2
//! s.t. Z^t in Sigma_t,  w in simplex,  Z^t e = w  (t = 1..N)
//! ```
//!
//! With the proximal operator S^t = (sigma_t - a) I - beta A^t, A^t(X) = X e e^T
//! and sigma_t = a + beta n_t, every Z^t block reduces to n_t column-wise
//! simplex projections and the w block to one projection onto the simplex.

use ndarray::{Array1, Array2, Axis, Zip};
use rayon::prelude::*;

use crate::numeric::{all_finite2, frob_dot, row_sums, sq_dist, sq_dist1, sq_norm};
use crate::projections::{project_sigma_in_place, project_simplex_in_place};
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 1.618;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Frozen data of one QP subproblem.
#[derive(Debug, Clone)]
pub struct QpSubproblem {
    costs: Vec<Array2<f64>>,
    anchor_plans: Vec<Array2<f64>>,
    anchor_w: Array1<f64>,
    alpha: f64,
    marginals: Vec<Array1<f64>>,
    b_norm: f64,
}

impl QpSubproblem {
    pub fn new(
        costs: Vec<Array2<f64>>,
        anchor_plans: Vec<Array2<f64>>,
        anchor_w: Array1<f64>,
        alpha: f64,
        marginals: Vec<Array1<f64>>,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("proximal weight must be positive, got {alpha}")));
        }
        let n = costs.len();
        if n == 0 || anchor_plans.len() != n || marginals.len() != n {
            return Err(Error::dim("costs, anchors and marginals must have one entry per distribution"));
        }
        let m = anchor_w.len();
        for t in 0..n {
            let shape = (m, marginals[t].len());
            if costs[t].dim() != shape || anchor_plans[t].dim() != shape {
                return Err(Error::dim(format!(
                    "block {t}: cost {:?}, anchor {:?}, expected {shape:?}",
                    costs[t].dim(),
                    anchor_plans[t].dim()
                )));
            }
            if marginals[t].iter().any(|b| !(*b > 0.0)) {
                return Err(Error::invalid(format!("block {t}: column masses must be positive")));
            }
            if !all_finite2(&costs[t]) || !all_finite2(&anchor_plans[t]) {
                return Err(Error::invalid(format!("block {t}: non-finite data")));
            }
        }
        let b_norm = marginals.iter().map(|b| sq_norm(b.view())).sum::<f64>().sqrt();
        Ok(Self {
            costs,
            anchor_plans,
            anchor_w,
            alpha,
            marginals,
            b_norm,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.costs.len()
    }

    pub fn m(&self) -> usize {
        self.anchor_w.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn costs(&self) -> &[Array2<f64>] {
        &self.costs
    }

    pub fn anchor_plans(&self) -> &[Array2<f64>] {
        &self.anchor_plans
    }

    pub fn anchor_w(&self) -> &Array1<f64> {
        &self.anchor_w
    }

    pub fn marginals(&self) -> &[Array1<f64>] {
        &self.marginals
    }

    pub fn stacked_weight_norm(&self) -> f64 {
        self.b_norm
    }

    /// sigma_t = alpha + beta n_t.
    pub fn sigma(&self, t: usize, beta: f64) -> f64 {
        self.alpha + beta * self.marginals[t].len() as f64
    }

    /// Primal objective of the QP at (plans, w).
    pub fn primal_objective(&self, plans: &[Array2<f64>], w: &Array1<f64>) -> f64 {
        let inv_n = 1.0 / self.n_blocks() as f64;
        let half_a = 0.5 * self.alpha;
        let blocks: Vec<f64> = plans
            .iter()
            .zip(&self.costs)
            .zip(&self.anchor_plans)
            .map(|((z, f), zk)| inv_n * frob_dot(z.view(), f.view()) + half_a * sq_dist(z.view(), zk.view()))
            .collect();
        blocks.iter().sum::<f64>() + half_a * sq_dist1(w.view(), self.anchor_w.view())
    }

    /// Maximized value of the Lagrangian dual at multipliers `lambda`.
    ///
    /// Terms are assembled from (a G_t) and (a H) rather than G_t and H so the
    /// value stays well conditioned when alpha is tiny.
    pub fn dual_value(&self, lambda: &[Array1<f64>]) -> f64 {
        let a = self.alpha;
        let inv_n = 1.0 / self.n_blocks() as f64;
        let blocks: Vec<f64> = (0..self.n_blocks())
            .into_par_iter()
            .map(|t| {
                // a G_t = a Z^{t,k} - F^t / N - lambda^t e^T
                let mut ag = self.anchor_plans[t].clone();
                Zip::from(ag.rows_mut())
                    .and(self.costs[t].rows())
                    .and(&lambda[t])
                    .for_each(|mut row, f, &l| {
                        Zip::from(&mut row).and(&f).for_each(|g, &fi| *g = a * *g - fi * inv_n - l);
                    });
                let mut proj = ag.mapv(|v| v / a);
                project_sigma_in_place(proj.view_mut(), self.marginals[t].view());
                0.5 * a * proj.iter().map(|p| p * p).sum::<f64>() - frob_dot(ag.view(), proj.view())
                    + 0.5 * a * self.anchor_plans[t].iter().map(|z| z * z).sum::<f64>()
            })
            .collect();
        // a H = a w^k + sum_t lambda^t
        let mut ah = self.anchor_w.mapv(|v| a * v);
        for l in lambda {
            ah += l;
        }
        let mut proj = ah.mapv(|v| v / a).to_vec();
        let mut scratch = Vec::with_capacity(proj.len());
        project_simplex_in_place(&mut proj, 1.0, &mut scratch);
        let proj = Array1::from(proj);
        let w_term = 0.5 * a * sq_norm(proj.view()) - ah.dot(&proj) + 0.5 * a * sq_norm(self.anchor_w.view());
        blocks.iter().sum::<f64>() + w_term
    }
}

/// Parameters of the inner solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SpadmmConfig {
    pub beta0: f64,
    pub tau: f64,
    pub max_sweeps: usize,
    /// Residual balancing of beta every `adapt_every` sweeps.
    pub adaptive_beta: bool,
    pub adapt_every: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for SpadmmConfig {
    fn default() -> Self {
        Self {
            beta0: DEFAULT_BETA,
            tau: DEFAULT_TAU,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            adaptive_beta: true,
            adapt_every: 50,
            beta_min: 1e-4,
            beta_max: 1e4,
        }
    }
}

impl SpadmmConfig {
    pub fn validate(&self) -> Result<()> {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        if !(self.beta0 > 0.0) || !(self.tau > 0.0 && self.tau < golden) {
            return Err(Error::invalid(format!(
                "need beta > 0 and 0 < tau < (1+sqrt 5)/2, got beta = {}, tau = {}",
                self.beta0, self.tau
            )));
        }
        if self.max_sweeps == 0 || self.adapt_every == 0 {
            return Err(Error::invalid("sweep counts must be positive"));
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max) {
            return Err(Error::invalid("beta bounds must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

/// Iterate of the inner solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SpadmmState {
    pub plans: Vec<Array2<f64>>,
    pub w: Array1<f64>,
    pub lambda: Vec<Array1<f64>>,
    pub beta: f64,
    pub tau: f64,
}

impl SpadmmState {
    /// Starts at the anchors with zero multipliers.
    pub fn from_anchors(sub: &QpSubproblem, beta: f64, tau: f64) -> Self {
        Self {
            plans: sub.anchor_plans.clone(),
            w: sub.anchor_w.clone(),
            lambda: vec![Array1::zeros(sub.m()); sub.n_blocks()],
            beta,
            tau,
        }
    }

    fn row_residuals(&self) -> Vec<Array1<f64>> {
        self.plans
            .iter()
            .map(|z| row_sums(z.view()) - &self.w)
            .collect()
    }

    fn residual_norm(&self) -> f64 {
        self.row_residuals()
            .iter()
            .map(|r| sq_norm(r.view()))
            .sum::<f64>()
            .sqrt()
    }
}

/// Scaled primal residual, relative duality gap, and the two objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub eta_p: f64,
    pub eta_gap: f64,
    pub eta: f64,
    pub obj_p: f64,
    /// Negated dual value, so that obj_p + obj_d vanishes at the optimum.
    pub obj_d: f64,
}

/// |obj_p + obj_d| / (1 + |obj_p| + |obj_d|).
pub fn relative_gap(obj_p: f64, obj_d: f64) -> f64 {
    (obj_p + obj_d).abs() / (1.0 + obj_p.abs() + obj_d.abs())
}

fn eta_p(state: &SpadmmState, sub: &QpSubproblem) -> f64 {
    state.residual_norm() / (state.tau * state.beta * (1.0 + sub.b_norm))
}

pub fn residuals(state: &SpadmmState, sub: &QpSubproblem) -> Residuals {
    let eta_p = eta_p(state, sub);
    let obj_p = sub.primal_objective(&state.plans, &state.w);
    let obj_d = -sub.dual_value(&state.lambda);
    let eta_gap = relative_gap(obj_p, obj_d);
    Residuals {
        eta_p,
        eta_gap,
        eta: eta_p.max(eta_gap),
        obj_p,
        obj_d,
    }
}

/// One sweep: Z blocks, then w, then the multipliers.
pub fn spadmm_step(state: &SpadmmState, sub: &QpSubproblem) -> Result<SpadmmState> {
    let mut next = state.clone();
    step_in_place(&mut next, sub)?;
    Ok(next)
}

fn step_in_place(state: &mut SpadmmState, sub: &QpSubproblem) -> Result<()> {
    let beta = state.beta;
    let alpha = sub.alpha;
    let inv_n = 1.0 / sub.n_blocks() as f64;
    let w = &state.w;

    // (a) Z^t = Pi_Sigma(H^t / sigma_t), with
    // H^t = (sigma_t - a) Z - beta (Z e) e^T + a Z^k - F/N + beta w e^T - lambda e^T.
    state
        .plans
        .par_iter_mut()
        .zip(state.lambda.par_iter())
        .enumerate()
        .for_each(|(t, (z, lambda))| {
            let sigma = sub.sigma(t, beta);
            let rows = row_sums(z.view());
            let inv_sigma = 1.0 / sigma;
            let shift = sigma - alpha;
            Zip::from(z.rows_mut())
                .and(sub.anchor_plans[t].rows())
                .and(sub.costs[t].rows())
                .and(&rows)
                .and(w)
                .and(lambda)
                .for_each(|mut zr, zkr, fr, &ri, &wi, &li| {
                    let row_term = beta * (wi - ri) - li;
                    Zip::from(&mut zr).and(&zkr).and(&fr).for_each(|zij, &zk, &f| {
                        *zij = (shift * *zij + alpha * zk - f * inv_n + row_term) * inv_sigma;
                    });
                });
            project_sigma_in_place(z.view_mut(), sub.marginals[t].view());
        });

    // (b) w = Pi_Delta( [sum_t (beta Z^t e + lambda^t) + a w^k] / (beta N + a) ).
    let denom = beta * sub.n_blocks() as f64 + alpha;
    let mut target = sub.anchor_w.mapv(|v| alpha * v);
    let new_rows: Vec<Array1<f64>> = state.plans.iter().map(|z| row_sums(z.view())).collect();
    for (r, l) in new_rows.iter().zip(&state.lambda) {
        Zip::from(&mut target).and(r).and(l).for_each(|x, &ri, &li| *x += beta * ri + li);
    }
    let mut w_new: Vec<f64> = target.iter().map(|v| v / denom).collect();
    if w_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite weights in inner sweep"));
    }
    let mut scratch = Vec::with_capacity(w_new.len());
    project_simplex_in_place(&mut w_new, 1.0, &mut scratch);
    state.w = Array1::from(w_new);

    // (c) lambda^t += tau beta (Z^t e - w).
    let step = state.tau * beta;
    for (l, r) in state.lambda.iter_mut().zip(&new_rows) {
        Zip::from(l).and(r).and(&state.w).for_each(|li, &ri, &wi| *li += step * (ri - wi));
    }

    if state.plans.iter().any(|z| !all_finite2(z)) || state.lambda.iter().any(|l| l.iter().any(|v| !v.is_finite())) {
        return Err(Error::numerical(format!(
            "non-finite iterate in inner sweep (beta = {beta}, alpha = {alpha})"
        )));
    }
    Ok(())
}

/// Result of an inner solve.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub state: SpadmmState,
    pub residuals: Residuals,
    pub sweeps: usize,
    pub converged: bool,
}

/// Runs sweeps until max(eta_P, 0.1 eta_gap) <= eps or the sweep cap is hit.
///
/// `warm` supplies the starting (Z, w, lambda, beta); otherwise the solve
/// starts at the anchors with zero multipliers and `config.beta0`. On hitting
/// the cap the last iterate is returned with `converged = false`.
pub fn solve_subproblem(
    sub: &QpSubproblem,
    eps: f64,
    config: &SpadmmConfig,
    warm: Option<SpadmmState>,
) -> Result<SubproblemSolution> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("inner tolerance must be positive, got {eps}")));
    }
    config.validate()?;
    let mut state = match warm {
        Some(s) => {
            if s.plans.len() != sub.n_blocks() || s.w.len() != sub.m() || s.lambda.len() != sub.n_blocks() {
                return Err(Error::dim("warm start does not match the subproblem"));
            }
            s
        }
        None => SpadmmState::from_anchors(sub, config.beta0, config.tau),
    };

    let stop = |state: &SpadmmState| -> Option<Residuals> {
        // The gap needs an extra projection per column, so it is only
        // evaluated once the cheap primal test passes.
        if eta_p(state, sub) > eps {
            return None;
        }
        let r = residuals(state, sub);
        (r.eta_p.max(0.1 * r.eta_gap) <= eps).then_some(r)
    };

    for sweep in 1..=config.max_sweeps {
        let w_prev = if config.adaptive_beta && sweep % config.adapt_every == 0 {
            Some(state.w.clone())
        } else {
            None
        };
        step_in_place(&mut state, sub)?;
        if let Some(r) = stop(&state) {
            return Ok(SubproblemSolution {
                state,
                residuals: r,
                sweeps: sweep,
                converged: true,
            });
        }
        if let Some(w_prev) = w_prev {
            let primal = state.residual_norm();
            let dual = state.beta * sq_dist1(state.w.view(), w_prev.view()).sqrt();
            if primal > 10.0 * dual {
                state.beta = (2.0 * state.beta).min(config.beta_max);
            } else if dual > 10.0 * primal {
                state.beta = (0.5 * state.beta).max(config.beta_min);
            }
        }
    }
    let r = residuals(&state, sub);
    Ok(SubproblemSolution {
        state,
        residuals: r,
        sweeps: config.max_sweeps,
        converged: false,
    })
}

/// <X, S X> for S = (sigma - a) I - beta A, A(X) = X e e^T.
pub fn semi_proximal_quadratic(x: &Array2<f64>, sigma: f64, alpha: f64, beta: f64) -> f64 {
    let rows = x.sum_axis(Axis(1));
    (sigma - alpha) * x.iter().map(|v| v * v).sum::<f64>() - beta * sq_norm(rows.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> QpSubproblem {
        // N = 1, m = 2, n_1 = 1.
        QpSubproblem::new(
            vec![array![[1.0], [3.0]]],
            vec![array![[0.5], [0.5]]],
            array![0.5, 0.5],
            2.0,
            vec![array![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_single_step() {
        let sub = tiny();
        let state = SpadmmState {
            plans: vec![array![[0.5], [0.5]]],
            w: array![0.5, 0.5],
            lambda: vec![array![0.1, -0.2]],
            beta: 1.0,
            tau: 1.618,
        };
        // sigma = a + beta n = 3. H = (3-2)*Z - 1*(Ze) + 2*Zk - F/1 + w - lambda.
        // row 0: 0.5 - 0.5 + 1.0 - 1 + 0.5 - 0.1 = 0.4
        // row 1: 0.5 - 0.5 + 1.0 - 3 + 0.5 + 0.2 = -1.3
        // H/sigma = (0.4/3, -1.3/3); both stay positive after the simplex
        // shift theta = (-0.3 - 1)/2 = -0.65, giving (47/60, 13/60).
        let next = spadmm_step(&state, &sub).unwrap();
        let z = [47.0 / 60.0, 13.0 / 60.0];
        assert!((next.plans[0][[0, 0]] - z[0]).abs() < 1e-14);
        assert!((next.plans[0][[1, 0]] - z[1]).abs() < 1e-14);
        // w: [beta Ze + lambda + a w^k] / (beta N + a), then the simplex shift.
        let raw = [(z[0] + 0.1 + 1.0) / 3.0, (z[1] - 0.2 + 1.0) / 3.0];
        let shift = (1.0 - raw[0] - raw[1]) / 2.0;
        let w_expected = [raw[0] + shift, raw[1] + shift];
        for (a, b) in next.w.iter().zip(w_expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        // lambda += tau beta (Ze - w)
        let l0 = 0.1 + 1.618 * (z[0] - w_expected[0]);
        let l1 = -0.2 + 1.618 * (z[1] - w_expected[1]);
        assert!((next.lambda[0][0] - l0).abs() < 1e-14);
        assert!((next.lambda[0][1] - l1).abs() < 1e-14);
    }

    #[test]
    fn multipliers_unchanged_when_rows_match() {
        // Zero costs and feasible anchors: the anchor is the QP optimum with
        // zero multipliers, so a sweep leaves everything in place.
        let z = array![[0.1, 0.3], [0.2, 0.4]];
        let w = row_sums(z.view());
        let sub = QpSubproblem::new(
            vec![Array2::zeros((2, 2))],
            vec![z.clone()],
            w.clone(),
            1.5,
            vec![array![0.3, 0.7]],
        )
        .unwrap();
        let state = SpadmmState::from_anchors(&sub, 1.0, 1.618);
        let next = spadmm_step(&state, &sub).unwrap();
        for (a, b) in next.plans[0].iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in next.w.iter().zip(w.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(next.lambda[0].iter().all(|l| l.abs() < 1e-12));

        let sol = solve_subproblem(&sub, 1e-8, &SpadmmConfig::default(), None).unwrap();
        assert!(sol.converged);
        assert!(sol.sweeps <= 2);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(relative_gap(5.0, -5.0), 0.0);
        assert_eq!(relative_gap(1.0, 0.0), 0.5);
    }

    #[test]
    fn feasible_iterate_has_zero_primal_residual() {
        let sub = tiny();
        let state = SpadmmState::from_anchors(&sub, 1.0, 1.618);
        assert_eq!(residuals(&state, &sub).eta_p, 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(QpSubproblem::new(
            vec![array![[1.0]]],
            vec![array![[1.0]]],
            array![1.0],
            0.0,
            vec![array![1.0]]
        )
        .is_err());
        let sub = tiny();
        assert!(solve_subproblem(&sub, 0.0, &SpadmmConfig::default(), None).is_err());
        let bad = SpadmmConfig { tau: 1.7, ..SpadmmConfig::default() };
        assert!(solve_subproblem(&sub, 1e-6, &bad, None).is_err());
    }

    #[test]
    fn semi_proximal_operator_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let m = rng.random_range(1..8);
            let n = rng.random_range(1..12);
            let alpha = rng.random_range(1e-3..10.0);
            let beta = rng.random_range(1e-3..10.0);
            let sigma = alpha + beta * n as f64;
            let x = Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0));
            assert!(semi_proximal_quadratic(&x, sigma, alpha, beta) >= -1e-10);
        }
    }

    fn random_sub(rng: &mut ChaCha8Rng, n_blocks: usize, m: usize, nt: usize, alpha: f64) -> QpSubproblem {
        let mut costs = Vec::new();
        let mut anchors = Vec::new();
        let mut marg = Vec::new();
        let w = Array1::from_elem(m, 1.0 / m as f64);
        for _ in 0..n_blocks {
            let b = Array1::from_shape_fn(nt, |_| rng.random_range(0.1..1.0));
            let b = &b / b.sum();
            costs.push(Array2::from_shape_fn((m, nt), |_| rng.random_range(0.0..4.0)));
            anchors.push(Array2::from_shape_fn((m, nt), |(_, j)| b[j] / m as f64));
            marg.push(b);
        }
        QpSubproblem::new(costs, anchors, w, alpha, marg).unwrap()
    }

    #[test]
    fn iterates_stay_in_constraint_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sub = random_sub(&mut rng, 3, 4, 5, 0.7);
        let mut state = SpadmmState::from_anchors(&sub, 1.0, 1.618);
        for _ in 0..100 {
            state = spadmm_step(&state, &sub).unwrap();
            for (z, b) in state.plans.iter().zip(sub.marginals()) {
                assert!(z.iter().all(|v| *v >= 0.0));
                for (s, bj) in z.sum_axis(Axis(0)).iter().zip(b) {
                    assert!((s - bj).abs() < 1e-12);
                }
            }
            assert!(state.w.iter().all(|v| *v >= 0.0));
            assert!((state.w.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_trend_over_200_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let sub = random_sub(&mut rng, 4, 5, 6, 0.5);
            let mut state = SpadmmState::from_anchors(&sub, 1.0, 1.618);
            // Burn in one sweep so the start value reflects a nontrivial iterate.
            state = spadmm_step(&state, &sub).unwrap();
            let start = residuals(&state, &sub).eta;
            for _ in 0..200 {
                state = spadmm_step(&state, &sub).unwrap();
            }
            let end = residuals(&state, &sub).eta;
            assert!(end <= start, "{end} > {start}");
        }
    }

    #[test]
    fn duplicated_blocks_stay_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let base = random_sub(&mut rng, 1, 3, 3, 1.0);
        let sub = QpSubproblem::new(
            vec![base.costs[0].clone(), base.costs[0].clone()],
            vec![base.anchor_plans[0].clone(), base.anchor_plans[0].clone()],
            base.anchor_w.clone(),
            1.0,
            vec![base.marginals[0].clone(), base.marginals[0].clone()],
        )
        .unwrap();
        let sol = solve_subproblem(&sub, 1e-8, &SpadmmConfig::default(), None).unwrap();
        for (a, b) in sol.state.plans[0].iter().zip(sol.state.plans[1].iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn strong_duality_at_tight_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let sub = random_sub(&mut rng, 3, 4, 4, 2.0);
            let sol = solve_subproblem(&sub, 1e-8, &SpadmmConfig::default(), None).unwrap();
            assert!(sol.converged);
            let r = sol.residuals;
            assert!((r.obj_p + r.obj_d).abs() <= 1e-7 * (1.0 + r.obj_p.abs() + r.obj_d.abs()));
        }
    }
}
