//! Distributions, barycenter problems and iterate states, together with the
//! objective, feasibility measure and exact-LP evaluation shared by all
//! solvers.

use std::fmt;

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::numeric::{compensated_sum, frob_dot, row_sums};
use crate::transport::{solve_transport, TransportInstance};
use crate::{Error, Result};

/// Weight sums within this distance of one are accepted and renormalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Tolerance for membership tests on iterates (column sums, simplex).
pub const STATE_TOL: f64 = 1e-9;

/// A finitely supported probability measure on R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    support: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution from `n x d` support points and `n` weights.
    ///
    /// Weights must be nonnegative and sum to one within [`WEIGHT_SUM_TOL`];
    /// they are then divided by their sum so the stored sum is one to
    /// rounding.
    pub fn new(support: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = support.dim();
        if n == 0 {
            return Err(Error::invalid("distribution has no support points"));
        }
        if d == 0 {
            return Err(Error::invalid("support dimension must be positive"));
        }
        if weights.len() != n {
            return Err(Error::dim(format!(
                "{} weights for {} support points",
                weights.len(),
                n
            )));
        }
        if let Some(v) = support.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate {v}")));
        }
        if let Some((j, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::invalid(format!("weight {j} is {w}")));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "weights sum to {total:.17e}, expected 1"
            )));
        }
        let weights = if total == 1.0 { weights } else { weights / total };
        Ok(Self { support, weights })
    }

    /// Builds a distribution from raw nonnegative masses, normalizing them.
    pub fn from_masses(support: Array2<f64>, masses: Array1<f64>) -> Result<Self> {
        let total = compensated_sum(masses.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid("masses must have a positive finite total"));
        }
        Self::new(support, masses / total)
    }

    /// Single-point mass.
    pub fn dirac(point: Array1<f64>) -> Result<Self> {
        let d = point.len();
        let support = point.into_shape_with_order((1, d)).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(support, Array1::ones(1))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn support(&self) -> &Array2<f64> {
        &self.support
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// Drops support points carrying exactly zero mass and returns how many
    /// were removed. The remaining weights are renormalized.
    pub fn without_zero_weights(&self) -> (Self, usize) {
        let keep: Vec<usize> = (0..self.len()).filter(|&j| self.weights[j] > 0.0).collect();
        let dropped = self.len() - keep.len();
        if dropped == 0 {
            return (self.clone(), 0);
        }
        let support = self.support.select(Axis(0), &keep);
        let weights = self.weights.select(Axis(0), &keep);
        let total = compensated_sum(weights.iter().copied());
        (
            Self {
                support,
                weights: weights / total,
            },
            dropped,
        )
    }
}

/// N distributions sharing a dimension, plus the barycenter support size m.
#[derive(Debug, Clone)]
pub struct BarycenterProblem {
    distributions: Vec<DiscreteDistribution>,
    m: usize,
    d: usize,
}

impl BarycenterProblem {
    /// Validates the distributions and drops zero-weight support points
    /// (with a warning), since the column constraints require b_j > 0.
    pub fn new(distributions: Vec<DiscreteDistribution>, m: usize) -> Result<Self> {
        if distributions.is_empty() {
            return Err(Error::invalid("barycenter problem needs at least one distribution"));
        }
        if m == 0 {
            return Err(Error::invalid("barycenter support size m must be positive"));
        }
        let d = distributions[0].dim();
        let mut cleaned = Vec::with_capacity(distributions.len());
        for (t, p) in distributions.into_iter().enumerate() {
            if p.dim() != d {
                return Err(Error::dim(format!(
                    "distribution {t} has dimension {}, expected {d}",
                    p.dim()
                )));
            }
            let (p, dropped) = p.without_zero_weights();
            if dropped > 0 {
                warn!("distribution {t}: dropped {dropped} zero-weight support point(s)");
            }
            cleaned.push(p);
        }
        Ok(Self {
            distributions: cleaned,
            m,
            d,
        })
    }

    pub fn distributions(&self) -> &[DiscreteDistribution] {
        &self.distributions
    }

    pub fn n_distributions(&self) -> usize {
        self.distributions.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Total support size n = sum of n_t.
    pub fn total_support(&self) -> usize {
        self.distributions.iter().map(|p| p.len()).sum()
    }

    pub fn mean_support(&self) -> f64 {
        self.total_support() as f64 / self.n_distributions() as f64
    }

    /// Euclidean norm of the stacked marginals (b^1; ...; b^N).
    pub fn stacked_weight_norm(&self) -> f64 {
        compensated_sum(
            self.distributions
                .iter()
                .flat_map(|p| p.weights().iter().map(|b| b * b)),
        )
        .sqrt()
    }

    /// Same problem restricted to a subset of distributions.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let dists = indices
            .iter()
            .map(|&i| self.distributions[i].clone())
            .collect();
        Self::new(dists, self.m)
    }
}

/// Iterate of a barycenter solver: plans Z^t (m x n_t), weights w, support x.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterState {
    pub plans: Vec<Array2<f64>>,
    pub w: Array1<f64>,
    pub x: Array2<f64>,
}

impl BarycenterState {
    pub fn check_shapes(&self, problem: &BarycenterProblem) -> Result<()> {
        let m = problem.m();
        if self.plans.len() != problem.n_distributions() {
            return Err(Error::dim(format!(
                "{} plans for {} distributions",
                self.plans.len(),
                problem.n_distributions()
            )));
        }
        if self.w.len() != m || self.x.dim() != (m, problem.dim()) {
            return Err(Error::dim(format!(
                "w has length {} and x has shape {:?}; expected m = {m}, d = {}",
                self.w.len(),
                self.x.dim(),
                problem.dim()
            )));
        }
        for (t, (z, p)) in self.plans.iter().zip(problem.distributions()).enumerate() {
            if z.dim() != (m, p.len()) {
                return Err(Error::dim(format!(
                    "plan {t} has shape {:?}, expected ({m}, {})",
                    z.dim(),
                    p.len()
                )));
            }
        }
        Ok(())
    }

    /// Largest violation of Z^t >= 0, (Z^t)^T e = b^t and w in the simplex.
    pub fn membership_violation(&self, problem: &BarycenterProblem) -> f64 {
        let mut worst = 0.0_f64;
        for (z, p) in self.plans.iter().zip(problem.distributions()) {
            for v in z.iter() {
                worst = worst.max(-v);
            }
            for (s, b) in z.sum_axis(Axis(0)).iter().zip(p.weights()) {
                worst = worst.max((s - b).abs());
            }
        }
        for v in self.w.iter() {
            worst = worst.max(-v);
        }
        worst.max((self.w.sum() - 1.0).abs())
    }

    /// Barycenter as a distribution (x, w). Zero-weight points are kept.
    pub fn barycenter(&self) -> Result<DiscreteDistribution> {
        DiscreteDistribution::new(self.x.clone(), self.w.mapv(|v| v.max(0.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pam,
    Badmm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pam => "pam",
            Method::Badmm => "badmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pam" => Ok(Method::Pam),
            "badmm" => Ok(Method::Badmm),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Summary of one barycenter solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: Method,
    /// Exact-LP objective at the final (w, x).
    pub objval: f64,
    pub pinfeas: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    pub m: usize,
    pub seed: u64,
    /// Echo of the solver parameters as (key, value) pairs, in a fixed order.
    pub config: Vec<(String, String)>,
}

/// Squared-distance matrix [F(x)]_{ij} = ||x_i - a_j||^2.
pub fn cost_matrix(x: ArrayView2<f64>, p: &DiscreteDistribution) -> Result<Array2<f64>> {
    if x.ncols() != p.dim() {
        return Err(Error::dim(format!(
            "support points have dimension {}, distribution has {}",
            x.ncols(),
            p.dim()
        )));
    }
    let a = p.support();
    let mut f = Array2::zeros((x.nrows(), a.nrows()));
    for (i, xi) in x.outer_iter().enumerate() {
        for (j, aj) in a.outer_iter().enumerate() {
            f[[i, j]] = xi
                .iter()
                .zip(aj.iter())
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
        }
    }
    Ok(f)
}

/// F^t(x) for every distribution of the problem, in ascending t.
pub fn cost_matrices(x: ArrayView2<f64>, problem: &BarycenterProblem) -> Result<Vec<Array2<f64>>> {
    problem
        .distributions()
        .par_iter()
        .map(|p| cost_matrix(x, p))
        .collect()
}

/// f(Z, w, x) = (1/N) sum_t <Z^t, F^t(x)>.
pub fn objective(state: &BarycenterState, problem: &BarycenterProblem) -> Result<f64> {
    state.check_shapes(problem)?;
    let terms: Vec<f64> = state
        .plans
        .par_iter()
        .zip(problem.distributions().par_iter())
        .map(|(z, p)| cost_matrix(state.x.view(), p).map(|f| frob_dot(z.view(), f.view())))
        .collect::<Result<_>>()?;
    Ok(compensated_sum(terms) / problem.n_distributions() as f64)
}

/// max_t ||Z^t e - w|| / (1 + ||b||).
pub fn pinfeas(state: &BarycenterState, problem: &BarycenterProblem) -> Result<f64> {
    state.check_shapes(problem)?;
    Ok(pinfeas_unchecked(&state.plans, &state.w, problem.stacked_weight_norm()))
}

pub(crate) fn pinfeas_unchecked(plans: &[Array2<f64>], w: &Array1<f64>, b_norm: f64) -> f64 {
    plans
        .iter()
        .map(|z| {
            let r = row_sums(z.view());
            r.iter()
                .zip(w.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
        / (1.0 + b_norm)
}

/// (1/N) sum_t W^2(Q, P^t) with Q = (x, w), each transport LP solved exactly.
pub fn evaluate_objval(
    w: &Array1<f64>,
    x: ArrayView2<f64>,
    problem: &BarycenterProblem,
) -> Result<f64> {
    if w.len() != x.nrows() {
        return Err(Error::dim(format!(
            "w has length {} but x has {} rows",
            w.len(),
            x.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("barycenter support has non-finite entries"));
    }
    let values: Vec<f64> = problem
        .distributions()
        .par_iter()
        .map(|p| {
            let cost = cost_matrix(x, p)?;
            let inst = TransportInstance::new(cost, w.clone(), p.weights().clone())?;
            Ok(solve_transport(&inst)?.value)
        })
        .collect::<Result<_>>()?;
    Ok(compensated_sum(values) / problem.n_distributions() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn dist(support: Array2<f64>, w: Array1<f64>) -> DiscreteDistribution {
        DiscreteDistribution::new(support, w).unwrap()
    }

    #[test]
    fn cost_matrix_examples() {
        let p = dist(array![[0.0]], array![1.0]);
        assert_eq!(cost_matrix(array![[0.0]].view(), &p).unwrap(), array![[0.0]]);

        let p = dist(array![[2.0]], array![1.0]);
        let f = cost_matrix(array![[0.0], [1.0]].view(), &p).unwrap();
        assert_eq!(f, array![[4.0], [1.0]]);
    }

    #[test]
    fn cost_matrix_rejects_dimension_mismatch() {
        let p = dist(array![[2.0, 1.0]], array![1.0]);
        assert!(matches!(
            cost_matrix(array![[0.0]].view(), &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn cost_matrix_permutes_with_rows() {
        let p = dist(array![[0.5, 1.0], [2.0, -1.0]], array![0.25, 0.75]);
        let x = array![[0.0, 0.0], [1.0, 3.0], [-2.0, 0.5]];
        let xp = x.select(Axis(0), &[2, 0, 1]);
        let f = cost_matrix(x.view(), &p).unwrap();
        let fp = cost_matrix(xp.view(), &p).unwrap();
        assert_eq!(fp, f.select(Axis(0), &[2, 0, 1]));
    }

    #[test]
    fn objective_examples() {
        let p = dist(array![[2.0]], array![1.0]);
        let problem = BarycenterProblem::new(vec![p], 1).unwrap();
        let mut state = BarycenterState {
            plans: vec![array![[1.0]]],
            w: array![1.0],
            x: array![[0.0]],
        };
        assert_eq!(objective(&state, &problem).unwrap(), 4.0);
        state.plans[0] *= 3.0;
        assert_eq!(objective(&state, &problem).unwrap(), 12.0);
        state.plans[0].fill(0.0);
        assert_eq!(objective(&state, &problem).unwrap(), 0.0);
    }

    #[test]
    fn pinfeas_examples() {
        let p = dist(array![[2.0]], array![1.0]);
        let problem = BarycenterProblem::new(vec![p.clone()], 1).unwrap();
        let state = BarycenterState {
            plans: vec![array![[1.0]]],
            w: array![0.5],
            x: array![[0.0]],
        };
        assert_eq!(pinfeas(&state, &problem).unwrap(), 0.25);

        let feasible = BarycenterState {
            w: array![1.0],
            ..state.clone()
        };
        assert_eq!(pinfeas(&feasible, &problem).unwrap(), 0.0);
    }

    #[test]
    fn pinfeas_max_unchanged_by_duplicated_distribution() {
        let p = dist(array![[0.0], [1.0]], array![0.5, 0.5]);
        let q = dist(array![[3.0], [4.0]], array![0.25, 0.75]);
        let z1 = array![[0.4, 0.1], [0.1, 0.4]];
        let z2 = array![[0.25, 0.0], [0.0, 0.75]];
        let w = array![0.5, 0.5];
        let x = array![[0.0], [1.0]];
        let one = BarycenterProblem::new(vec![p.clone(), q.clone()], 2).unwrap();
        let two = BarycenterProblem::new(vec![p.clone(), q.clone(), q], 2).unwrap();
        let a = BarycenterState { plans: vec![z1.clone(), z2.clone()], w: w.clone(), x: x.clone() };
        let b = BarycenterState { plans: vec![z1, z2.clone(), z2], w, x };
        let ratio = (1.0 + one.stacked_weight_norm()) / (1.0 + two.stacked_weight_norm());
        let pa = pinfeas(&a, &one).unwrap();
        let pb = pinfeas(&b, &two).unwrap();
        // Same max residual; only the ||b|| normalization differs.
        assert!((pb - pa * ratio).abs() < 1e-15);
    }

    #[test]
    fn evaluate_objval_examples() {
        let p = dist(array![[0.0], [2.0]], array![0.5, 0.5]);
        let problem = BarycenterProblem::new(vec![p.clone()], 2).unwrap();
        let v = evaluate_objval(&array![0.5, 0.5], array![[0.0], [1.0]].view(), &problem).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        let v0 = evaluate_objval(&array![0.5, 0.5], array![[0.0], [2.0]].view(), &problem).unwrap();
        assert!(v0.abs() < 1e-14);

        let many = BarycenterProblem::new(vec![p.clone(), p.clone(), p], 2).unwrap();
        let vm = evaluate_objval(&array![0.5, 0.5], array![[0.0], [1.0]].view(), &many).unwrap();
        assert!((vm - v).abs() < 1e-14);
    }

    #[test]
    fn weights_within_tolerance_are_renormalized() {
        let p = dist(array![[0.0], [1.0]], array![0.5, 0.5 + 5e-13]);
        assert!((p.weights().sum() - 1.0).abs() < 1e-15);
        assert!(DiscreteDistribution::new(array![[0.0], [1.0]], array![0.5, 0.51]).is_err());
        assert!(DiscreteDistribution::new(array![[0.0], [1.0]], array![1.1, -0.1]).is_err());
    }

    #[test]
    fn problem_drops_zero_weights() {
        let p = dist(array![[0.0], [1.0], [2.0]], array![0.5, 0.0, 0.5]);
        let problem = BarycenterProblem::new(vec![p], 2).unwrap();
        assert_eq!(problem.distributions()[0].len(), 2);
        assert_eq!(problem.distributions()[0].support(), &array![[0.0], [2.0]]);
    }

    #[test]
    fn problem_rejects_mixed_dimensions() {
        let p = dist(array![[0.0]], array![1.0]);
        let q = dist(array![[0.0, 1.0]], array![1.0]);
        assert!(BarycenterProblem::new(vec![p, q], 1).is_err());
    }

    #[test]
    fn lp_resolve_never_exceeds_feasible_objective() {
        // Feasible state: Z^t e = w exactly, so the LP re-solve can only improve.
        let p = dist(array![[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]], array![0.2, 0.3, 0.5]);
        let q = dist(array![[1.0, 1.0], [-1.0, 0.0]], array![0.6, 0.4]);
        let problem = BarycenterProblem::new(vec![p, q], 2).unwrap();
        let w = array![0.5, 0.5];
        let z1 = array![[0.2, 0.1, 0.2], [0.0, 0.2, 0.3]];
        let z2 = array![[0.1, 0.4], [0.5, 0.0]];
        let state = BarycenterState {
            plans: vec![z1, z2],
            w: w.clone(),
            x: array![[0.5, 0.0], [1.0, 1.0]],
        };
        assert!(state.membership_violation(&problem) < 1e-15);
        assert_eq!(pinfeas(&state, &problem).unwrap(), 0.0);
        let f = objective(&state, &problem).unwrap();
        let lp = evaluate_objval(&w, state.x.view(), &problem).unwrap();
        assert!(lp <= f + 1e-9);
    }

    proptest! {
        #[test]
        fn cost_matrix_parallelogram_identity(
            xs in proptest::collection::vec(-10.0f64..10.0, 9),
            ys in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let x = Array2::from_shape_vec((3, 3), xs).unwrap();
            let a = Array2::from_shape_vec((4, 3), ys).unwrap();
            let p = DiscreteDistribution::new(a.clone(), Array1::from_elem(4, 0.25)).unwrap();
            let f = cost_matrix(x.view(), &p).unwrap();
            for i in 0..3 {
                for j in 0..4 {
                    let xi = x.row(i);
                    let aj = a.row(j);
                    let alt = xi.dot(&xi) - 2.0 * xi.dot(&aj) + aj.dot(&aj);
                    prop_assert!(f[[i, j]] >= 0.0);
                    prop_assert!((f[[i, j]] - alt).abs() <= 1e-12 * (1.0 + alt.abs()));
                }
            }
        }

        #[test]
        fn objective_invariant_under_row_permutation(
            zs in proptest::collection::vec(0.0f64..1.0, 6),
            seed in 0usize..6,
        ) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let perm = perms[seed];
            let p = DiscreteDistribution::new(array![[0.0, 1.0], [2.0, -1.0]], array![0.5, 0.5]).unwrap();
            let problem = BarycenterProblem::new(vec![p], 3).unwrap();
            let z = Array2::from_shape_vec((3, 2), zs).unwrap();
            let state = BarycenterState {
                plans: vec![z.clone()],
                w: array![0.2, 0.3, 0.5],
                x: array![[0.0, 0.0], [1.0, 1.0], [-1.0, 2.0]],
            };
            let permuted = BarycenterState {
                plans: vec![z.select(Axis(0), &perm)],
                w: state.w.select(Axis(0), &perm),
                x: state.x.select(Axis(0), &perm),
            };
            let a = objective(&state, &problem).unwrap();
            let b = objective(&permuted, &problem).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
