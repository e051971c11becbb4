//! D2-clustering: Lloyd-style alternation between assigning each distribution
//! to its nearest centroid in W² and re-solving each centroid as the
//! barycenter of its members.

use log::{debug, warn};
use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{cost_matrix, BarycenterProblem, BarycenterState, DiscreteDistribution};
use crate::numeric::compensated_sum;
use crate::pam::{init_state, solve_barycenter_from, PamConfig};
use crate::transport::{solve_transport, w2_squared, TransportInstance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    /// Support size of every centroid.
    pub m: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub pam: PamConfig,
}

impl ClusterConfig {
    pub fn new(k: usize, m: usize) -> Self {
        Self { k, m, max_rounds: 20, seed: 0, pam: PamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<DiscreteDistribution>,
    /// 0-based cluster index per datum.
    pub assignments: Vec<usize>,
    pub within_cluster_objective: f64,
    pub rounds: usize,
    /// Assignments stopped changing before the round cap.
    pub converged: bool,
}

impl ClusterModel {
    /// Recomputes sum_t W²(centroid_{l_t}, P^t) from scratch.
    pub fn recompute_objective(&self, data: &[DiscreteDistribution]) -> Result<f64> {
        fixed_centroid_objective(data, &self.centroids, &self.assignments)
    }
}

/// sum_t W²(centroids[labels[t]], P^t).
pub fn fixed_centroid_objective(
    data: &[DiscreteDistribution],
    centroids: &[DiscreteDistribution],
    labels: &[usize],
) -> Result<f64> {
    if labels.len() != data.len() || labels.iter().any(|&l| l >= centroids.len()) {
        return Err(Error::invalid("labels do not match data and centroids"));
    }
    let values: Vec<f64> = data
        .par_iter()
        .zip(labels.par_iter())
        .map(|(p, &l)| w2_squared(&centroids[l], p))
        .collect::<Result<_>>()?;
    Ok(compensated_sum(values))
}

/// Nearest centroid per datum, with its squared distance. Ties go to the
/// lowest index.
pub fn assign_with_distances(
    data: &[DiscreteDistribution],
    centroids: &[DiscreteDistribution],
) -> Result<(Vec<usize>, Vec<f64>)> {
    if centroids.is_empty() {
        return Err(Error::invalid("need at least one centroid"));
    }
    let rows: Vec<(usize, f64)> = data
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (s, q) in centroids.iter().enumerate() {
                let dist = w2_squared(q, p)?;
                if dist < best.1 {
                    best = (s, dist);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().unzip())
}

pub fn assign(data: &[DiscreteDistribution], centroids: &[DiscreteDistribution]) -> Result<Vec<usize>> {
    Ok(assign_with_distances(data, centroids)?.0)
}

/// K distinct data indices: the first uniform, each next one drawn with
/// probability proportional to its squared distance to the nearest pick.
pub fn seed_centroids(data: &[DiscreteDistribution], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= K <= N, got K = {k}, N = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest = vec![f64::INFINITY; n];
    while chosen.len() < k {
        let last = &data[*chosen.last().unwrap()];
        let fresh: Vec<f64> = data.par_iter().map(|p| w2_squared(last, p)).collect::<Result<_>>()?;
        for (d, f) in nearest.iter_mut().zip(fresh) {
            *d = d.min(f);
        }
        for &c in &chosen {
            nearest[c] = 0.0;
        }
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(&mut rng),
            Err(_) => {
                // Every remaining datum coincides with a pick.
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
    }
    Ok(chosen)
}

/// Writes `p` as an m-point centroid; short supports are padded with
/// zero-weight copies of their own points. Longer ones return `None`.
fn pad_to(p: &DiscreteDistribution, m: usize) -> Option<DiscreteDistribution> {
    let n = p.len();
    if n > m {
        return None;
    }
    let x = Array2::from_shape_fn((m, p.dim()), |(i, k)| p.support()[[i % n, k]]);
    let w = Array1::from_shape_fn(m, |i| if i < n { p.weights()[i] } else { 0.0 });
    DiscreteDistribution::new(x, w).ok()
}

/// Feasible PAM start at the current centroid: optimal plans from it to each
/// member, so the barycenter solve can only improve on it.
fn warm_state(centroid: &DiscreteDistribution, problem: &BarycenterProblem) -> Result<BarycenterState> {
    let plans = problem
        .distributions()
        .par_iter()
        .map(|p| {
            let cost = cost_matrix(centroid.support().view(), p)?;
            let inst = TransportInstance::new(cost, centroid.weights().clone(), p.weights().clone())?;
            Ok(solve_transport(&inst)?.plan)
        })
        .collect::<Result<_>>()?;
    Ok(BarycenterState { plans, w: centroid.weights().clone(), x: centroid.support().clone() })
}

fn update_centroid(
    current: &DiscreteDistribution,
    members: BarycenterProblem,
    config: &ClusterConfig,
) -> Result<DiscreteDistribution> {
    let init = if current.len() == config.m {
        warm_state(current, &members)?
    } else {
        init_state(&members, config.seed)
    };
    let sol = solve_barycenter_from(&members, &config.pam, init)?;
    sol.state.barycenter()
}

pub fn d2_cluster(data: &[DiscreteDistribution], config: &ClusterConfig) -> Result<ClusterModel> {
    if config.max_rounds == 0 || config.m == 0 {
        return Err(Error::invalid("max_rounds and m must be positive"));
    }
    if let Some(p) = data.iter().find(|p| p.dim() != data[0].dim()) {
        return Err(Error::dim(format!("mixed dimensions {} and {}", data[0].dim(), p.dim())));
    }
    let k = config.k;
    let mut centroids: Vec<DiscreteDistribution> = seed_centroids(data, k, config.seed)?
        .into_iter()
        .map(|i| pad_to(&data[i], config.m).unwrap_or_else(|| data[i].clone()))
        .collect();
    let mut labels: Vec<usize> = Vec::new();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < config.max_rounds {
        rounds += 1;
        let (mut next, dists) = assign_with_distances(data, &centroids)?;
        reseed_empty(&mut next, &dists, k, data, config.m, &mut centroids);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
        let full = BarycenterProblem::new(data.to_vec(), config.m)?;
        centroids = (0..k)
            .into_par_iter()
            .map(|s| {
                let members: Vec<usize> = (0..data.len()).filter(|&t| labels[t] == s).collect();
                update_centroid(&centroids[s], full.subset(&members)?, config)
            })
            .collect::<Result<_>>()?;
        debug!("round {rounds}: cluster sizes {:?}", cluster_sizes(&labels, k));
    }
    if !converged {
        warn!("assignments still changing after {rounds} rounds");
    }
    let within_cluster_objective = fixed_centroid_objective(data, &centroids, &labels)?;
    Ok(ClusterModel { centroids, assignments: labels, within_cluster_objective, rounds, converged })
}

fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// Gives each empty cluster the worst-assigned datum that is not the sole
/// member of its own cluster.
fn reseed_empty(
    labels: &mut [usize],
    dists: &[f64],
    k: usize,
    data: &[DiscreteDistribution],
    m: usize,
    centroids: &mut [DiscreteDistribution],
) {
    let mut sizes = cluster_sizes(labels, k);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    let mut cursor = order.into_iter();
    for s in 0..k {
        if sizes[s] > 0 {
            continue;
        }
        let Some(t) = cursor.by_ref().find(|&t| sizes[labels[t]] > 1) else {
            return;
        };
        sizes[labels[t]] -= 1;
        sizes[s] = 1;
        labels[t] = s;
        centroids[s] = pad_to(&data[t], m).unwrap_or_else(|| data[t].clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn point(x: f64, y: f64) -> DiscreteDistribution {
        DiscreteDistribution::dirac(array![x, y]).unwrap()
    }

    fn two_points(a: [f64; 2], b: [f64; 2]) -> DiscreteDistribution {
        DiscreteDistribution::new(array![a, b], array![0.5, 0.5]).unwrap()
    }

    #[test]
    fn single_centroid_takes_everything() {
        let data = vec![point(0.0, 0.0), point(3.0, 1.0), point(-2.0, 5.0)];
        assert_eq!(assign(&data, &[point(1.0, 1.0)]).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn exact_match_wins() {
        let data = vec![two_points([0.0, 0.0], [1.0, 0.0])];
        let cents = vec![point(0.5, 0.0), data[0].clone(), point(9.0, 9.0)];
        assert_eq!(assign(&data, &cents).unwrap(), vec![1]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // Centroids mirrored across the datum's location.
        let data = vec![point(0.0, 0.0)];
        let cents = vec![point(1.0, 0.0), point(0.0, 3.0), point(-1.0, 0.0)];
        assert_eq!(assign(&data, &cents).unwrap(), vec![0]);
        let data = vec![two_points([0.0, 0.0], [2.0, 0.0])];
        let cents = vec![point(1.0, 1.0), point(5.0, 5.0), point(1.0, -1.0)];
        assert_eq!(assign(&data, &cents).unwrap(), vec![0]);
    }

    #[test]
    fn seeding_is_deterministic_and_distinct() {
        let data: Vec<_> = (0..12).map(|i| point(i as f64, (i * i % 7) as f64)).collect();
        let a = seed_centroids(&data, 5, 3).unwrap();
        assert_eq!(a, seed_centroids(&data, 5, 3).unwrap());
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
        assert!(seed_centroids(&data, 13, 0).is_err());
    }

    #[test]
    fn seeding_identical_data_still_distinct() {
        let data = vec![point(1.0, 1.0); 4];
        let mut s = seed_centroids(&data, 4, 0).unwrap();
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3]);
    }

    #[test]
    fn two_separated_groups_are_recovered() {
        let mut data = Vec::new();
        for _ in 0..5 {
            data.push(two_points([0.0, 0.0], [1.0, 0.0]));
        }
        for _ in 0..5 {
            data.push(two_points([20.0, 20.0], [21.0, 20.0]));
        }
        let model = d2_cluster(&data, &ClusterConfig::new(2, 2)).unwrap();
        assert!(model.converged);
        let first = model.assignments[0];
        assert!(model.assignments[..5].iter().all(|&l| l == first));
        assert!(model.assignments[5..].iter().all(|&l| l != first));
        let fresh = model.recompute_objective(&data).unwrap();
        assert!((fresh - model.within_cluster_objective).abs() <= 1e-8);
    }

    #[test]
    fn each_point_its_own_cluster() {
        let data = vec![
            two_points([0.0, 0.0], [1.0, 2.0]),
            point(5.0, 5.0),
            DiscreteDistribution::new(array![[-3.0, 0.0], [-4.0, 1.0], [-2.0, 2.0]], array![0.2, 0.3, 0.5]).unwrap(),
        ];
        let model = d2_cluster(&data, &ClusterConfig::new(3, 3)).unwrap();
        assert!(model.within_cluster_objective <= 1e-6, "{}", model.within_cluster_objective);
    }

    #[test]
    fn empty_cluster_takes_worst_datum() {
        let data = vec![point(0.0, 0.0), point(0.1, 0.0), point(10.0, 0.0)];
        let mut cents = vec![point(0.0, 0.0), point(100.0, 100.0)];
        let (mut labels, dists) = assign_with_distances(&data, &cents).unwrap();
        assert_eq!(labels, vec![0, 0, 0]);
        reseed_empty(&mut labels, &dists, 2, &data, 1, &mut cents);
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(cents[1], data[2]);
    }

    #[test]
    fn assignment_never_increases_fixed_centroid_objective() {
        let data: Vec<_> = (0..9).map(|i| two_points([i as f64, 0.0], [0.0, (i % 4) as f64])).collect();
        let cents = vec![point(0.0, 0.0), point(4.0, 1.0), point(8.0, 2.0)];
        let best = assign(&data, &cents).unwrap();
        let best_obj = fixed_centroid_objective(&data, &cents, &best).unwrap();
        for shift in 1..3 {
            let other: Vec<usize> = best.iter().map(|l| (l + shift) % 3).collect();
            assert!(best_obj <= fixed_centroid_objective(&data, &cents, &other).unwrap());
        }
    }
}
