//! Exact discrete optimal transport.
//!
//! [`solve_transport`] runs the network simplex method on the bipartite
//! transportation graph. A basis is a spanning tree of `rows + cols - 1`
//! cells; potentials satisfy `u_i + v_j = C_ij` on tree cells and a cell with
//! negative reduced cost `C_ij - u_i - v_j` enters. Pricing uses the most
//! negative reduced cost and falls back to Bland's rule after a run of
//! degenerate pivots.

use std::collections::VecDeque;

use itertools::Itertools;
use ndarray::{Array1, Array2};

use crate::model::{cost_matrix, DiscreteDistribution, WEIGHT_SUM_TOL};
use crate::numeric::compensated_sum;
use crate::{Error, Result};

/// Cost matrix with row marginals `p` and column marginals `q`.
#[derive(Debug, Clone)]
pub struct TransportInstance {
    cost: Array2<f64>,
    p: Array1<f64>,
    q: Array1<f64>,
}

impl TransportInstance {
    pub fn new(cost: Array2<f64>, p: Array1<f64>, q: Array1<f64>) -> Result<Self> {
        if cost.dim() != (p.len(), q.len()) {
            return Err(Error::dim(format!(
                "cost is {:?} but marginals have lengths {} and {}",
                cost.dim(),
                p.len(),
                q.len()
            )));
        }
        if p.is_empty() || q.is_empty() {
            return Err(Error::invalid("marginals must be nonempty"));
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("costs must be finite and nonnegative"));
        }
        if p.iter().chain(q.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("marginals must be finite and nonnegative"));
        }
        let sp = compensated_sum(p.iter().copied());
        let sq = compensated_sum(q.iter().copied());
        if (sp - sq).abs() > 2.0 * WEIGHT_SUM_TOL * sp.max(sq).max(1.0) {
            return Err(Error::invalid(format!(
                "marginal masses differ: {sp:.17e} vs {sq:.17e}"
            )));
        }
        Ok(Self { cost, p, q })
    }

    pub fn cost(&self) -> &Array2<f64> {
        &self.cost
    }

    pub fn row_marginal(&self) -> &Array1<f64> {
        &self.p
    }

    pub fn col_marginal(&self) -> &Array1<f64> {
        &self.q
    }

    pub fn transposed(&self) -> Self {
        Self {
            cost: self.cost.t().to_owned(),
            p: self.q.clone(),
            q: self.p.clone(),
        }
    }
}

/// Optimal plan, its value, and dual potentials certifying optimality.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub plan: Array2<f64>,
    pub value: f64,
    /// Row potentials u with u_i + v_j <= C_ij, tight on the plan support.
    pub row_potentials: Array1<f64>,
    pub col_potentials: Array1<f64>,
}

/// Dual feasibility and complementary slackness residual of a solution:
/// max over cells of (u_i + v_j - C_ij)^+ and over plan support of |u_i + v_j - C_ij|.
pub fn certificate_residual(inst: &TransportInstance, sol: &TransportSolution) -> f64 {
    let mut worst = 0.0_f64;
    for ((i, j), &c) in inst.cost.indexed_iter() {
        let slack = sol.row_potentials[i] + sol.col_potentials[j] - c;
        worst = worst.max(slack);
        if sol.plan[[i, j]] > 0.0 {
            worst = worst.max(slack.abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy)]
struct BasicCell {
    row: usize,
    col: usize,
    flow: f64,
}

/// Solves the transportation LP exactly.
pub fn solve_transport(inst: &TransportInstance) -> Result<TransportSolution> {
    let (m_full, n_full) = inst.cost.dim();
    // Zero-mass rows and columns are removed and reinserted as zeros.
    let rows: Vec<usize> = (0..m_full).filter(|&i| inst.p[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n_full).filter(|&j| inst.q[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::invalid("transport instance carries no mass"));
    }
    let cost = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| inst.cost[[rows[i], cols[j]]]);
    let supply: Vec<f64> = rows.iter().map(|&i| inst.p[i]).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| inst.q[j]).collect();

    let mut simplex = NetworkSimplex::new(cost, &supply, &demand);
    simplex.run()?;

    let mut plan = Array2::zeros((m_full, n_full));
    for cell in &simplex.basis {
        plan[[rows[cell.row], cols[cell.col]]] = cell.flow.max(0.0);
    }
    let value = compensated_sum(
        simplex
            .basis
            .iter()
            .map(|cell| cell.flow.max(0.0) * simplex.cost[[cell.row, cell.col]]),
    );

    let (u_red, v_red) = simplex.potentials();
    let mut u = Array1::from_elem(m_full, f64::NAN);
    let mut v = Array1::from_elem(n_full, f64::NAN);
    for (k, &i) in rows.iter().enumerate() {
        u[i] = u_red[k];
    }
    for (k, &j) in cols.iter().enumerate() {
        v[j] = v_red[k];
    }
    // Potentials for eliminated rows, then columns, chosen as large as dual
    // feasibility allows.
    for i in 0..m_full {
        if u[i].is_nan() {
            u[i] = cols
                .iter()
                .map(|&j| inst.cost[[i, j]] - v[j])
                .fold(f64::INFINITY, f64::min);
            if !u[i].is_finite() {
                u[i] = 0.0;
            }
        }
    }
    for j in 0..n_full {
        if v[j].is_nan() {
            v[j] = (0..m_full)
                .map(|i| inst.cost[[i, j]] - u[i])
                .fold(f64::INFINITY, f64::min);
        }
    }

    Ok(TransportSolution {
        plan,
        value,
        row_potentials: u,
        col_potentials: v,
    })
}

struct NetworkSimplex {
    cost: Array2<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<BasicCell>,
    in_basis: Vec<bool>,
    // Spanning-tree data, rebuilt each pivot. Nodes 0..rows are rows,
    // rows..rows+cols are columns.
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
}

impl NetworkSimplex {
    fn new(cost: Array2<f64>, supply: &[f64], demand: &[f64]) -> Self {
        let (rows, cols) = cost.dim();
        let basis = northwest_corner(supply, demand);
        let mut in_basis = vec![false; rows * cols];
        for c in &basis {
            in_basis[c.row * cols + c.col] = true;
        }
        let nodes = rows + cols;
        Self {
            cost,
            rows,
            cols,
            basis,
            in_basis,
            parent: vec![usize::MAX; nodes],
            parent_edge: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            potential: vec![0.0; nodes],
        }
    }

    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let u = self.potential[..self.rows].to_vec();
        let v = self.potential[self.rows..].iter().map(|p| -p).collect();
        (u, v)
    }

    /// Rebuilds parents and potentials by BFS from row 0. Column node
    /// potentials are stored negated so that u_i - pot(col j) = C_ij on the tree.
    fn rebuild_tree(&mut self) -> Result<()> {
        let nodes = self.rows + self.cols;
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (e, cell) in self.basis.iter().enumerate() {
            let r = cell.row;
            let c = self.rows + cell.col;
            adjacency[r].push((c, e));
            adjacency[c].push((r, e));
        }
        self.parent.fill(usize::MAX);
        let mut visited = vec![false; nodes];
        let mut queue = VecDeque::with_capacity(nodes);
        visited[0] = true;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        queue.push_back(0);
        let mut seen = 1;
        while let Some(node) = queue.pop_front() {
            for &(next, e) in &adjacency[node] {
                if visited[next] {
                    continue;
                }
                visited[next] = true;
                seen += 1;
                self.parent[next] = node;
                self.parent_edge[next] = e;
                self.depth[next] = self.depth[node] + 1;
                let cell = self.basis[e];
                let c = self.cost[[cell.row, cell.col]];
                // u_r + v_c = C with v_c stored as -pot(c).
                self.potential[next] = if next >= self.rows {
                    self.potential[node] - c
                } else {
                    self.potential[node] + c
                };
                queue.push_back(next);
            }
        }
        if seen != nodes {
            return Err(Error::numerical("transport basis is not a spanning tree"));
        }
        Ok(())
    }

    fn reduced_cost(&self, i: usize, j: usize) -> f64 {
        self.cost[[i, j]] - self.potential[i] + self.potential[self.rows + j]
    }

    fn run(&mut self) -> Result<()> {
        let cmax = self.cost.iter().fold(0.0_f64, |a, &b| a.max(b));
        let eps = 1e-13 * (1.0 + cmax);
        let degenerate_limit = self.rows + self.cols;
        let max_pivots = 50 * self.rows * self.cols + 1000;
        let mut degenerate_run = 0usize;

        for _ in 0..max_pivots {
            self.rebuild_tree()?;
            let bland = degenerate_run > degenerate_limit;
            let Some((ei, ej)) = self.price(eps, bland) else {
                return Ok(());
            };

            // Cycle: entering cell (+), then the tree path from column ej back
            // to row ei with alternating signs starting at (-).
            let path = self.tree_path(self.rows + ej, ei);
            let mut theta = f64::INFINITY;
            let mut leaving = usize::MAX;
            for (k, &e) in path.iter().enumerate() {
                if k % 2 == 0 {
                    let cell = self.basis[e];
                    let better = cell.flow < theta
                        || (cell.flow == theta
                            && cell.row * self.cols + cell.col
                                < self.basis[leaving].row * self.cols + self.basis[leaving].col);
                    if better {
                        theta = cell.flow;
                        leaving = e;
                    }
                }
            }
            let theta = theta.max(0.0);
            for (k, &e) in path.iter().enumerate() {
                let cell = &mut self.basis[e];
                if k % 2 == 0 {
                    cell.flow = (cell.flow - theta).max(0.0);
                } else {
                    cell.flow += theta;
                }
            }
            let old = self.basis[leaving];
            self.in_basis[old.row * self.cols + old.col] = false;
            self.in_basis[ei * self.cols + ej] = true;
            self.basis[leaving] = BasicCell {
                row: ei,
                col: ej,
                flow: theta,
            };
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
        Err(Error::numerical(format!(
            "network simplex did not terminate within {max_pivots} pivots"
        )))
    }

    fn price(&self, eps: f64, bland: bool) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        let mut best_rc = -eps;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.in_basis[i * self.cols + j] {
                    continue;
                }
                let rc = self.reduced_cost(i, j);
                if rc < best_rc {
                    if bland {
                        return Some((i, j));
                    }
                    best_rc = rc;
                    best = Some((i, j));
                }
            }
        }
        best
    }

    /// Edge indices along the tree path from node `a` to node `b`.
    fn tree_path(&self, mut a: usize, mut b: usize) -> Vec<usize> {
        let mut from_a = Vec::new();
        let mut from_b = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_a.push(self.parent_edge[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            from_b.push(self.parent_edge[b]);
            b = self.parent[b];
        }
        while a != b {
            from_a.push(self.parent_edge[a]);
            a = self.parent[a];
            from_b.push(self.parent_edge[b]);
            b = self.parent[b];
        }
        from_b.reverse();
        from_a.extend(from_b);
        from_a
    }
}

/// Staircase initial basis with exactly rows + cols - 1 cells.
fn northwest_corner(supply: &[f64], demand: &[f64]) -> Vec<BasicCell> {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let mut basis = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        if i == m - 1 && j == n - 1 {
            let flow = (0.5 * (s[i] + d[j])).max(0.0);
            basis.push(BasicCell { row: i, col: j, flow });
            break;
        }
        if i == m - 1 {
            let flow = d[j].max(0.0);
            basis.push(BasicCell { row: i, col: j, flow });
            s[i] -= flow;
            j += 1;
            continue;
        }
        if j == n - 1 {
            let flow = s[i].max(0.0);
            basis.push(BasicCell { row: i, col: j, flow });
            d[j] -= flow;
            i += 1;
            continue;
        }
        let flow = s[i].min(d[j]).max(0.0);
        basis.push(BasicCell { row: i, col: j, flow });
        s[i] -= flow;
        d[j] -= flow;
        if s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    basis
}

/// Squared-distance transport between two distributions.
pub fn w2_squared(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    let cost = cost_matrix(p.support().view(), q)?;
    let inst = TransportInstance::new(cost, p.weights().clone(), q.weights().clone())?;
    Ok(solve_transport(&inst)?.value.max(0.0))
}

/// 2-Wasserstein distance.
pub fn w2_distance(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    w2_squared(p, q).map(f64::sqrt)
}

/// Largest instance (rows + cols) accepted by [`brute_force_transport`].
pub const BRUTE_FORCE_MAX_NODES: usize = 8;

/// Exact optimum by enumerating every spanning-tree basis of the
/// transportation polytope. Only for tiny instances; used as a test oracle.
pub fn brute_force_transport(inst: &TransportInstance) -> Result<TransportSolution> {
    let (m, n) = inst.cost.dim();
    if m + n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::invalid(format!(
            "brute force accepts rows + cols <= {BRUTE_FORCE_MAX_NODES}, got {}",
            m + n
        )));
    }
    let cells: Vec<(usize, usize)> = (0..m).cartesian_product(0..n).collect();
    let mut best: Option<(f64, Vec<(usize, usize, f64)>)> = None;
    for subset in cells.iter().copied().combinations(m + n - 1) {
        let Some(flows) = tree_flows(&subset, m, n, &inst.p, &inst.q) else {
            continue;
        };
        if flows.iter().any(|&(_, _, f)| f < -1e-12) {
            continue;
        }
        let value = compensated_sum(flows.iter().map(|&(i, j, f)| f.max(0.0) * inst.cost[[i, j]]));
        if best.as_ref().map_or(true, |(v, _)| value < *v) {
            best = Some((value, flows));
        }
    }
    let (value, flows) = best.ok_or_else(|| Error::numerical("no feasible basis found"))?;
    let mut plan = Array2::zeros((m, n));
    for (i, j, f) in &flows {
        plan[[*i, *j]] = f.max(0.0);
    }
    // Potentials from the optimal tree: u_0 = 0, u_i + v_j = C_ij on tree cells.
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    for _ in 0..(m + n) {
        for &(i, j, _) in &flows {
            if !u[i].is_nan() && v[j].is_nan() {
                v[j] = inst.cost[[i, j]] - u[i];
            } else if u[i].is_nan() && !v[j].is_nan() {
                u[i] = inst.cost[[i, j]] - v[j];
            }
        }
    }
    Ok(TransportSolution {
        plan,
        value,
        row_potentials: Array1::from(u),
        col_potentials: Array1::from(v),
    })
}

/// Flows on a candidate basis, or None if the cells do not form a spanning
/// tree of the bipartite graph.
fn tree_flows(
    cells: &[(usize, usize)],
    m: usize,
    n: usize,
    p: &Array1<f64>,
    q: &Array1<f64>,
) -> Option<Vec<(usize, usize, f64)>> {
    // Union-find cycle check.
    let mut uf: Vec<usize> = (0..m + n).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    for &(i, j) in cells {
        let (a, b) = (find(&mut uf, i), find(&mut uf, m + j));
        if a == b {
            return None;
        }
        uf[a] = b;
    }
    // Leaf elimination.
    let mut residual: Vec<f64> = p.iter().chain(q.iter()).copied().collect();
    let mut degree = vec![0usize; m + n];
    for &(i, j) in cells {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    let mut done = vec![false; cells.len()];
    let mut flows = vec![0.0; cells.len()];
    for _ in 0..cells.len() {
        let (e, leaf) = cells.iter().enumerate().find_map(|(e, &(i, j))| {
            if done[e] {
                None
            } else if degree[i] == 1 {
                Some((e, i))
            } else if degree[m + j] == 1 {
                Some((e, m + j))
            } else {
                None
            }
        })?;
        let (i, j) = cells[e];
        let other = if leaf == i { m + j } else { i };
        flows[e] = residual[leaf];
        residual[other] -= residual[leaf];
        residual[leaf] = 0.0;
        degree[i] -= 1;
        degree[m + j] -= 1;
        done[e] = true;
    }
    Some(
        cells
            .iter()
            .zip(flows)
            .map(|(&(i, j), f)| (i, j, f))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inst(c: Array2<f64>, p: Array1<f64>, q: Array1<f64>) -> TransportInstance {
        TransportInstance::new(c, p, q).unwrap()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        let v = Array1::from_shape_fn(n, |_| rng.random_range(0.01..1.0));
        let s = v.sum();
        v / s
    }

    fn marginals_ok(sol: &TransportSolution, t: &TransportInstance) {
        use ndarray::Axis;
        for (a, b) in sol.plan.sum_axis(Axis(1)).iter().zip(t.row_marginal()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in sol.plan.sum_axis(Axis(0)).iter().zip(t.col_marginal()) {
            assert!((a - b).abs() < 1e-10);
        }
        let direct: f64 = sol.plan.iter().zip(t.cost().iter()).map(|(x, c)| x * c).sum();
        assert!((direct - sol.value).abs() < 1e-10);
    }

    #[test]
    fn two_by_two_example() {
        let t = inst(array![[0.0, 1.0], [1.0, 0.0]], array![0.7, 0.3], array![0.4, 0.6]);
        let sol = solve_transport(&t).unwrap();
        assert!((sol.value - 0.3).abs() < 1e-12);
        let expected = array![[0.4, 0.3], [0.0, 0.3]];
        for (a, b) in sol.plan.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((brute_force_transport(&t).unwrap().value - 0.3).abs() < 1e-12);
        assert!(certificate_residual(&t, &sol) < 1e-12);
    }

    #[test]
    fn identical_marginals_zero_diagonal() {
        let c = array![[0.0, 2.0, 5.0], [2.0, 0.0, 1.0], [5.0, 1.0, 0.0]];
        let p = array![0.2, 0.5, 0.3];
        let sol = solve_transport(&inst(c, p.clone(), p)).unwrap();
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn one_dimensional_pair() {
        let p = DiscreteDistribution::new(array![[0.0], [1.0]], array![0.5, 0.5]).unwrap();
        let q = DiscreteDistribution::new(array![[0.0], [2.0]], array![0.5, 0.5]).unwrap();
        assert!((w2_squared(&p, &q).unwrap() - 0.5).abs() < 1e-12);
        assert!((w2_distance(&p, &q).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((w2_distance(&q, &p).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(w2_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn single_row_is_forced() {
        let t = inst(array![[1.0, 2.0, 3.0]], array![1.0], array![0.2, 0.3, 0.5]);
        for sol in [solve_transport(&t).unwrap(), brute_force_transport(&t).unwrap()] {
            assert_eq!(sol.plan.row(0).to_vec(), vec![0.2, 0.3, 0.5]);
            assert!((sol.value - (0.2 + 0.6 + 1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mass_rows_and_columns_are_reinserted() {
        let c = array![[1.0, 4.0, 0.5], [2.0, 0.0, 3.0], [7.0, 1.0, 2.0]];
        let t = inst(c, array![0.5, 0.0, 0.5], array![0.25, 0.75, 0.0]);
        let sol = solve_transport(&t).unwrap();
        assert_eq!(sol.plan.row(1).sum(), 0.0);
        assert_eq!(sol.plan.column(2).sum(), 0.0);
        marginals_ok(&sol, &t);
        assert!((sol.value - brute_force_transport(&t).unwrap().value).abs() < 1e-12);
        assert!(certificate_residual(&t, &sol) < 1e-12);
    }

    #[test]
    fn rejects_mismatched_mass() {
        let r = TransportInstance::new(array![[1.0, 2.0]], array![1.0], array![0.5, 0.6]);
        assert!(r.is_err());
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let t = inst(Array2::zeros((4, 5)), Array1::from_elem(4, 0.25), Array1::from_elem(5, 0.2));
        assert!(brute_force_transport(&t).is_err());
    }

    #[test]
    fn degenerate_instances_terminate() {
        // Uniform marginals with integer-valued costs are highly degenerate.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [3, 5, 8, 13] {
            let c = Array2::from_shape_fn((n, n), |_| rng.random_range(0..4) as f64);
            let p = Array1::from_elem(n, 1.0 / n as f64);
            let t = inst(c, p.clone(), p);
            let sol = solve_transport(&t).unwrap();
            marginals_ok(&sol, &t);
            assert!(certificate_residual(&t, &sol) < 1e-9);
        }
    }

    #[test]
    fn transpose_symmetry_and_certificate_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let m = rng.random_range(1..12);
            let n = rng.random_range(1..12);
            let c = Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..10.0));
            let t = inst(c, random_simplex(&mut rng, m), random_simplex(&mut rng, n));
            let a = solve_transport(&t).unwrap();
            let b = solve_transport(&t.transposed()).unwrap();
            marginals_ok(&a, &t);
            assert!((a.value - b.value).abs() <= 1e-9 * (1.0 + a.value));
            assert!(certificate_residual(&t, &a) < 1e-9);
        }
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let m = rng.random_range(1..5);
            let n = rng.random_range(1..=(8 - m).min(4));
            let c = Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..5.0));
            let t = inst(c, random_simplex(&mut rng, m), random_simplex(&mut rng, n));
            let a = solve_transport(&t).unwrap();
            let b = brute_force_transport(&t).unwrap();
            assert!((a.value - b.value).abs() <= 1e-9 * (1.0 + b.value));
        }
    }
}
