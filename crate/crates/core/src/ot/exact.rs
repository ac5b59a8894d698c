//! Exact solvers behind [`emd_exact`](super::emd_exact).
//!
//! Two paths:
//!
//! * equal-size inputs whose weights are all identical reduce to an
//!   assignment problem, solved with the Hungarian algorithm in its
//!   potentials (Jonker-Volgenant-style) formulation;
//! * everything else is a transportation problem, solved with successive
//!   shortest augmenting paths over the bipartite residual graph, using
//!   node potentials so Dijkstra sees non-negative reduced costs.
//!
//! Both maintain dual variables `(u, v)` with `u_i + v_j <= c_ij` and
//! complementary slackness on shipped arcs, so at termination the flow cost
//! equals the dual objective — an optimality certificate the unit tests
//! check explicitly.

use super::{euclidean_distance, EmpiricalDistribution, TransportMove, TransportPlan};
use crate::error::{Error, Result};

/// Mass below this threshold is treated as already shipped; guards the
/// solver against floating-point crumbs looping forever.
const MASS_EPS: f64 = 1e-12;

pub(super) fn solve(
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
) -> Result<(f64, TransportPlan)> {
    let cost = CostMatrix::new(x, y);
    let uniform = x.len() == y.len()
        && x.weights().iter().all(|&w| w == x.weights()[0])
        && y.weights().iter().all(|&w| w == y.weights()[0]);
    if uniform {
        let per_point = x.weights()[0];
        let assignment = solve_assignment(x.len(), |i, j| cost.get(i, j));
        let mut total = 0.0;
        let mut moves = Vec::with_capacity(x.len());
        for (i, &j) in assignment.iter().enumerate() {
            total += per_point * cost.get(i, j);
            moves.push(TransportMove {
                from: i,
                to: j,
                mass: per_point,
            });
        }
        Ok((total, TransportPlan { moves }))
    } else {
        let flow = solve_transport(&cost, x.weights(), y.weights())?;
        Ok((flow.cost, flow.plan))
    }
}

/// Dense Euclidean cost matrix between two point clouds.
struct CostMatrix {
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    fn new(x: &EmpiricalDistribution, y: &EmpiricalDistribution) -> Self {
        let (n, m) = (x.len(), y.len());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(euclidean_distance(x.point(i), y.point(j)));
            }
        }
        Self { cols: m, data }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Hungarian algorithm (potentials formulation). Returns, for each row `i`,
/// the column assigned to it in a minimum-cost perfect matching.
///
/// 1-based arrays internally with a virtual column 0, per the classic
/// formulation; O(n^3) overall.
fn solve_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    const INF: f64 = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j] = row currently matched to column j (0 = unmatched).
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

struct FlowSolution {
    cost: f64,
    plan: TransportPlan,
    /// Dual variables: `u[i] + v[j] <= c_ij` with equality on shipped arcs.
    /// Kept so tests can certify optimality through linear-programming
    /// duality; production callers only need `cost` and `plan`.
    #[allow(dead_code)]
    u: Vec<f64>,
    #[allow(dead_code)]
    v: Vec<f64>,
}

/// Successive-shortest-path transportation solver.
///
/// Supplies and demands are renormalised to sum to exactly (up to one
/// rounding) the same total, then mass is routed along shortest residual
/// paths until every supply is exhausted.
fn solve_transport(cost: &CostMatrix, supplies: &[f64], demands: &[f64]) -> Result<FlowSolution> {
    const INF: f64 = f64::INFINITY;
    let n = supplies.len();
    let m = demands.len();
    let sum_a: f64 = supplies.iter().sum();
    let sum_b: f64 = demands.iter().sum();
    let mut rem_a: Vec<f64> = supplies.iter().map(|a| a / sum_a).collect();
    let mut rem_b: Vec<f64> = demands.iter().map(|b| b / sum_b).collect();

    let mut flow = vec![0.0f64; n * m];
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];

    let max_augmentations = 64 * (n + m) + 1024;
    let mut augmentations = 0;
    while rem_a.iter().any(|r| *r > MASS_EPS) {
        if !rem_b.iter().any(|r| *r > MASS_EPS) {
            // Residual imbalance from input rounding; it is below the
            // feasibility tolerance checked by the caller.
            break;
        }
        augmentations += 1;
        if augmentations > max_augmentations {
            return Err(Error::Internal(format!(
                "transport solver exceeded its augmentation budget \
                 ({max_augmentations}) on a {n}x{m} instance"
            )));
        }

        // Dense Dijkstra over sources and sinks with reduced costs.
        let mut ds = vec![INF; n];
        let mut dt = vec![INF; m];
        let mut done_s = vec![false; n];
        let mut done_t = vec![false; m];
        // Sink j was reached over the forward arc from source parent_t[j].
        let mut parent_t = vec![usize::MAX; m];
        // Source i was reached over the backward arc from sink parent_s[i].
        let mut parent_s = vec![usize::MAX; n];
        for (i, &r) in rem_a.iter().enumerate() {
            if r > MASS_EPS {
                ds[i] = 0.0;
            }
        }

        let target = loop {
            let mut best = INF;
            let mut node: Option<(bool, usize)> = None;
            for (i, &d) in ds.iter().enumerate() {
                if !done_s[i] && d < best {
                    best = d;
                    node = Some((false, i));
                }
            }
            for (j, &d) in dt.iter().enumerate() {
                if !done_t[j] && d < best {
                    best = d;
                    node = Some((true, j));
                }
            }
            match node {
                None => {
                    return Err(Error::Internal(
                        "transport solver: no augmenting path in a complete bipartite graph"
                            .into(),
                    ))
                }
                Some((false, i)) => {
                    done_s[i] = true;
                    for j in 0..m {
                        if !done_t[j] {
                            // Clamp tiny negatives introduced by potential updates.
                            let rc = (cost.get(i, j) - u[i] - v[j]).max(0.0);
                            if ds[i] + rc < dt[j] {
                                dt[j] = ds[i] + rc;
                                parent_t[j] = i;
                            }
                        }
                    }
                }
                Some((true, j)) => {
                    done_t[j] = true;
                    if rem_b[j] > MASS_EPS {
                        break j;
                    }
                    for i in 0..n {
                        // Backward arcs carry zero reduced cost by
                        // complementary slackness.
                        if !done_s[i] && flow[i * m + j] > MASS_EPS && dt[j] < ds[i] {
                            ds[i] = dt[j];
                            parent_s[i] = j;
                        }
                    }
                }
            }
        };

        // Standard potential update: shift by distances capped at the
        // target's distance, preserving non-negative reduced costs and
        // slackness on shipped arcs.
        let reach = dt[target];
        for (ui, &d) in u.iter_mut().zip(&ds) {
            *ui -= d.min(reach);
        }
        for (vj, &d) in v.iter_mut().zip(&dt) {
            *vj += d.min(reach);
        }

        // Walk parents back to a supply root, collecting the path.
        let mut forward_arcs: Vec<(usize, usize)> = Vec::new();
        let mut backward_arcs: Vec<(usize, usize)> = Vec::new();
        let mut j = target;
        let root = loop {
            let i = parent_t[j];
            debug_assert!(i != usize::MAX);
            forward_arcs.push((i, j));
            match parent_s[i] {
                usize::MAX => break i,
                prev_j => {
                    backward_arcs.push((i, prev_j));
                    j = prev_j;
                }
            }
        };

        let mut delta = rem_a[root].min(rem_b[target]);
        for &(i, j) in &backward_arcs {
            delta = delta.min(flow[i * m + j]);
        }
        debug_assert!(delta > 0.0);
        for &(i, j) in &forward_arcs {
            flow[i * m + j] += delta;
        }
        for &(i, j) in &backward_arcs {
            flow[i * m + j] -= delta;
        }
        rem_a[root] -= delta;
        rem_b[target] -= delta;
    }

    let mut total = 0.0;
    let mut moves = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let f = flow[i * m + j];
            if f > 0.0 {
                total += f * cost.get(i, j);
                moves.push(TransportMove {
                    from: i,
                    to: j,
                    mass: f,
                });
            }
        }
    }
    Ok(FlowSolution {
        cost: total,
        plan: TransportPlan { moves },
        u,
        v,
    })
}
