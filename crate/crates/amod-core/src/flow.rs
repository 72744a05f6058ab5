//! Exact solvers for the passenger matching problem and the minimal
//! rebalancing-cost problem, plus brute-force oracles for testing.
//!
//! Matching decomposes per origin: with the per-origin availability cap the
//! problem is a fractional knapsack with unit weights, so assigning demand
//! greedily by descending margin is optimal (any optimal solution can be
//! rearranged into the greedy one without losing profit).
//!
//! Rebalancing is solved as a transportation problem with direct arcs only:
//! supplies are the idle vehicles, demands the desired counts, a keep-at-home
//! arc costs zero, and the slack (idle not requested anywhere) simply stays
//! put. Under the triangle inequality, enforced upstream by shortest-path
//! closure, a relay through an intermediate station never beats the direct
//! arc, so this reduction attains the optimum of the edge-flow formulation.

use serde::{Deserialize, Serialize};

use crate::error::{AmodError, Result};
use crate::mat::{IntMat, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowRole {
    Passenger,
    Rebalancing,
}

/// Integer origin-destination flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowMatrix {
    pub flows: IntMat,
    pub role: FlowRole,
}

impl FlowMatrix {
    pub fn zeros(n: usize, role: FlowRole) -> Self {
        FlowMatrix {
            flows: IntMat::zeros(n, n),
            role,
        }
    }

    /// Sum of flow * weight over all cells.
    pub fn weighted_total(&self, weights: &Mat) -> f64 {
        let n = self.flows.rows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let f = self.flows[(i, j)];
                if f != 0 {
                    total += f as f64 * weights[(i, j)];
                }
            }
        }
        total
    }

    pub fn total(&self) -> i64 {
        self.flows.data().iter().sum()
    }
}

/// Maximize sum x_ij (p_ij - c_ij) subject to 0 <= x_ij <= d_ij and
/// sum_j x_ij <= idle_i. Zero-margin trips are served (same profit, more
/// served demand); negative-margin trips never are. Ties break toward the
/// lower destination index.
pub fn solve_matching(
    demand: &IntMat,
    price: &Mat,
    cost: &Mat,
    idle: &[i64],
) -> Result<FlowMatrix> {
    let n = demand.rows();
    if demand.cols() != n || price.shape() != (n, n) || cost.shape() != (n, n) || idle.len() != n {
        return Err(AmodError::InvalidArgument("matching input shape mismatch".into()));
    }
    if demand.data().iter().any(|&d| d < 0) || idle.iter().any(|&m| m < 0) {
        return Err(AmodError::InvalidArgument(
            "demand and idle must be nonnegative".into(),
        ));
    }
    let mut out = FlowMatrix::zeros(n, FlowRole::Passenger);
    for i in 0..n {
        let mut dests: Vec<usize> = (0..n).filter(|&j| demand[(i, j)] > 0).collect();
        dests.sort_by(|&a, &b| {
            let ma = price[(i, a)] - cost[(i, a)];
            let mb = price[(i, b)] - cost[(i, b)];
            mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
        });
        let mut remaining = idle[i];
        for j in dests {
            if remaining == 0 {
                break;
            }
            if price[(i, j)] - cost[(i, j)] < 0.0 {
                break;
            }
            let x = remaining.min(demand[(i, j)]);
            out.flows[(i, j)] = x;
            remaining -= x;
        }
    }
    Ok(out)
}

/// Minimize sum c_ij y_ij such that every station ends up with at least its
/// desired count and no station sends more than its idle stock. Requires
/// sum(desired) <= sum(idle).
pub fn solve_rebalancing(idle: &[i64], desired: &[i64], cost: &Mat) -> Result<FlowMatrix> {
    let n = idle.len();
    if desired.len() != n || cost.shape() != (n, n) {
        return Err(AmodError::InvalidArgument("rebalancing input shape mismatch".into()));
    }
    if idle.iter().any(|&m| m < 0) || desired.iter().any(|&d| d < 0) {
        return Err(AmodError::InvalidArgument(
            "idle and desired must be nonnegative".into(),
        ));
    }
    let total_idle: i64 = idle.iter().sum();
    let total_desired: i64 = desired.iter().sum();
    if total_desired > total_idle {
        return Err(AmodError::InvalidArgument(format!(
            "desired total {total_desired} exceeds idle total {total_idle}"
        )));
    }
    // No metric requirement here: successive shortest paths is correct for
    // arbitrary nonnegative costs, and the O(n^3) triangle check would
    // dominate per-decision latency on large networks.

    // Transportation network: source -> origin_i (cap idle_i), origin_i ->
    // dest_j (cost c_ij, c_ii = 0 keep-at-home), dest_j -> sink (cap
    // desired_j). Min-cost flow of value sum(desired) by successive shortest
    // paths with potentials.
    let source = 2 * n;
    let sink = 2 * n + 1;
    let mut g = McmfGraph::new(2 * n + 2);
    for i in 0..n {
        if idle[i] > 0 {
            g.add_edge(source, i, idle[i], 0.0);
        }
        if desired[i] > 0 {
            g.add_edge(n + i, sink, desired[i], 0.0);
        }
    }
    for i in 0..n {
        if idle[i] == 0 {
            continue;
        }
        for j in 0..n {
            if desired[j] == 0 {
                continue;
            }
            let c = if i == j { 0.0 } else { cost[(i, j)] };
            g.add_edge(i, n + j, idle[i], c);
        }
    }
    let sent = g.min_cost_flow(source, sink, total_desired);
    assert_eq!(sent, total_desired, "rebalancing flow must be feasible");

    let mut out = FlowMatrix::zeros(n, FlowRole::Rebalancing);
    for i in 0..n {
        for (j, f) in g.flows_from(i) {
            let dest = j - n;
            if dest != i && f > 0 {
                out.flows[(i, dest)] = f;
            }
        }
    }
    Ok(out)
}

pub fn triangle_inequality_holds(cost: &Mat) -> bool {
    let n = cost.rows();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if cost[(i, j)] > cost[(i, k)] + cost[(k, j)] + 1e-9 {
                    return false;
                }
            }
        }
    }
    true
}

/// Exhaustive search over all feasible integer passenger flows. Refuses
/// instances where the search space exceeds 10^7 states.
pub fn brute_force_matching(
    demand: &IntMat,
    price: &Mat,
    cost: &Mat,
    idle: &[i64],
) -> Result<FlowMatrix> {
    let n = demand.rows();
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| demand[(i, j)] > 0)
        .collect();
    let mut space = 1f64;
    for &(i, j) in &cells {
        space *= (demand[(i, j)] + 1) as f64;
        if space > 1e7 {
            return Err(AmodError::TooLarge(format!("{space:.0} flow combinations")));
        }
    }

    let mut best = FlowMatrix::zeros(n, FlowRole::Passenger);
    let mut best_profit = 0.0;
    let mut current = IntMat::zeros(n, n);
    let mut used = vec![0i64; n];

    fn rec(
        k: usize,
        cells: &[(usize, usize)],
        demand: &IntMat,
        price: &Mat,
        cost: &Mat,
        idle: &[i64],
        current: &mut IntMat,
        used: &mut [i64],
        profit: f64,
        best: &mut FlowMatrix,
        best_profit: &mut f64,
    ) {
        if k == cells.len() {
            if profit > *best_profit {
                *best_profit = profit;
                best.flows = current.clone();
            }
            return;
        }
        let (i, j) = cells[k];
        for x in 0..=demand[(i, j)] {
            if used[i] + x > idle[i] {
                break;
            }
            current[(i, j)] = x;
            used[i] += x;
            rec(
                k + 1,
                cells,
                demand,
                price,
                cost,
                idle,
                current,
                used,
                profit + x as f64 * (price[(i, j)] - cost[(i, j)]),
                best,
                best_profit,
            );
            used[i] -= x;
            current[(i, j)] = 0;
        }
    }

    rec(
        0,
        &cells,
        demand,
        price,
        cost,
        idle,
        &mut current,
        &mut used,
        0.0,
        &mut best,
        &mut best_profit,
    );
    Ok(best)
}

/// Exhaustive search over all integer rebalancing flows, including relay
/// flows on every edge, validating the direct-arc reduction. Small
/// instances only.
pub fn brute_force_rebalancing(idle: &[i64], desired: &[i64], cost: &Mat) -> Result<FlowMatrix> {
    let n = idle.len();
    let total_idle: i64 = idle.iter().sum();
    if n > 4 || total_idle > 6 {
        return Err(AmodError::TooLarge(format!(
            "n={n}, total idle={total_idle} (limits: 4, 6)"
        )));
    }
    if desired.iter().sum::<i64>() > total_idle {
        return Err(AmodError::InvalidArgument("desired exceeds idle".into()));
    }

    // Per-origin candidate rows: all outflow vectors with row sum <= idle_i.
    let rows_for = |i: usize| -> Vec<Vec<i64>> {
        let mut rows = vec![vec![0i64; n]];
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut next = Vec::new();
            for row in &rows {
                let used: i64 = row.iter().sum();
                for y in 0..=(idle[i] - used) {
                    let mut r = row.clone();
                    r[j] = y;
                    next.push(r);
                }
            }
            rows = next;
        }
        rows
    };
    let candidates: Vec<Vec<Vec<i64>>> = (0..n).map(rows_for).collect();

    let mut best: Option<(f64, IntMat)> = None;
    let mut choice = vec![0usize; n];
    loop {
        // assemble and test this combination
        let mut y = IntMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                y[(i, j)] = candidates[i][choice[i]][j];
            }
        }
        let feasible = (0..n).all(|i| {
            let inflow: i64 = (0..n).filter(|&j| j != i).map(|j| y[(j, i)]).sum();
            let outflow: i64 = (0..n).filter(|&j| j != i).map(|j| y[(i, j)]).sum();
            inflow - outflow + idle[i] >= desired[i]
        });
        if feasible {
            let c: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| y[(i, j)] as f64 * cost[(i, j)])
                .sum();
            if best.as_ref().map_or(true, |(bc, _)| c < *bc) {
                best = Some((c, y));
            }
        }
        // advance the odometer
        let mut pos = 0;
        loop {
            if pos == n {
                let (_, flows) = best.expect("desired <= idle always has a feasible flow");
                return Ok(FlowMatrix {
                    flows,
                    role: FlowRole::Rebalancing,
                });
            }
            choice[pos] += 1;
            if choice[pos] < candidates[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

// Successive shortest paths with Dijkstra over reduced costs.
struct McmfEdge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct McmfGraph {
    adj: Vec<Vec<usize>>,
    edges: Vec<McmfEdge>,
    initial_cap: Vec<i64>,
}

impl McmfGraph {
    fn new(n: usize) -> Self {
        McmfGraph {
            adj: vec![Vec::new(); n],
            edges: Vec::new(),
            initial_cap: Vec::new(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(McmfEdge { to, cap, cost });
        self.initial_cap.push(cap);
        self.adj[to].push(self.edges.len());
        self.edges.push(McmfEdge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.initial_cap.push(0);
    }

    fn min_cost_flow(&mut self, source: usize, sink: usize, target: i64) -> i64 {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        let n = self.adj.len();
        let mut potential = vec![0.0f64; n];
        let mut sent = 0i64;
        while sent < target {
            let mut dist = vec![f64::INFINITY; n];
            let mut parent_edge = vec![usize::MAX; n];
            dist[source] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((ordered(0.0), source)));
            while let Some(Reverse((d, u))) = heap.pop() {
                let d = f64::from_bits(d ^ FLIP);
                if d > dist[u] + 1e-12 {
                    continue;
                }
                for &eid in &self.adj[u] {
                    let e = &self.edges[eid];
                    if e.cap <= 0 {
                        continue;
                    }
                    // reduced cost; clamp tiny negatives from float noise
                    let rc = (e.cost + potential[u] - potential[e.to]).max(0.0);
                    let nd = dist[u] + rc;
                    if nd + 1e-12 < dist[e.to] {
                        dist[e.to] = nd;
                        parent_edge[e.to] = eid;
                        heap.push(Reverse((ordered(nd), e.to)));
                    }
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            // bottleneck along the path
            let mut push = target - sent;
            let mut v = sink;
            while v != source {
                let eid = parent_edge[v];
                push = push.min(self.edges[eid].cap);
                v = self.edges[eid ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let eid = parent_edge[v];
                self.edges[eid].cap -= push;
                self.edges[eid ^ 1].cap += push;
                v = self.edges[eid ^ 1].to;
            }
            sent += push;
        }
        sent
    }

    /// (to, flow) for every forward edge out of `node` that carried flow.
    fn flows_from(&self, node: usize) -> Vec<(usize, i64)> {
        self.adj[node]
            .iter()
            .filter(|&&eid| eid % 2 == 0)
            .map(|&eid| {
                let flow = self.initial_cap[eid] - self.edges[eid].cap;
                (self.edges[eid].to, flow)
            })
            .filter(|&(_, f)| f > 0)
            .collect()
    }
}

const FLIP: u64 = 1 << 63;

// total order for nonnegative f64 keys in the heap
fn ordered(x: f64) -> u64 {
    x.to_bits() ^ FLIP
}

/// Seeded random instances for solver-vs-oracle comparisons. All prices
/// and costs are quarter-unit multiples, so objective sums are exactly
/// representable and comparisons need no tolerance.
pub mod instances {
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use crate::mat::{IntMat, Mat};

    #[derive(Debug, Clone)]
    pub struct MatchingInstance {
        pub demand: IntMat,
        pub price: Mat,
        pub cost: Mat,
        pub idle: Vec<i64>,
    }

    #[derive(Debug, Clone)]
    pub struct RebalancingInstance {
        pub idle: Vec<i64>,
        pub desired: Vec<i64>,
        pub cost: Mat,
    }

    /// Symmetric, shortest-path-closed cost matrix with quarter-unit
    /// entries.
    pub fn random_metric_cost(n: usize, rng: &mut ChaCha8Rng) -> Mat {
        let mut c = Mat::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                (rng.gen_range(1..=40) as f64) * 0.25
            }
        });
        for i in 0..n {
            for j in (i + 1)..n {
                let v = c[(i, j)].min(c[(j, i)]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        crate::network::shortest_path_closure_f64(&mut c);
        c
    }

    /// n <= 4, per-pair demand <= 3 — small enough for the brute-force
    /// oracle.
    pub fn random_matching_instance(rng: &mut ChaCha8Rng) -> MatchingInstance {
        let n = rng.gen_range(1..=4);
        let demand = IntMat::from_fn(n, n, |i, j| {
            if i != j && rng.gen_bool(0.5) {
                rng.gen_range(0..=3)
            } else {
                0
            }
        });
        let price = Mat::from_fn(n, n, |_, _| (rng.gen_range(0..=20) as f64) * 0.25);
        let cost = Mat::from_fn(n, n, |_, _| (rng.gen_range(0..=20) as f64) * 0.25);
        let idle: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=4)).collect();
        MatchingInstance {
            demand,
            price,
            cost,
            idle,
        }
    }

    /// n <= 4, total idle <= 6, metric costs — oracle-sized.
    pub fn random_rebalancing_instance(rng: &mut ChaCha8Rng) -> RebalancingInstance {
        let n = rng.gen_range(2..=4);
        let cost = random_metric_cost(n, rng);
        let mut idle = vec![0i64; n];
        let total = rng.gen_range(0..=6);
        for _ in 0..total {
            idle[rng.gen_range(0..n)] += 1;
        }
        let mut desired = vec![0i64; n];
        let want = rng.gen_range(0..=total);
        for _ in 0..want {
            desired[rng.gen_range(0..n)] += 1;
        }
        RebalancingInstance {
            idle,
            desired,
            cost,
        }
    }
}
