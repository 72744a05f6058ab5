//! Graph representation of the service area: stations, connectivity,
//! travel times, trip costs and prices.
//!
//! Two structures coexist on purpose: dense travel-time / cost / price
//! matrices for trips (trips may go between any pair of stations), and a
//! sparse symmetric adjacency restricted to spatially neighboring stations,
//! which feeds the graph convolution.

use serde::{Deserialize, Serialize};

use crate::error::{AmodError, Result};
use crate::mat::{IntMat, Mat, SparseMat};

/// The transportation network: `n` stations with pairwise travel times
/// (integer time steps), trip costs and per-time-bin trip prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportNetwork {
    pub n_stations: usize,
    /// Binary symmetric adjacency with zero diagonal (neighbor connectivity).
    pub adjacency: IntMat,
    /// tau_ij, in time steps. tau_ii = 0, tau_ij >= 1 off-diagonal.
    pub travel_time: IntMat,
    /// c_ij, in currency units.
    pub cost: Mat,
    /// p_ij per time bin; a single entry means prices are flat over time.
    pub price: Vec<Mat>,
}

impl TransportNetwork {
    /// Price matrix in effect during time bin `bin` (clamped to the last one).
    pub fn price_at_bin(&self, bin: usize) -> &Mat {
        let b = bin.min(self.price.len() - 1);
        &self.price[b]
    }

    /// Undirected neighbor edges (i < j).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_stations;
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[(i, j)] != 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Builds a rows x cols grid of stations with von Neumann (4-neighbor)
/// adjacency. Travel time is the Manhattan hop distance; cost and price
/// scale linearly with it.
pub fn build_grid_network(
    rows: usize,
    cols: usize,
    base_cost: f64,
    base_price: f64,
) -> Result<TransportNetwork> {
    if rows == 0 || cols == 0 {
        return Err(AmodError::InvalidArgument(
            "grid must have at least one row and column".into(),
        ));
    }
    let n = rows * cols;
    let coord = |s: usize| (s / cols, s % cols);
    let hops = |a: usize, b: usize| -> i64 {
        let (ra, ca) = coord(a);
        let (rb, cb) = coord(b);
        (ra.abs_diff(rb) + ca.abs_diff(cb)) as i64
    };
    let adjacency = IntMat::from_fn(n, n, |i, j| if i != j && hops(i, j) == 1 { 1 } else { 0 });
    let travel_time = IntMat::from_fn(n, n, |i, j| hops(i, j));
    let cost = Mat::from_fn(n, n, |i, j| base_cost * hops(i, j) as f64);
    let price = Mat::from_fn(n, n, |i, j| base_price * hops(i, j) as f64);
    Ok(TransportNetwork {
        n_stations: n,
        adjacency,
        travel_time,
        cost,
        price: vec![price],
    })
}

/// D^{-1/2} (A + I) D^{-1/2} as a sparse symmetric matrix, where D is the
/// degree matrix of A + I.
pub fn normalized_adjacency(adjacency: &IntMat) -> Result<SparseMat> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(AmodError::InvalidArgument("adjacency must be square".into()));
    }
    for i in 0..n {
        if adjacency[(i, i)] != 0 {
            return Err(AmodError::InvalidArgument(
                "adjacency diagonal must be zero".into(),
            ));
        }
        for j in 0..n {
            if adjacency[(i, j)] != adjacency[(j, i)] {
                return Err(AmodError::InvalidArgument("adjacency must be symmetric".into()));
            }
        }
    }
    // degrees of A + I
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).map(|j| adjacency[(i, j)] as f64).sum::<f64>())
        .collect();
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let a_hat = if i == j { 1.0 } else { adjacency[(i, j)] as f64 };
            if a_hat != 0.0 {
                triplets.push((i, j, a_hat / (deg[i] * deg[j]).sqrt()));
            }
        }
    }
    Ok(SparseMat { n, triplets })
}

/// Floyd-Warshall closure in place; returns the repaired (i, j) pairs.
pub fn shortest_path_closure_f64(m: &mut Mat) -> Vec<(usize, usize)> {
    let n = m.rows();
    let mut repaired = Vec::new();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = m[(i, k)] + m[(k, j)];
                if via < m[(i, j)] {
                    if !repaired.contains(&(i, j)) {
                        repaired.push((i, j));
                    }
                    m[(i, j)] = via;
                }
            }
        }
    }
    repaired
}

/// Integer (travel time) variant of the closure.
pub fn shortest_path_closure_int(m: &mut IntMat) -> Vec<(usize, usize)> {
    let n = m.rows();
    let mut repaired = Vec::new();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = m[(i, k)].saturating_add(m[(k, j)]);
                if via < m[(i, j)] {
                    if !repaired.contains(&(i, j)) {
                        repaired.push((i, j));
                    }
                    m[(i, j)] = via;
                }
            }
        }
    }
    repaired
}
