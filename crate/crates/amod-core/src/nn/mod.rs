//! Minimal reverse-mode autodiff over dense matrices, the graph
//! convolution layer, special functions, the Dirichlet distribution and
//! the Adam optimizer.

pub mod adam;
pub mod dirichlet;
pub mod special;
pub mod tape;

pub use adam::{adam_step, Parameter};
pub use tape::{Tape, TensorId};

use crate::error::Result;

/// One graph convolution with an additive learned skip projection:
/// ReLU(S X W + X W_skip), fully differentiable in X, W and W_skip.
/// `s` is a sparse matrix handle previously registered on the tape
/// (normally the normalized adjacency).
pub fn gcn_layer(
    tape: &mut Tape,
    x: TensorId,
    s: usize,
    w: TensorId,
    w_skip: TensorId,
) -> Result<TensorId> {
    let agg = tape.spmm(s, x)?;
    let conv = tape.matmul(agg, w)?;
    let skip = tape.matmul(x, w_skip)?;
    let sum = tape.add(conv, skip)?;
    tape.relu(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{Mat, SparseMat};

    #[test]
    fn gcn_isolated_node_identity() {
        // single node: S = I, W = I, W_skip = 0 -> output equals input
        let mut tape = Tape::new();
        let s = tape.sparse(SparseMat {
            n: 1,
            triplets: vec![(0, 0, 1.0)],
        });
        let x = tape.leaf(Mat::from_vec(1, 1, vec![2.0]));
        let w = tape.leaf(Mat::identity(1));
        let w_skip = tape.leaf(Mat::zeros(1, 1));
        let y = gcn_layer(&mut tape, x, s, w, w_skip).unwrap();
        assert_eq!(tape.value(y)[(0, 0)], 2.0);
    }

    #[test]
    fn gcn_two_node_edge_by_hand() {
        // 2-node edge: normalized adjacency is all 0.5, X = [[2],[4]],
        // W = [[1]], W_skip = [[0]] -> [[3],[3]]
        let mut tape = Tape::new();
        let s = tape.sparse(SparseMat {
            n: 2,
            triplets: vec![(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)],
        });
        let x = tape.leaf(Mat::from_vec(2, 1, vec![2.0, 4.0]));
        let w = tape.leaf(Mat::identity(1));
        let w_skip = tape.leaf(Mat::zeros(1, 1));
        let y = gcn_layer(&mut tape, x, s, w, w_skip).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 3.0]);
    }
}
