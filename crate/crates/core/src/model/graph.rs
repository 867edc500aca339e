//! Per-sample dynamic KNN graph over AU node features.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Directed KNN graph: each node points at its K most similar peers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuGraph {
    neighbors: Vec<Vec<usize>>,
    k: usize,
}

impl AuGraph {
    /// Neighbor lists in selection order (most similar first).
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> usize {
        self.neighbors.len()
    }

    /// Row-normalized adjacency: `A[i][j] = 1/K` on edges i → j.
    pub fn adjacency<T: Scalar>(&self) -> Array2<T> {
        let n = self.nodes();
        let w = T::c(1.0 / self.k as f64);
        let mut a = Array2::zeros((n, n));
        for (i, ns) in self.neighbors.iter().enumerate() {
            for &j in ns {
                a[[i, j]] = w;
            }
        }
        a
    }
}

/// Connects every node to the K others with largest dot product.
/// Equal similarities go to the smaller node index.
pub fn build_knn_graph<T: Scalar>(features: ArrayView2<T>, k: usize) -> Result<AuGraph> {
    let n = features.nrows();
    if k == 0 || k + 1 > n {
        return Err(Error::KTooLarge { k, nodes: n });
    }
    let sim = features.dot(&features.t());
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut taken = vec![false; n];
        taken[i] = true;
        let mut chosen = Vec::with_capacity(k);
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if taken[j] {
                    continue;
                }
                // strict comparison keeps the earlier (smaller) index on ties
                if best.is_none_or(|b| sim[[i, j]] > sim[[i, b]]) {
                    best = Some(j);
                }
            }
            let j = best.expect("k < n leaves a candidate");
            taken[j] = true;
            chosen.push(j);
        }
        neighbors.push(chosen);
    }
    Ok(AuGraph { neighbors, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tie_breaks_toward_smaller_index() {
        let x = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let g = build_knn_graph(x.view(), 1).unwrap();
        assert_eq!(g.neighbors(), &[vec![1], vec![0], vec![0]]);
    }

    #[test]
    fn saturated_k_is_complete() {
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [0.0, 0.0]];
        let g = build_knn_graph(x.view(), 3).unwrap();
        let a = g.adjacency::<f64>();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert_eq!(a[[i, j]], expected);
            }
        }
    }

    #[test]
    fn k_too_large() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            build_knn_graph(x.view(), 2),
            Err(Error::KTooLarge { k: 2, nodes: 2 })
        ));
        assert!(build_knn_graph(x.view(), 0).is_err());
    }
}
