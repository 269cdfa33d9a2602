use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Undirected weighted graph over which agents exchange dual and auxiliary variables.
///
/// The weight matrix is stored as given; [`MultiplierGraph::check`] verifies symmetry,
/// zero diagonal and connectivity.
#[derive(Clone, Debug)]
pub struct MultiplierGraph {
    weights: DMatrix<f64>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl MultiplierGraph {
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "weight matrix must be square and nonempty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "graph weights must be finite and nonnegative".into(),
            ));
        }
        let n = weights.nrows();
        let adjacency = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && weights[(i, j)] != 0.0)
                    .map(|j| (j, weights[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self { weights, adjacency })
    }

    /// Graph with the given undirected edges (0-based) all carrying `weight`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], weight: f64) -> Result<Self> {
        let mut w = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidParameter(format!("bad edge ({i}, {j}) for {n} nodes")));
            }
            w[(i, j)] = weight;
            w[(j, i)] = weight;
        }
        Self::from_weights(w)
    }

    /// Cycle 0-1-...-(n-1)-0 with unit weights. For `n == 2` this is a single edge and
    /// for `n == 1` a lone node.
    pub fn cycle(n: usize) -> Result<Self> {
        let edges: Vec<_> = match n {
            0 => return Err(Error::InvalidParameter("graph needs at least one node".into())),
            1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::from_edges(n, &edges, 1.0)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Weighted degree `d_i = sum_j w_ij`.
    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency[i].iter().map(|(_, w)| w).sum()
    }

    /// Maximum weighted degree `d*`.
    pub fn max_degree(&self) -> f64 {
        (0..self.n_nodes()).map(|i| self.degree(i)).fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n_nodes();
        (0..n).all(|i| self.weights[(i, i)] == 0.0 && (0..i).all(|j| self.weights[(i, j)] == self.weights[(j, i)]))
    }

    /// Breadth-first search from node 0 over nonzero weights (either direction).
    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !seen[j] && (self.weights[(i, j)] != 0.0 || self.weights[(j, i)] != 0.0) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn check(&self) -> Result<()> {
        if !self.is_symmetric() {
            return Err(Error::AsymmetricGraph);
        }
        if !self.is_connected() {
            return Err(Error::DisconnectedGraph);
        }
        Ok(())
    }

    /// Applies `L ⊗ I_m` to a stacked vector of `n_nodes` blocks of size `m`:
    /// `out_i = sum_j w_ij (v_i - v_j)`. Neighbors are visited in index order.
    pub fn apply_laplacian(&self, v: &[f64], m: usize, out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_nodes() * m);
        debug_assert_eq!(out.len(), v.len());
        for i in 0..self.n_nodes() {
            let vi = &v[i * m..(i + 1) * m];
            let oi = &mut out[i * m..(i + 1) * m];
            oi.fill(0.0);
            for &(j, w) in &self.adjacency[i] {
                let vj = &v[j * m..(j + 1) * m];
                for c in 0..m {
                    oi[c] += w * (vi[c] - vj[c]);
                }
            }
        }
    }
}

/// Graph Laplacian `L = D - W`.
///
/// Fails when the graph is asymmetric or disconnected.
pub fn laplacian(graph: &MultiplierGraph) -> Result<DMatrix<f64>> {
    graph.check()?;
    let n = graph.n_nodes();
    let mut l = -graph.weights().clone();
    for i in 0..n {
        l[(i, i)] = graph.degree(i);
    }
    Ok(l)
}

/// Extended Laplacian `L ⊗ I_m`.
pub fn extended_laplacian(l: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    l.kronecker(&DMatrix::identity(m, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn two_node_laplacian() {
        let g = MultiplierGraph::from_edges(2, &[(0, 1)], 1.0).unwrap();
        assert_eq!(laplacian(&g).unwrap(), dmatrix![1.0, -1.0; -1.0, 1.0]);
        let g = MultiplierGraph::from_edges(2, &[(0, 1)], 2.0).unwrap();
        assert_eq!(laplacian(&g).unwrap(), dmatrix![2.0, -2.0; -2.0, 2.0]);
    }

    #[test]
    fn triangle_laplacian() {
        let g = MultiplierGraph::cycle(3).unwrap();
        assert_eq!(
            laplacian(&g).unwrap(),
            dmatrix![2.0, -1.0, -1.0; -1.0, 2.0, -1.0; -1.0, -1.0, 2.0]
        );
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let g = MultiplierGraph::from_edges(4, &[(0, 1), (2, 3)], 1.0).unwrap();
        assert!(matches!(laplacian(&g), Err(Error::DisconnectedGraph)));
    }

    #[test]
    fn asymmetric_weights_fail_check() {
        let g = MultiplierGraph::from_weights(dmatrix![0.0, 1.0; 2.0, 0.0]).unwrap();
        assert!(!g.is_symmetric());
        assert!(matches!(g.check(), Err(Error::AsymmetricGraph)));
    }

    #[test]
    fn apply_matches_dense_kronecker() {
        let g = MultiplierGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 2)], 1.5).unwrap();
        let l = extended_laplacian(&laplacian(&g).unwrap(), 2);
        let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut out = vec![0.0; 8];
        g.apply_laplacian(&v, 2, &mut out);
        let dense = &l * nalgebra::DVector::from_column_slice(&v);
        for (a, b) in out.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_node_is_connected() {
        let g = MultiplierGraph::cycle(1).unwrap();
        assert!(g.check().is_ok());
        assert_eq!(laplacian(&g).unwrap(), dmatrix![0.0]);
    }
}
