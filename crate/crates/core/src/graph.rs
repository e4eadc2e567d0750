//! Graph representation and Laplacian constructions.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// An attributed graph: binary symmetric adjacency, dense per-vertex
/// features, and a class label.
#[derive(Clone, Debug)]
pub struct Graph {
    adjacency: DenseMatrix,
    features: DenseMatrix,
    label: usize,
}

impl Graph {
    pub fn new(adjacency: DenseMatrix, features: DenseMatrix, label: usize) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::shape("Graph::new", adjacency.shape_str(), "square"));
        }
        let n = adjacency.rows();
        if features.rows() != n {
            return Err(Error::shape(
                "Graph::new",
                format!("adjacency {}", adjacency.shape_str()),
                format!("features {}", features.shape_str()),
            ));
        }
        for i in 0..n {
            if adjacency.at(i, i) != 0.0 {
                return Err(Error::domain(
                    "Graph::new",
                    format!("nonzero diagonal at {i}"),
                ));
            }
            for j in 0..n {
                let v = adjacency.at(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::domain(
                        "Graph::new",
                        format!("adjacency entry ({i},{j}) = {v} not in {{0,1}}"),
                    ));
                }
                if (v - adjacency.at(j, i)).abs() != 0.0 {
                    return Err(Error::domain(
                        "Graph::new",
                        format!("adjacency not symmetric at ({i},{j})"),
                    ));
                }
            }
        }
        Ok(Graph {
            adjacency,
            features,
            label,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &DenseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Undirected edge count (each pair counted once).
    pub fn edge_count(&self) -> usize {
        let n = self.vertex_count();
        let mut e = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency.at(i, j) != 0.0 {
                    e += 1;
                }
            }
        }
        e
    }

    /// Apply a vertex relabeling: vertex i of the result is vertex perm[i]
    /// of the original.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.vertex_count();
        if perm.len() != n {
            return Err(Error::domain(
                "Graph::permuted",
                "permutation length mismatch",
            ));
        }
        let mut adj = DenseMatrix::zeros(n, n);
        let mut feat = DenseMatrix::zeros(n, self.feature_dim());
        for i in 0..n {
            feat.row_mut(i).copy_from_slice(self.features.row(perm[i]));
            for j in 0..n {
                adj.set(i, j, self.adjacency.at(perm[i], perm[j]));
            }
        }
        Graph::new(adj, feat, self.label)
    }
}

/// Ordered collection of per-view hybrid Laplacians produced by one layer.
#[derive(Clone, Debug)]
pub struct LaplacianSet {
    matrices: Vec<DenseMatrix>,
}

impl LaplacianSet {
    pub fn new(matrices: Vec<DenseMatrix>) -> Result<Self> {
        if let Some(first) = matrices.first() {
            let n = first.rows();
            for (v, m) in matrices.iter().enumerate() {
                if !m.is_square() || m.rows() != n {
                    return Err(Error::shape(
                        "LaplacianSet::new",
                        format!("member 0 is {n}x{n}"),
                        format!("member {v} is {}", m.shape_str()),
                    ));
                }
                if !m.is_symmetric(1e-10) {
                    return Err(Error::domain(
                        "LaplacianSet::new",
                        format!("member {v} not symmetric to 1e-10"),
                    ));
                }
            }
        }
        Ok(LaplacianSet { matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn get(&self, v: usize) -> &DenseMatrix {
        &self.matrices[v]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.matrices.iter()
    }
}

/// Symmetric normalized Laplacian `I - D^{-1/2} W D^{-1/2}` of a nonnegative
/// weight matrix. Zero-degree vertices take `(D^{-1/2})_ii = 0`, which turns
/// their Laplacian row into the identity row.
pub fn normalized_laplacian(weights: &DenseMatrix) -> Result<DenseMatrix> {
    if !weights.is_square() {
        return Err(Error::shape(
            "normalized_laplacian",
            weights.shape_str(),
            "square",
        ));
    }
    if !weights.is_symmetric(1e-10) {
        return Err(Error::domain(
            "normalized_laplacian",
            "weights not symmetric to 1e-10",
        ));
    }
    let n = weights.rows();
    let mut inv_sqrt_deg = vec![0.0; n];
    for (i, d) in inv_sqrt_deg.iter_mut().enumerate() {
        let mut deg = 0.0;
        for j in 0..n {
            let w = weights.at(i, j);
            if w < 0.0 {
                return Err(Error::domain(
                    "normalized_laplacian",
                    format!("negative weight at ({i},{j})"),
                ));
            }
            deg += w;
        }
        *d = if deg > 0.0 { 1.0 / deg.sqrt() } else { 0.0 };
    }
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let norm = inv_sqrt_deg[i] * weights.at(i, j) * inv_sqrt_deg[j];
            let val = if i == j { 1.0 - norm } else { -norm };
            l.set(i, j, val);
        }
    }
    Ok(l)
}

/// Rescale a Laplacian onto (approximately) [-1, 1]: `(2/lambda_max) L - I`.
pub fn rescale_laplacian(l: &DenseMatrix, lambda_max: f64) -> Result<DenseMatrix> {
    if lambda_max <= 0.0 {
        return Err(Error::domain(
            "rescale_laplacian",
            format!("lambda_max must be positive, got {lambda_max}"),
        ));
    }
    if !l.is_square() {
        return Err(Error::shape("rescale_laplacian", l.shape_str(), "square"));
    }
    let mut out = l.scale(2.0 / lambda_max);
    for i in 0..out.rows() {
        out.add_at(i, i, -1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::jacobi_eigenvalues;

    fn single_edge() -> DenseMatrix {
        DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn laplacian_single_edge() {
        let l = normalized_laplacian(&single_edge()).unwrap();
        let want = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert!(l.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn laplacian_triangle_spectrum() {
        let a = DenseMatrix::from_rows(&[
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        let l = normalized_laplacian(&a).unwrap();
        let (vals, _) = jacobi_eigenvalues(&l).unwrap();
        assert!((vals[0] - 0.0).abs() < 1e-8);
        assert!((vals[1] - 1.5).abs() < 1e-8);
        assert!((vals[2] - 1.5).abs() < 1e-8);
    }

    #[test]
    fn isolated_vertex_gets_identity_row() {
        let a = DenseMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let l = normalized_laplacian(&a).unwrap();
        assert_eq!(l.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(normalized_laplacian(&w).is_err());
    }

    #[test]
    fn rescale_identity_at_lambda_two() {
        let l = DenseMatrix::identity(3);
        let r = rescale_laplacian(&l, 2.0).unwrap();
        assert!(r.max_abs_diff(&DenseMatrix::zeros(3, 3)) < 1e-15);
    }

    #[test]
    fn rescale_hand_case() {
        let l = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let r = rescale_laplacian(&l, 2.0).unwrap();
        let want = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(r.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn rescale_rejects_nonpositive_lambda() {
        let l = DenseMatrix::identity(2);
        assert!(rescale_laplacian(&l, 0.0).is_err());
        assert!(rescale_laplacian(&l, -1.0).is_err());
    }

    #[test]
    fn rescale_with_true_lambda_bounds_spectrum() {
        // eigenvalues of (2/lambda_max) L - I lie in [-1, 1] when lambda_max
        // is the true maximum, over 10 random normalized Laplacians
        let mut rng = crate::rng::SeededRng::new(97);
        for _ in 0..10 {
            let n = 3 + rng.below(6);
            let mut adj = DenseMatrix::zeros(n, n);
            for i in 1..n {
                let j = rng.below(i);
                adj.set(i, j, 1.0);
                adj.set(j, i, 1.0);
            }
            let l = normalized_laplacian(&adj).unwrap();
            let (vals, _) = jacobi_eigenvalues(&l).unwrap();
            let lambda_max = vals[vals.len() - 1];
            let r = rescale_laplacian(&l, lambda_max).unwrap();
            let (rvals, _) = jacobi_eigenvalues(&r).unwrap();
            assert!(
                rvals[0] >= -1.0 - 1e-8 && rvals[rvals.len() - 1] <= 1.0 + 1e-8,
                "rescaled spectrum {rvals:?}"
            );
        }
    }

    #[test]
    fn rescale_round_trips() {
        let mut rng = crate::rng::SeededRng::new(31);
        let mut raw = DenseMatrix::zeros(5, 5);
        for v in raw.data_mut().iter_mut() {
            *v = rng.uniform();
        }
        let sym = raw.add(&raw.transpose()).unwrap();
        let r = rescale_laplacian(&sym, 3.7).unwrap();
        // invert: L = lambda/2 (R + I)
        let mut back = r.clone();
        for i in 0..5 {
            back.add_at(i, i, 1.0);
        }
        back.scale_mut(3.7 / 2.0);
        assert!(back.max_abs_diff(&sym) < 1e-12);
    }
}
