//! Dense symmetric eigensolver (cyclic Jacobi).
//!
//! This is the reference path used by the test suites to validate power
//! iteration, Laplacian spectra and Chebyshev filtering against an
//! independent algorithm. The engine itself never calls it; production
//! spectral bounds come from [`crate::matrix::spectral_radius_max`].

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Eigenvalues (ascending) and matching eigenvectors (columns) of a
/// symmetric matrix.
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if !m.is_square() {
        return Err(Error::shape("jacobi_eigenvalues", m.shape_str(), "square"));
    }
    if !m.is_symmetric(1e-9) {
        return Err(Error::domain(
            "jacobi_eigenvalues",
            "matrix not symmetric to 1e-9",
        ));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);

    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.at(i, j) * a.at(i, j);
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a.at(i, i), i)).collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let values: Vec<f64> = pairs.iter().map(|&(val, _)| val).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (newcol, &(_, oldcol)) in pairs.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, newcol, v.at(k, oldcol));
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let d = DenseMatrix::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 5.0],
        ])
        .unwrap();
        let (vals, _) = jacobi_eigenvalues(&d).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        assert!((vals[2] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_holds() {
        let mut rng = SeededRng::new(42);
        let mut raw = DenseMatrix::zeros(6, 6);
        for v in raw.data_mut().iter_mut() {
            *v = rng.uniform() * 2.0 - 1.0;
        }
        let sym = raw.add(&raw.transpose()).unwrap().scale(0.5);
        let (vals, vecs) = jacobi_eigenvalues(&sym).unwrap();
        // A == V diag(vals) V^T
        let mut lam = DenseMatrix::zeros(6, 6);
        for (i, &l) in vals.iter().enumerate() {
            lam.set(i, i, l);
        }
        let rebuilt = vecs
            .matmul(&lam)
            .unwrap()
            .matmul(&vecs.transpose())
            .unwrap();
        assert!(rebuilt.max_abs_diff(&sym) < 1e-9);
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let mut rng = SeededRng::new(7);
        let mut raw = DenseMatrix::zeros(5, 5);
        for v in raw.data_mut().iter_mut() {
            *v = rng.uniform();
        }
        let sym = raw.add(&raw.transpose()).unwrap();
        let (_, vecs) = jacobi_eigenvalues(&sym).unwrap();
        let gram = vecs.matmul_transpose_a(&vecs).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(5)) < 1e-9);
    }
}
