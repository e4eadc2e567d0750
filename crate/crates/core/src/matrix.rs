//! Dense row-major matrix kernel.
//!
//! Everything downstream (Laplacians, metric views, spectral filters, the
//! gradient engine) is built on [`DenseMatrix`]. Storage is always `f64`:
//! finite-difference gradient validation needs the full 64-bit mantissa.
//!
//! The module keeps a thread-local count of `f64` slots allocated through
//! matrix constructors. Tests use it to assert that the pairwise-distance
//! factorization stays at `O(c*d)` auxiliary memory instead of `O(c^2)`.

use crate::error::{Error, Result};
use std::cell::Cell;
use std::fmt;

thread_local! {
    static F64_ALLOCS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
fn note_alloc(len: usize) {
    F64_ALLOCS.with(|c| c.set(c.get().wrapping_add(len as u64)));
}

/// Reset the thread-local allocation counter.
pub fn reset_f64_alloc_count() {
    F64_ALLOCS.with(|c| c.set(0));
}

/// Number of `f64` slots allocated on this thread since the last reset.
pub fn f64_alloc_count() -> u64 {
    F64_ALLOCS.with(|c| c.get())
}

/// Allocate a zeroed `f64` buffer that participates in allocation accounting.
pub(crate) fn tracked_vec(len: usize) -> Vec<f64> {
    note_alloc(len);
    vec![0.0; len]
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: tracked_vec(rows * cols),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data.fill(value);
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from row-major data. Length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{rows}x{cols}"),
                format!("data length {}", data.len()),
            ));
        }
        note_alloc(data.len());
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Build from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::shape(
                    "from_rows",
                    format!("row 0 length {c}"),
                    format!("row {i} length {}", row.len()),
                ));
            }
            m.row_mut(i).copy_from_slice(row);
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    /// `self * b`, standard row-major product (ikj loop order).
    pub fn matmul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows {
            return Err(Error::shape("matmul", self.shape_str(), b.shape_str()));
        }
        let mut out = Self::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = b.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }

    /// `self * b^T`. Row-dot-row form, used heavily by the gradient engine.
    pub fn matmul_transpose_b(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.cols {
            return Err(Error::shape(
                "matmul_transpose_b",
                self.shape_str(),
                b.shape_str(),
            ));
        }
        let mut out = Self::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = b.row(j);
                let mut acc = 0.0;
                for (&x, &y) in a_row.iter().zip(b_row.iter()) {
                    acc += x * y;
                }
                *o = acc;
            }
        }
        Ok(out)
    }

    /// `self^T * b`.
    pub fn matmul_transpose_a(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != b.rows {
            return Err(Error::shape(
                "matmul_transpose_a",
                self.shape_str(),
                b.shape_str(),
            ));
        }
        let mut out = Self::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = b.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                if a_ki == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ki * b_kj;
                }
            }
        }
        Ok(out)
    }

    /// Element-wise product.
    pub fn hadamard(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != b.shape() {
            return Err(Error::shape("hadamard", self.shape_str(), b.shape_str()));
        }
        let mut out = self.clone();
        for (o, &x) in out.data.iter_mut().zip(b.data.iter()) {
            *o *= x;
        }
        Ok(out)
    }

    pub fn add(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != b.shape() {
            return Err(Error::shape("add", self.shape_str(), b.shape_str()));
        }
        let mut out = self.clone();
        for (o, &x) in out.data.iter_mut().zip(b.data.iter()) {
            *o += x;
        }
        Ok(out)
    }

    pub fn sub(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != b.shape() {
            return Err(Error::shape("sub", self.shape_str(), b.shape_str()));
        }
        let mut out = self.clone();
        for (o, &x) in out.data.iter_mut().zip(b.data.iter()) {
            *o -= x;
        }
        Ok(out)
    }

    /// `self += scale * b`, shapes already verified by the caller.
    pub fn axpy(&mut self, scale: f64, b: &DenseMatrix) -> Result<()> {
        if self.shape() != b.shape() {
            return Err(Error::shape("axpy", self.shape_str(), b.shape_str()));
        }
        for (o, &x) in self.data.iter_mut().zip(b.data.iter()) {
            *o += scale * x;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        let mut out = self.clone();
        out.scale_mut(s);
        out
    }

    pub fn scale_mut(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = f(*v);
        }
        out
    }

    /// Mean and population standard deviation over all elements.
    pub fn elem_stats(&self) -> Result<(f64, f64)> {
        if self.data.is_empty() {
            return Err(Error::domain("elem_stats", "empty matrix".to_string()));
        }
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        Ok((mean, var.sqrt()))
    }

    pub fn max_element(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.at(i, j) - self.at(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute element-wise difference; infinity on shape mismatch.
    pub fn max_abs_diff(&self, b: &DenseMatrix) -> f64 {
        if self.shape() != b.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Result of a power-iteration spectral radius estimate.
#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Largest eigenvalue magnitude of a symmetric matrix via power iteration.
///
/// The start vector comes from a fixed seeded stream so repeated calls on the
/// same matrix return the same estimate. Convergence is declared when
/// successive Rayleigh quotients differ by less than `tol`; otherwise the
/// last estimate is returned flagged as unconverged.
pub fn spectral_radius_max(m: &DenseMatrix, iters: usize, tol: f64) -> Result<SpectralEstimate> {
    let n = check_power_input(m)?;
    let mut rng = crate::rng::SeededRng::new(0x5eed_1a7e);
    let v: Vec<f64> = (0..n).map(|_| rng.uniform() - 0.5).collect();
    power_iterate(m, v, iters, tol)
}

/// Power iteration whose start vector is derived from the matrix itself
/// (row norms plus the diagonal), so relabeling the vertices relabels the
/// whole trajectory. Used where the estimate must be invariant under vertex
/// permutation to near machine precision. A start vector that the matrix
/// annihilates (regular structures) reports 0, signalling the caller to use
/// an analytic bound.
pub fn spectral_radius_equivariant(
    m: &DenseMatrix,
    iters: usize,
    tol: f64,
) -> Result<SpectralEstimate> {
    let n = check_power_input(m)?;
    let v: Vec<f64> = (0..n)
        .map(|i| {
            let row_norm = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            row_norm + 0.25 * m.at(i, i)
        })
        .collect();
    if v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-300 {
        return Ok(SpectralEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    power_iterate(m, v, iters, tol)
}

fn check_power_input(m: &DenseMatrix) -> Result<usize> {
    if !m.is_square() {
        return Err(Error::shape("spectral_radius_max", m.shape_str(), "square"));
    }
    if !m.is_symmetric(1e-10) {
        return Err(Error::domain(
            "spectral_radius_max",
            "matrix not symmetric to 1e-10",
        ));
    }
    if m.rows() == 0 {
        return Err(Error::domain("spectral_radius_max", "empty matrix"));
    }
    Ok(m.rows())
}

fn power_iterate(
    m: &DenseMatrix,
    mut v: Vec<f64>,
    iters: usize,
    tol: f64,
) -> Result<SpectralEstimate> {
    let n = m.rows();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }

    let mut rayleigh_prev = f64::INFINITY;
    let mut w = vec![0.0; n];
    for it in 0..iters {
        for (i, wi) in w.iter_mut().enumerate() {
            let row = m.row(i);
            let mut acc = 0.0;
            for (&a, &x) in row.iter().zip(v.iter()) {
                acc += a * x;
            }
            *wi = acc;
        }
        let rayleigh: f64 = v.iter().zip(w.iter()).map(|(&x, &y)| x * y).sum();
        let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wnorm < 1e-300 {
            // v lies in the null space; the dominant magnitude is ~0.
            return Ok(SpectralEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            });
        }
        for (vi, &wi) in v.iter_mut().zip(w.iter()) {
            *vi = wi / wnorm;
        }
        if (rayleigh - rayleigh_prev).abs() < tol {
            return Ok(SpectralEstimate {
                value: rayleigh.abs(),
                converged: true,
                iterations: it + 1,
            });
        }
        rayleigh_prev = rayleigh;
    }
    Ok(SpectralEstimate {
        value: rayleigh_prev.abs(),
        converged: false,
        iterations: iters,
    })
}
