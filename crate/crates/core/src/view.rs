//! Trainable metric views.
//!
//! Each view carries a factor `Q` inducing the PSD metric `M = Q Q^T`. From
//! a graph signal `X` the view produces pairwise Mahalanobis distances over
//! unique vertex pairs, a Gaussian similarity graph `S`, the view Laplacian
//! `L_v = I - D^{-1/2} S D^{-1/2}` (with `D` the degree matrix of `S`), and
//! the hybrid Laplacian `L_h = L_in + alpha * L_v`.
//!
//! Distances use the factorized form `d = ((F M (.) F) 1 + eps)^{1/2}` over
//! the `c x d` difference matrix `F`, so auxiliary memory stays `O(c*d)` and
//! the `c x c` product never materializes.

use crate::error::{Error, Result};
use crate::graph::normalized_laplacian;
use crate::matrix::{tracked_vec, DenseMatrix};

/// Stability floor added under the square root of the pairwise distances;
/// keeps the gradient of sqrt finite when two vertices share features.
pub const DIST_EPS: f64 = 1e-12;

/// One trainable view: the factor of the induced metric.
#[derive(Clone, Debug)]
pub struct ViewParams {
    pub q_factor: DenseMatrix,
    pub view_index: usize,
}

/// Unique unordered vertex pairs (i < j) in lexicographic order.
#[derive(Clone, Debug)]
pub struct PairIndex {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(
                "PairIndex::new",
                format!("need at least 2 vertices, got {n}"),
            ));
        }
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((i, j));
            }
        }
        Ok(PairIndex { n, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Per-view similarity structure.
#[derive(Clone, Debug)]
pub struct ViewGraph {
    pub h_matrix: DenseMatrix,
    pub s_matrix: DenseMatrix,
    pub l_view: DenseMatrix,
    pub l_hybrid: DenseMatrix,
}

/// Result of metric normalization.
#[derive(Clone, Debug)]
pub struct MetricOutcome {
    pub m: DenseMatrix,
    pub max_element: f64,
    /// Row-major position of the maximum element of `Q Q^T`; the
    /// normalization's backward pass keeps this position fixed while
    /// differentiating through the entry's value.
    pub max_position: (usize, usize),
    /// Set when `Q` is all zeros and the metric collapsed to the zero matrix.
    pub degenerate: bool,
}

/// Difference rows `x_i - x_j` over all unique pairs.
pub fn feature_differences(x: &DenseMatrix) -> Result<(DenseMatrix, PairIndex)> {
    let idx = PairIndex::new(x.rows())?;
    let d = x.cols();
    let mut f = DenseMatrix::zeros(idx.len(), d);
    for (r, &(i, j)) in idx.pairs().iter().enumerate() {
        let xi = x.row(i);
        let xj = x.row(j);
        let row = f.row_mut(r);
        for k in 0..d {
            row[k] = xi[k] - xj[k];
        }
    }
    Ok((f, idx))
}

/// `M = Q Q^T`, divided by its maximum element when positive. Scaling by a
/// positive constant preserves positive semi-definiteness.
pub fn regularized_metric(view: &ViewParams) -> MetricOutcome {
    let q = &view.q_factor;
    let mut m = q.matmul_transpose_b(q).expect("QQ^T shapes always agree");
    let d = m.rows();
    let mut mx = f64::NEG_INFINITY;
    let mut pos = (0, 0);
    for i in 0..d {
        for j in 0..d {
            if m.at(i, j) > mx {
                mx = m.at(i, j);
                pos = (i, j);
            }
        }
    }
    if mx > 0.0 {
        m.scale_mut(1.0 / mx);
        MetricOutcome {
            m,
            max_element: mx,
            max_position: pos,
            degenerate: false,
        }
    } else {
        MetricOutcome {
            m,
            max_element: mx,
            max_position: pos,
            degenerate: true,
        }
    }
}

/// Factorized pairwise Mahalanobis distances: `((F M (.) F) 1 + eps)^{1/2}`.
/// Never materializes the `c x c` product.
pub fn pairwise_mahalanobis(f: &DenseMatrix, m: &DenseMatrix) -> Result<Vec<f64>> {
    if !m.is_square() || m.cols() != f.cols() {
        return Err(Error::shape(
            "pairwise_mahalanobis",
            f.shape_str(),
            m.shape_str(),
        ));
    }
    let g = f.matmul(m)?; // c x d
    let mut out = tracked_vec(f.rows());
    for (r, o) in out.iter_mut().enumerate() {
        let fr = f.row(r);
        let gr = g.row(r);
        let mut s = 0.0;
        for (&a, &b) in fr.iter().zip(gr.iter()) {
            s += a * b;
        }
        *o = (s + DIST_EPS).sqrt();
    }
    Ok(out)
}

/// Place unique-pair distances back into a symmetric zero-diagonal matrix.
pub fn scatter_distances(d_v: &[f64], idx: &PairIndex) -> Result<DenseMatrix> {
    if d_v.len() != idx.len() {
        return Err(Error::shape(
            "scatter_distances",
            format!("{} distances", d_v.len()),
            format!("{} pairs", idx.len()),
        ));
    }
    let n = idx.vertex_count();
    let mut h = DenseMatrix::zeros(n, n);
    for (r, &(i, j)) in idx.pairs().iter().enumerate() {
        h.set(i, j, d_v[r]);
        h.set(j, i, d_v[r]);
    }
    Ok(h)
}

/// Element-wise Gaussian kernel `exp(-H / (2 sigma^2))`. When `squared` is
/// set the conventional `exp(-H^2 / (2 sigma^2))` variant is used instead.
pub fn gaussian_similarity_with(h: &DenseMatrix, sigma: f64, squared: bool) -> Result<DenseMatrix> {
    if sigma <= 0.0 {
        return Err(Error::domain(
            "gaussian_similarity",
            format!("sigma must be positive, got {sigma}"),
        ));
    }
    let denom = 2.0 * sigma * sigma;
    let s = if squared {
        h.map(|v| (-(v * v) / denom).exp())
    } else {
        h.map(|v| (-v / denom).exp())
    };
    Ok(s)
}

/// The default (literal) kernel on distances.
pub fn gaussian_similarity(h: &DenseMatrix, sigma: f64) -> Result<DenseMatrix> {
    gaussian_similarity_with(h, sigma, false)
}

/// View Laplacian from similarities plus hybrid combination with the input
/// Laplacian: `L_h = L_in + alpha * L_v`.
pub fn hybrid_laplacian(
    l_in: &DenseMatrix,
    s_v: &DenseMatrix,
    alpha: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if l_in.shape() != s_v.shape() {
        return Err(Error::shape(
            "hybrid_laplacian",
            l_in.shape_str(),
            s_v.shape_str(),
        ));
    }
    if alpha < 0.0 {
        return Err(Error::domain(
            "hybrid_laplacian",
            format!("alpha must be nonnegative, got {alpha}"),
        ));
    }
    let l_view = normalized_laplacian(s_v)?;
    let mut l_hybrid = l_in.clone();
    l_hybrid.axpy(alpha, &l_view)?;
    Ok((l_view, l_hybrid))
}

/// How the kernel bandwidth is chosen.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// Fixed value from the configuration.
    Fixed,
    /// Median of the current view's distances, treated as a constant in
    /// backpropagation. Falls back to the configured value when the median
    /// is numerically zero.
    Median,
}

/// Forward-pass configuration shared by all views of a layer.
#[derive(Clone, Copy, Debug)]
pub struct ViewConfig {
    pub alpha: f64,
    pub sigma: f64,
    pub sigma_mode: SigmaMode,
    pub squared_kernel: bool,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            alpha: 1.0,
            sigma: 1.0,
            sigma_mode: SigmaMode::Fixed,
            squared_kernel: false,
        }
    }
}

/// Everything the backward pass needs about one view's forward evaluation.
#[derive(Clone, Debug)]
pub struct ViewForwardCache {
    pub metric: DenseMatrix,
    pub metric_max: f64,
    pub metric_max_position: (usize, usize),
    pub degenerate: bool,
    pub f: DenseMatrix,
    pub g: DenseMatrix,
    pub dist: Vec<f64>,
    pub s: DenseMatrix,
    pub inv_sqrt_deg: Vec<f64>,
    pub l_view: DenseMatrix,
    pub l_hybrid: DenseMatrix,
    pub sigma_used: f64,
    pub squared_kernel: bool,
    pub alpha: f64,
}

impl ViewForwardCache {
    pub fn view_graph(&self) -> ViewGraph {
        let idx = PairIndex::new(self.s.rows()).expect("cache came from a valid graph");
        ViewGraph {
            h_matrix: scatter_distances(&self.dist, &idx).expect("cached lengths agree"),
            s_matrix: self.s.clone(),
            l_view: self.l_view.clone(),
            l_hybrid: self.l_hybrid.clone(),
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Build one view from the signal and input Laplacian, keeping the
/// intermediates required by [`view_backward`].
pub fn view_forward(
    x: &DenseMatrix,
    l_in: &DenseMatrix,
    view: &ViewParams,
    pair_idx: &PairIndex,
    cfg: &ViewConfig,
) -> Result<ViewForwardCache> {
    let MetricOutcome {
        m,
        max_element,
        max_position,
        degenerate,
    } = regularized_metric(view);
    let (f, _) = feature_differences(x)?;
    let g = f.matmul(&m)?;
    let mut dist = tracked_vec(pair_idx.len());
    for (r, o) in dist.iter_mut().enumerate() {
        let fr = f.row(r);
        let gr = g.row(r);
        let mut s = 0.0;
        for (&a, &b) in fr.iter().zip(gr.iter()) {
            s += a * b;
        }
        *o = (s + DIST_EPS).sqrt();
    }
    let sigma_used = match cfg.sigma_mode {
        SigmaMode::Fixed => cfg.sigma,
        SigmaMode::Median => {
            let med = median(&dist);
            if med > 1e-9 {
                med
            } else {
                cfg.sigma
            }
        }
    };
    let h = scatter_distances(&dist, pair_idx)?;
    let s = gaussian_similarity_with(&h, sigma_used, cfg.squared_kernel)?;

    let n = s.rows();
    let mut inv_sqrt_deg = vec![0.0; n];
    for (i, u) in inv_sqrt_deg.iter_mut().enumerate() {
        let deg: f64 = s.row(i).iter().sum();
        // entries of S are strictly positive, so deg > 0 always holds
        *u = 1.0 / deg.sqrt();
    }
    let mut l_view = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = inv_sqrt_deg[i] * s.at(i, j) * inv_sqrt_deg[j];
            l_view.set(i, j, if i == j { 1.0 - v } else { -v });
        }
    }
    let mut l_hybrid = l_in.clone();
    l_hybrid.axpy(cfg.alpha, &l_view)?;

    Ok(ViewForwardCache {
        metric: m,
        metric_max: max_element,
        metric_max_position: max_position,
        degenerate,
        f,
        g,
        dist,
        s,
        inv_sqrt_deg,
        l_view,
        l_hybrid,
        sigma_used,
        squared_kernel: cfg.squared_kernel,
        alpha: cfg.alpha,
    })
}

/// Gradients produced by one view's backward pass.
pub struct ViewBackward {
    pub d_q: DenseMatrix,
    /// Contribution to the gradient of the layer's input signal.
    pub d_x: DenseMatrix,
    /// Contribution to the gradient of the input Laplacian (identity path
    /// of `L_h = L_in + alpha L_v`).
    pub d_l_in: DenseMatrix,
}

/// Reverse-mode pass through metric normalization, pairwise distances,
/// Gaussian kernel, degree normalization and the hybrid combination.
///
/// `d_l_hybrid` is the loss gradient with respect to this view's hybrid
/// Laplacian. The metric's max element and (in median mode) the bandwidth
/// are treated as constants.
pub fn view_backward(
    x: &DenseMatrix,
    q: &DenseMatrix,
    pair_idx: &PairIndex,
    cache: &ViewForwardCache,
    d_l_hybrid: &DenseMatrix,
) -> Result<ViewBackward> {
    let n = cache.s.rows();
    let d = x.cols();
    let u = &cache.inv_sqrt_deg;

    // L_h = L_in + alpha L_v ; L_v = I - N with N = D^{-1/2} S D^{-1/2}
    let d_l_in = d_l_hybrid.clone();
    // dN = -alpha * dL_h
    let mut d_s = DenseMatrix::zeros(n, n);
    let mut du = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let dn = -cache.alpha * d_l_hybrid.at(i, j);
            d_s.add_at(i, j, u[i] * u[j] * dn);
            du[i] += dn * cache.s.at(i, j) * u[j];
            du[j] += dn * cache.s.at(i, j) * u[i];
        }
    }
    // u_i = deg_i^{-1/2} => d(deg_i) = -0.5 u_i^3 du_i, and deg_i sums row i
    for i in 0..n {
        let ddeg = -0.5 * u[i] * u[i] * u[i] * du[i];
        let row = d_s.row_mut(i);
        for v in row.iter_mut() {
            *v += ddeg;
        }
    }

    // kernel: off-diagonal entries of H are the scattered distances; the
    // diagonal is structurally zero so its adjoint is discarded
    let denom = 2.0 * cache.sigma_used * cache.sigma_used;
    let d_dist: Vec<f64> = pair_idx
        .pairs()
        .iter()
        .zip(cache.dist.iter())
        .map(|(&(i, j), &dist)| {
            kernel_grad(
                d_s.at(i, j),
                cache.s.at(i, j),
                dist,
                denom,
                cache.squared_kernel,
            ) + kernel_grad(
                d_s.at(j, i),
                cache.s.at(j, i),
                dist,
                denom,
                cache.squared_kernel,
            )
        })
        .collect();

    // dist = sqrt(rowsum(G (.) F) + eps)
    let c = pair_idx.len();
    let mut d_g = DenseMatrix::zeros(c, d);
    let mut d_f = DenseMatrix::zeros(c, d);
    for (r, (&dd, &dist)) in d_dist.iter().zip(cache.dist.iter()).enumerate() {
        let ds = 0.5 * dd / dist;
        let fr = cache.f.row(r);
        let gr = cache.g.row(r);
        for (o, &fv) in d_g.row_mut(r).iter_mut().zip(fr.iter()) {
            *o = ds * fv;
        }
        for (o, &gv) in d_f.row_mut(r).iter_mut().zip(gr.iter()) {
            *o = ds * gv;
        }
    }
    // G = F M: dF += dG M^T ; dM = F^T dG
    let dg_mt = d_g.matmul_transpose_b(&cache.metric)?;
    d_f.axpy(1.0, &dg_mt)?;
    let d_m = cache.f.matmul_transpose_a(&d_g)?;

    // metric normalization: M = M_raw / M_raw[pos] with the argmax position
    // fixed; the divisor's value is differentiated (quotient rule)
    let d_m_raw = if cache.degenerate {
        d_m
    } else {
        let mut dmr = d_m.scale(1.0 / cache.metric_max);
        let mut pulled = 0.0;
        for (dv, mv) in d_m.data().iter().zip(cache.metric.data().iter()) {
            pulled += dv * mv;
        }
        let (pi, pj) = cache.metric_max_position;
        dmr.add_at(pi, pj, -pulled / cache.metric_max);
        dmr
    };
    // M_raw = Q Q^T: dQ = (dM_raw + dM_raw^T) Q
    let sym = d_m_raw.add(&d_m_raw.transpose())?;
    let d_q = sym.matmul(q)?;

    // F rows are x_i - x_j
    let mut d_x = DenseMatrix::zeros(n, d);
    for (r, &(i, j)) in pair_idx.pairs().iter().enumerate() {
        let dfr = d_f.row(r);
        {
            let xi = d_x.row_mut(i);
            for k in 0..d {
                xi[k] += dfr[k];
            }
        }
        let xj = d_x.row_mut(j);
        for k in 0..d {
            xj[k] -= dfr[k];
        }
    }

    Ok(ViewBackward { d_q, d_x, d_l_in })
}

#[inline]
fn kernel_grad(d_s: f64, s: f64, dist: f64, denom: f64, squared: bool) -> f64 {
    if squared {
        d_s * s * (-2.0 * dist / denom)
    } else {
        d_s * s * (-1.0 / denom)
    }
}
