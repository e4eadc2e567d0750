//! The three-block multi-view network.
//!
//! Each block runs the multi-view spectral convolution, per-view batch
//! normalization, element-wise max pooling across views, a linear map with
//! rectifier and inverted dropout, and forwards the "dominant" hybrid
//! Laplacian (of the view most often selected by the pooling) as the next
//! block's input structure. A mean/max readout over vertices feeds two fully
//! connected layers and a softmax.

use crate::cheb::{
    mvgc_forward_cached, view_pipeline_backward, FrozenViewStats, LambdaMaxMode, ViewPipelineCache,
};
use crate::error::{Error, Result};
use crate::graph::{normalized_laplacian, Graph, LaplacianSet};
use crate::matrix::DenseMatrix;
use crate::rng::SeededRng;
use crate::view::{view_backward, PairIndex, SigmaMode, ViewConfig, ViewParams};
use rayon::prelude::*;

/// Epsilon added to the standard deviation in view batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Probability floor applied before the log in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// How the structure forwarded to the next block is aggregated from the
/// per-view hybrid Laplacians.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplacianPool {
    /// Hybrid Laplacian of the most frequently selected view.
    Dominant,
    /// Mean over views.
    Mean,
    /// Element-wise max over views.
    Max,
}

/// Trainable state of one block.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub views: Vec<ViewParams>,
    /// Filter coefficients, one row of length K per view.
    pub thetas: DenseMatrix,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    /// Linear map, `(K*d) x m`.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub dropout_rate: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub sigma_mode: SigmaMode,
    pub squared_kernel: bool,
}

impl LayerParams {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn input_dim(&self) -> usize {
        self.views[0].q_factor.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn cheb_order(&self) -> usize {
        self.thetas.cols()
    }

    pub fn view_config(&self) -> ViewConfig {
        ViewConfig {
            alpha: self.alpha,
            sigma: self.sigma,
            sigma_mode: self.sigma_mode,
            squared_kernel: self.squared_kernel,
        }
    }
}

/// Hyperparameters needed to build a fresh model.
#[derive(Clone, Debug)]
pub struct ModelArchitecture {
    pub input_dim: usize,
    pub num_classes: usize,
    pub cheb_order: usize,
    pub views_per_block: [usize; 3],
    pub m_schedule: [usize; 3],
    pub fc_hidden: usize,
    pub dropout_rate: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub sigma_mode: SigmaMode,
    pub squared_kernel: bool,
    pub laplacian_pool: LaplacianPool,
    pub lambda_mode: LambdaMaxMode,
}

impl Default for ModelArchitecture {
    fn default() -> Self {
        ModelArchitecture {
            input_dim: 1,
            num_classes: 2,
            cheb_order: 6,
            views_per_block: [8, 6, 6],
            m_schedule: [80, 128, 256],
            fc_hidden: 128,
            dropout_rate: 0.5,
            alpha: 1.0,
            sigma: 1.0,
            sigma_mode: SigmaMode::Fixed,
            squared_kernel: false,
            laplacian_pool: LaplacianPool::Dominant,
            lambda_mode: LambdaMaxMode::Power,
        }
    }
}

/// Full classifier: three blocks, readout, two fully connected layers.
#[derive(Clone, Debug)]
pub struct Model {
    pub blocks: Vec<LayerParams>,
    pub fc1_weight: DenseMatrix,
    pub fc1_bias: Vec<f64>,
    pub fc2_weight: DenseMatrix,
    pub fc2_bias: Vec<f64>,
    pub num_classes: usize,
    pub cheb_order: usize,
    pub laplacian_pool: LaplacianPool,
    pub lambda_mode: LambdaMaxMode,
}

impl Model {
    /// Fresh model. Q factors draw from U(0,1); theta from U(-1/K, 1/K);
    /// BN scalars start at gamma = 1, beta = 0; linear maps use a uniform
    /// fan-in init with zero bias. Draw order is fixed by construction, so
    /// a seed fully determines the parameters.
    pub fn init(arch: &ModelArchitecture, rng: &mut SeededRng) -> Model {
        let k = arch.cheb_order;
        let mut blocks = Vec::with_capacity(3);
        let mut d_in = arch.input_dim;
        for b in 0..3 {
            let n_views = arch.views_per_block[b];
            let m = arch.m_schedule[b];
            let views: Vec<ViewParams> = (0..n_views)
                .map(|v| {
                    let mut q = DenseMatrix::zeros(d_in, d_in);
                    for val in q.data_mut().iter_mut() {
                        *val = rng.uniform();
                    }
                    ViewParams {
                        q_factor: q,
                        view_index: v,
                    }
                })
                .collect();
            let mut thetas = DenseMatrix::zeros(n_views, k);
            let theta_bound = 1.0 / k as f64;
            for val in thetas.data_mut().iter_mut() {
                *val = rng.uniform_range(-theta_bound, theta_bound);
            }
            let weight = uniform_fan_in(rng, k * d_in, m);
            blocks.push(LayerParams {
                views,
                thetas,
                bn_gamma: vec![1.0; n_views],
                bn_beta: vec![0.0; n_views],
                weight,
                bias: vec![0.0; m],
                dropout_rate: arch.dropout_rate,
                alpha: arch.alpha,
                sigma: arch.sigma,
                sigma_mode: arch.sigma_mode,
                squared_kernel: arch.squared_kernel,
            });
            d_in = m;
        }
        let readout_dim = 2 * arch.m_schedule[2];
        let fc1_weight = uniform_fan_in(rng, readout_dim, arch.fc_hidden);
        let fc2_weight = uniform_fan_in(rng, arch.fc_hidden, arch.num_classes);
        Model {
            blocks,
            fc1_weight,
            fc1_bias: vec![0.0; arch.fc_hidden],
            fc2_weight,
            fc2_bias: vec![0.0; arch.num_classes],
            num_classes: arch.num_classes,
            cheb_order: k,
            laplacian_pool: arch.laplacian_pool,
            lambda_mode: arch.lambda_mode,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].input_dim()
    }

    pub fn fc_hidden(&self) -> usize {
        self.fc1_weight.cols()
    }
}

/// Address of one trainable tensor inside the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Q { block: usize, view: usize },
    Theta { block: usize },
    Gamma { block: usize },
    Beta { block: usize },
    Weight { block: usize },
    Bias { block: usize },
    Fc1Weight,
    Fc1Bias,
    Fc2Weight,
    Fc2Bias,
}

impl ParamGroup {
    pub fn name(&self) -> String {
        match self {
            ParamGroup::Q { block, view } => format!("block{block}.view{view}.q"),
            ParamGroup::Theta { block } => format!("block{block}.theta"),
            ParamGroup::Gamma { block } => format!("block{block}.gamma"),
            ParamGroup::Beta { block } => format!("block{block}.beta"),
            ParamGroup::Weight { block } => format!("block{block}.weight"),
            ParamGroup::Bias { block } => format!("block{block}.bias"),
            ParamGroup::Fc1Weight => "fc1.weight".into(),
            ParamGroup::Fc1Bias => "fc1.bias".into(),
            ParamGroup::Fc2Weight => "fc2.weight".into(),
            ParamGroup::Fc2Bias => "fc2.bias".into(),
        }
    }
}

impl Model {
    /// Every trainable group, in a fixed order.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::new();
        for (b, layer) in self.blocks.iter().enumerate() {
            for v in 0..layer.num_views() {
                groups.push(ParamGroup::Q { block: b, view: v });
            }
            groups.push(ParamGroup::Theta { block: b });
            groups.push(ParamGroup::Gamma { block: b });
            groups.push(ParamGroup::Beta { block: b });
            groups.push(ParamGroup::Weight { block: b });
            groups.push(ParamGroup::Bias { block: b });
        }
        groups.extend([
            ParamGroup::Fc1Weight,
            ParamGroup::Fc1Bias,
            ParamGroup::Fc2Weight,
            ParamGroup::Fc2Bias,
        ]);
        groups
    }

    pub fn params(&self, group: &ParamGroup) -> &[f64] {
        match *group {
            ParamGroup::Q { block, view } => self.blocks[block].views[view].q_factor.data(),
            ParamGroup::Theta { block } => self.blocks[block].thetas.data(),
            ParamGroup::Gamma { block } => &self.blocks[block].bn_gamma,
            ParamGroup::Beta { block } => &self.blocks[block].bn_beta,
            ParamGroup::Weight { block } => self.blocks[block].weight.data(),
            ParamGroup::Bias { block } => &self.blocks[block].bias,
            ParamGroup::Fc1Weight => self.fc1_weight.data(),
            ParamGroup::Fc1Bias => &self.fc1_bias,
            ParamGroup::Fc2Weight => self.fc2_weight.data(),
            ParamGroup::Fc2Bias => &self.fc2_bias,
        }
    }

    pub fn params_mut(&mut self, group: &ParamGroup) -> &mut [f64] {
        match *group {
            ParamGroup::Q { block, view } => self.blocks[block].views[view].q_factor.data_mut(),
            ParamGroup::Theta { block } => self.blocks[block].thetas.data_mut(),
            ParamGroup::Gamma { block } => &mut self.blocks[block].bn_gamma,
            ParamGroup::Beta { block } => &mut self.blocks[block].bn_beta,
            ParamGroup::Weight { block } => self.blocks[block].weight.data_mut(),
            ParamGroup::Bias { block } => &mut self.blocks[block].bias,
            ParamGroup::Fc1Weight => self.fc1_weight.data_mut(),
            ParamGroup::Fc1Bias => &mut self.fc1_bias,
            ParamGroup::Fc2Weight => self.fc2_weight.data_mut(),
            ParamGroup::Fc2Bias => &mut self.fc2_bias,
        }
    }
}

fn uniform_fan_in(rng: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let mut w = DenseMatrix::zeros(rows, cols);
    for val in w.data_mut().iter_mut() {
        *val = rng.uniform_range(-bound, bound);
    }
    w
}

/// Element-wise max across views together with the selection record.
#[derive(Clone, Debug)]
pub struct PoolOutcome {
    pub pooled: DenseMatrix,
    /// View index per element (row-major over the pooled shape).
    pub argmax_view: Vec<u32>,
    pub dominant_index: usize,
}

/// Per-view normalization of Eq.-style `gamma (x - mu) / (sigma + eps) + beta`
/// with mu and sigma over all elements of the view's signal.
pub fn view_batch_norm(
    signals: &[DenseMatrix],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<Vec<DenseMatrix>> {
    if signals.is_empty() {
        return Err(Error::domain("view_batch_norm", "no views"));
    }
    let shape = signals[0].shape();
    for (v, s) in signals.iter().enumerate() {
        if s.shape() != shape {
            return Err(Error::shape(
                "view_batch_norm",
                format!("view 0 is {}x{}", shape.0, shape.1),
                format!("view {v} is {}", s.shape_str()),
            ));
        }
    }
    signals
        .iter()
        .enumerate()
        .map(|(v, s)| {
            let (mu, sd) = s.elem_stats()?;
            let denom = sd + eps;
            Ok(s.map(|x| gamma[v] * (x - mu) / denom + beta[v]))
        })
        .collect()
}

/// Element-wise max over views; ties break to the lowest view index, and the
/// dominant index is the most frequent winner (ties to the lowest index).
pub fn view_max_pool(normed: &[DenseMatrix]) -> Result<PoolOutcome> {
    if normed.is_empty() {
        return Err(Error::domain("view_max_pool", "no views"));
    }
    let mut pooled = normed[0].clone();
    let mut argmax = vec![0u32; pooled.data().len()];
    for (v, m) in normed.iter().enumerate().skip(1) {
        if m.shape() != pooled.shape() {
            return Err(Error::shape(
                "view_max_pool",
                pooled.shape_str(),
                m.shape_str(),
            ));
        }
        for (idx, (&cand, best)) in m
            .data()
            .iter()
            .zip(pooled.data_mut().iter_mut())
            .enumerate()
        {
            if cand > *best {
                *best = cand;
                argmax[idx] = v as u32;
            }
        }
    }
    let mut counts = vec![0usize; normed.len()];
    for &v in &argmax {
        counts[v as usize] += 1;
    }
    let dominant_index = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(PoolOutcome {
        pooled,
        argmax_view: argmax,
        dominant_index,
    })
}

/// The hybrid Laplacian of the dominant view.
pub fn dominant_laplacian(outcome: &PoolOutcome, laplacians: &LaplacianSet) -> Result<DenseMatrix> {
    if outcome.dominant_index >= laplacians.len() {
        return Err(Error::Internal(format!(
            "dominant view {} out of range for {} laplacians",
            outcome.dominant_index,
            laplacians.len()
        )));
    }
    Ok(laplacians.get(outcome.dominant_index).clone())
}

/// Forward state of one block kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BlockCache {
    pub views: Vec<ViewPipelineCache>,
    pub bn_stats: Vec<(f64, f64)>,
    pub pool: PoolOutcome,
    /// Element-wise argmax over views of the Laplacian (Max pooling only).
    pub lap_argmax: Option<Vec<u32>>,
    pub pre_act: DenseMatrix,
    pub drop_mask: Option<DenseMatrix>,
    pub x_in: DenseMatrix,
    pub pair_idx: PairIndex,
    pub y: DenseMatrix,
    pub l_next: DenseMatrix,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn block_forward_cached(
    x: &DenseMatrix,
    l_in: &DenseMatrix,
    layer: &LayerParams,
    k: usize,
    lambda_mode: LambdaMaxMode,
    laplacian_pool: LaplacianPool,
    training: bool,
    rng: &mut SeededRng,
    frozen: Option<&[FrozenViewStats]>,
) -> Result<BlockCache> {
    let views = mvgc_forward_cached(x, l_in, layer, k, lambda_mode, frozen)?;

    let mut bn_stats = Vec::with_capacity(views.len());
    let mut normed = Vec::with_capacity(views.len());
    for (v, cache) in views.iter().enumerate() {
        let (mu, sd) = cache.signal.elem_stats()?;
        bn_stats.push((mu, sd));
        let denom = sd + BN_EPS;
        let (g, b) = (layer.bn_gamma[v], layer.bn_beta[v]);
        normed.push(cache.signal.map(|val| g * (val - mu) / denom + b));
    }
    let pool = view_max_pool(&normed)?;

    let (l_next, lap_argmax) = match laplacian_pool {
        LaplacianPool::Dominant => (views[pool.dominant_index].view.l_hybrid.clone(), None),
        LaplacianPool::Mean => {
            let mut acc = views[0].view.l_hybrid.clone();
            for c in views.iter().skip(1) {
                acc.axpy(1.0, &c.view.l_hybrid)?;
            }
            acc.scale_mut(1.0 / views.len() as f64);
            (acc, None)
        }
        LaplacianPool::Max => {
            let mut acc = views[0].view.l_hybrid.clone();
            let mut arg = vec![0u32; acc.data().len()];
            for (v, c) in views.iter().enumerate().skip(1) {
                for (idx, (&cand, best)) in c
                    .view
                    .l_hybrid
                    .data()
                    .iter()
                    .zip(acc.data_mut().iter_mut())
                    .enumerate()
                {
                    if cand > *best {
                        *best = cand;
                        arg[idx] = v as u32;
                    }
                }
            }
            (acc, Some(arg))
        }
    };

    // linear + rectifier
    let mut pre_act = pool.pooled.matmul(&layer.weight)?;
    for i in 0..pre_act.rows() {
        let row = pre_act.row_mut(i);
        for (o, &b) in row.iter_mut().zip(layer.bias.iter()) {
            *o += b;
        }
    }
    let mut y = pre_act.map(|v| v.max(0.0));

    // inverted dropout: scaled at train time, identity at inference
    let drop_mask = if training && layer.dropout_rate > 0.0 {
        let keep = 1.0 - layer.dropout_rate;
        let mut mask = DenseMatrix::zeros(y.rows(), y.cols());
        for m in mask.data_mut().iter_mut() {
            *m = if rng.uniform() < keep {
                1.0 / keep
            } else {
                0.0
            };
        }
        y = y.hadamard(&mask)?;
        Some(mask)
    } else {
        None
    };

    Ok(BlockCache {
        views,
        bn_stats,
        pool,
        lap_argmax,
        pre_act,
        drop_mask,
        x_in: x.clone(),
        pair_idx: PairIndex::new(x.rows())?,
        y,
        l_next,
    })
}

/// One block's forward map: multi-view convolution, BN, view pooling,
/// linear, rectifier, dropout. Returns the output signal and the Laplacian
/// passed to the next block.
#[allow(clippy::too_many_arguments)]
pub fn block_forward(
    x: &DenseMatrix,
    l_in: &DenseMatrix,
    layer: &LayerParams,
    k: usize,
    lambda_mode: LambdaMaxMode,
    laplacian_pool: LaplacianPool,
    training: bool,
    rng: &mut SeededRng,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let cache = block_forward_cached(
        x,
        l_in,
        layer,
        k,
        lambda_mode,
        laplacian_pool,
        training,
        rng,
        None,
    )?;
    Ok((cache.y, cache.l_next))
}

/// Gradients of one block's parameters.
#[derive(Clone, Debug)]
pub struct BlockGrads {
    pub q: Vec<DenseMatrix>,
    pub thetas: DenseMatrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl BlockGrads {
    pub fn zeros_like(layer: &LayerParams) -> BlockGrads {
        BlockGrads {
            q: layer
                .views
                .iter()
                .map(|v| DenseMatrix::zeros(v.q_factor.rows(), v.q_factor.cols()))
                .collect(),
            thetas: DenseMatrix::zeros(layer.thetas.rows(), layer.thetas.cols()),
            gamma: vec![0.0; layer.bn_gamma.len()],
            beta: vec![0.0; layer.bn_beta.len()],
            weight: DenseMatrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Reverse pass through one block.
///
/// `d_y` is the adjoint of the block output; `d_l_next` (when the block's
/// output Laplacian feeds a later block) is the adjoint of that Laplacian.
/// Returns parameter gradients plus the adjoints of the block input signal
/// and input Laplacian.
pub(crate) fn block_backward(
    layer: &LayerParams,
    cache: &BlockCache,
    d_y: &DenseMatrix,
    d_l_next: Option<&DenseMatrix>,
    pool_mode: LaplacianPool,
) -> Result<(BlockGrads, DenseMatrix, DenseMatrix)> {
    let n_views = layer.num_views();
    let mut grads = BlockGrads::zeros_like(layer);

    // dropout then rectifier
    let dropped = match &cache.drop_mask {
        Some(mask) => d_y.hadamard(mask)?,
        None => d_y.clone(),
    };
    let mut d_pre = dropped;
    for (g, &p) in d_pre.data_mut().iter_mut().zip(cache.pre_act.data().iter()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }

    // linear: pre = pooled W + b
    let d_pooled = d_pre.matmul_transpose_b(&layer.weight)?;
    grads.weight = cache.pool.pooled.matmul_transpose_a(&d_pre)?;
    grads.bias = d_pre.col_sums();

    // view pooling routes each element's gradient to the winning view
    let pooled_shape = cache.pool.pooled.shape();
    let mut d_bn: Vec<DenseMatrix> = (0..n_views)
        .map(|_| DenseMatrix::zeros(pooled_shape.0, pooled_shape.1))
        .collect();
    for (idx, (&g, &win)) in d_pooled
        .data()
        .iter()
        .zip(cache.pool.argmax_view.iter())
        .enumerate()
    {
        d_bn[win as usize].data_mut()[idx] = g;
    }

    // Laplacian pooling adjoint: which views' hybrid Laplacians carry the
    // downstream structural gradient
    let mut d_l_extra: Vec<Option<DenseMatrix>> = vec![None; n_views];
    if let Some(dl) = d_l_next {
        match pool_mode {
            LaplacianPool::Dominant => {
                d_l_extra[cache.pool.dominant_index] = Some(dl.clone());
            }
            LaplacianPool::Mean => {
                let share = dl.scale(1.0 / n_views as f64);
                for slot in d_l_extra.iter_mut() {
                    *slot = Some(share.clone());
                }
            }
            LaplacianPool::Max => {
                let arg = cache
                    .lap_argmax
                    .as_ref()
                    .ok_or_else(|| Error::Internal("max pooling lost its argmax record".into()))?;
                for (v, slot) in d_l_extra.iter_mut().enumerate() {
                    let mut m = DenseMatrix::zeros(dl.rows(), dl.cols());
                    let mut any = false;
                    for (idx, (&g, &win)) in dl.data().iter().zip(arg.iter()).enumerate() {
                        if win as usize == v {
                            m.data_mut()[idx] = g;
                            any = true;
                        }
                    }
                    if any {
                        *slot = Some(m);
                    }
                }
            }
        }
    }

    // per-view backward: BN, projection/recurrence, similarity construction
    struct PerView {
        q: DenseMatrix,
        theta: Vec<f64>,
        gamma: f64,
        beta: f64,
        d_x: DenseMatrix,
        d_l_in: DenseMatrix,
    }
    let results: Vec<Result<PerView>> = (0..n_views)
        .into_par_iter()
        .map(|v| {
            let vc = &cache.views[v];
            let z = &vc.signal;
            let (mu, sd) = cache.bn_stats[v];
            let denom = sd + BN_EPS;
            let elems = z.data().len() as f64;
            let gamma = layer.bn_gamma[v];

            // BN adjoint with mu and sigma as functions of the signal
            let d_out = &d_bn[v];
            let mut d_gamma = 0.0;
            let mut d_beta = 0.0;
            let mut sum_dzh = 0.0;
            let mut a = 0.0;
            for (&g, &zv) in d_out.data().iter().zip(z.data().iter()) {
                let centered = zv - mu;
                let zhat = centered / denom;
                d_gamma += g * zhat;
                d_beta += g;
                let dzh = gamma * g;
                sum_dzh += dzh;
                a += dzh * centered;
            }
            let mean_dzh = sum_dzh / elems;
            let third_coef = if sd > 0.0 {
                a / (denom * denom * elems * sd)
            } else {
                0.0
            };
            let mut d_z = DenseMatrix::zeros(z.rows(), z.cols());
            for ((o, &g), &zv) in d_z
                .data_mut()
                .iter_mut()
                .zip(d_out.data().iter())
                .zip(z.data().iter())
            {
                let dzh = gamma * g;
                *o = (dzh - mean_dzh) / denom - (zv - mu) * third_coef;
            }

            // projection and recurrence
            let (d_theta, mut d_x, mut d_l_h) =
                view_pipeline_backward(vc, layer.thetas.row(v), &d_z)?;
            if let Some(extra) = &d_l_extra[v] {
                d_l_h.axpy(1.0, extra)?;
            }

            // similarity construction
            let back = view_backward(
                &cache.x_in,
                &layer.views[v].q_factor,
                &cache.pair_idx,
                &vc.view,
                &d_l_h,
            )?;
            d_x.axpy(1.0, &back.d_x)?;
            Ok(PerView {
                q: back.d_q,
                theta: d_theta,
                gamma: d_gamma,
                beta: d_beta,
                d_x,
                d_l_in: back.d_l_in,
            })
        })
        .collect();

    let n = cache.x_in.rows();
    let mut d_x = DenseMatrix::zeros(n, cache.x_in.cols());
    let mut d_l_in = DenseMatrix::zeros(n, n);
    for (v, res) in results.into_iter().enumerate() {
        let pv = res?;
        grads.q[v] = pv.q;
        grads.thetas.row_mut(v).copy_from_slice(&pv.theta);
        grads.gamma[v] = pv.gamma;
        grads.beta[v] = pv.beta;
        d_x.axpy(1.0, &pv.d_x)?;
        d_l_in.axpy(1.0, &pv.d_l_in)?;
    }
    Ok((grads, d_x, d_l_in))
}

/// Permutation-invariant graph-level vector: per-column means concatenated
/// with per-column maxima.
pub fn readout(y: &DenseMatrix) -> Result<Vec<f64>> {
    if y.rows() == 0 {
        return Err(Error::domain("readout", "empty graph"));
    }
    let (r, _) = readout_cached(y)?;
    Ok(r)
}

fn readout_cached(y: &DenseMatrix) -> Result<(Vec<f64>, Vec<usize>)> {
    if y.rows() == 0 {
        return Err(Error::domain("readout", "empty graph"));
    }
    let n = y.rows();
    let m = y.cols();
    let mut out = vec![0.0; 2 * m];
    let mut argmax = vec![0usize; m];
    for j in 0..m {
        let mut sum = 0.0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let v = y.at(i, j);
            sum += v;
            if v > best {
                best = v;
                argmax[j] = i;
            }
        }
        out[j] = sum / n as f64;
        out[m + j] = best;
    }
    Ok((out, argmax))
}

fn vec_mat(v: &[f64], w: &DenseMatrix) -> Vec<f64> {
    debug_assert_eq!(v.len(), w.rows());
    let mut out = vec![0.0; w.cols()];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i).iter()) {
            *o += vi * wij;
        }
    }
    out
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log(pred[target])` with a probability floor before the log.
pub fn cross_entropy(pred: &[f64], target: usize) -> Result<f64> {
    if target >= pred.len() {
        return Err(Error::domain(
            "cross_entropy",
            format!("target {target} out of range for {} classes", pred.len()),
        ));
    }
    let sum: f64 = pred.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::domain(
            "cross_entropy",
            format!("probabilities sum to {sum}, not 1"),
        ));
    }
    Ok(-pred[target].max(PROB_FLOOR).ln())
}

/// Forward state of the whole classifier.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub blocks: Vec<BlockCache>,
    pub readout_vec: Vec<f64>,
    pub readout_argmax: Vec<usize>,
    pub fc1_pre: Vec<f64>,
    pub h1: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Class probabilities for one graph.
pub fn classify(
    model: &Model,
    graph: &Graph,
    training: bool,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    classify_cached(model, graph, training, rng, None).map(|(p, _)| p)
}

/// Per-block frozen constants captured from a previous forward pass.
pub type FrozenForwardStats = Vec<Vec<FrozenViewStats>>;

pub(crate) fn classify_cached(
    model: &Model,
    graph: &Graph,
    training: bool,
    rng: &mut SeededRng,
    frozen: Option<&FrozenForwardStats>,
) -> Result<(Vec<f64>, ForwardCache)> {
    if graph.feature_dim() != model.input_dim() {
        return Err(Error::shape(
            "classify",
            format!("graph features {}", graph.features().shape_str()),
            format!("model expects d = {}", model.input_dim()),
        ));
    }
    let l_intrinsic = normalized_laplacian(graph.adjacency())?;
    let mut x = graph.features().clone();
    let mut l_in = l_intrinsic;
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for (b, layer) in model.blocks.iter().enumerate() {
        let cache = block_forward_cached(
            &x,
            &l_in,
            layer,
            model.cheb_order,
            model.lambda_mode,
            model.laplacian_pool,
            training,
            rng,
            frozen.map(|f| f[b].as_slice()),
        )?;
        x = cache.y.clone();
        l_in = cache.l_next.clone();
        blocks.push(cache);
    }
    let (readout_vec, readout_argmax) = readout_cached(&x)?;
    let mut fc1_pre = vec_mat(&readout_vec, &model.fc1_weight);
    for (o, &b) in fc1_pre.iter_mut().zip(model.fc1_bias.iter()) {
        *o += b;
    }
    let h1: Vec<f64> = fc1_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut logits = vec_mat(&h1, &model.fc2_weight);
    for (o, &b) in logits.iter_mut().zip(model.fc2_bias.iter()) {
        *o += b;
    }
    let probs = softmax(&logits);
    Ok((
        probs.clone(),
        ForwardCache {
            blocks,
            readout_vec,
            readout_argmax,
            fc1_pre,
            h1,
            logits,
            probs,
        },
    ))
}

/// Head-and-blocks reverse pass from the adjoint of the logits.
/// Returns per-block gradients plus the four head gradients.
#[allow(clippy::type_complexity)]
pub(crate) fn backward_from_logits(
    model: &Model,
    cache: &ForwardCache,
    d_logits: &[f64],
) -> Result<(
    Vec<BlockGrads>,
    DenseMatrix,
    Vec<f64>,
    DenseMatrix,
    Vec<f64>,
)> {
    // fc2
    let mut fc2_w_grad = DenseMatrix::zeros(model.fc2_weight.rows(), model.fc2_weight.cols());
    for (i, &h) in cache.h1.iter().enumerate() {
        let row = fc2_w_grad.row_mut(i);
        for (o, &g) in row.iter_mut().zip(d_logits.iter()) {
            *o = h * g;
        }
    }
    let fc2_b_grad = d_logits.to_vec();
    let d_h1: Vec<f64> = (0..cache.h1.len())
        .map(|i| {
            model
                .fc2_weight
                .row(i)
                .iter()
                .zip(d_logits.iter())
                .map(|(&w, &g)| w * g)
                .sum()
        })
        .collect();

    // fc1 rectifier
    let d_fc1_pre: Vec<f64> = d_h1
        .iter()
        .zip(cache.fc1_pre.iter())
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect();
    let mut fc1_w_grad = DenseMatrix::zeros(model.fc1_weight.rows(), model.fc1_weight.cols());
    for (i, &r) in cache.readout_vec.iter().enumerate() {
        let row = fc1_w_grad.row_mut(i);
        for (o, &g) in row.iter_mut().zip(d_fc1_pre.iter()) {
            *o = r * g;
        }
    }
    let fc1_b_grad = d_fc1_pre.clone();
    let d_readout: Vec<f64> = (0..cache.readout_vec.len())
        .map(|i| {
            model
                .fc1_weight
                .row(i)
                .iter()
                .zip(d_fc1_pre.iter())
                .map(|(&w, &g)| w * g)
                .sum()
        })
        .collect();

    // readout: mean spreads evenly, max routes to the argmax vertex
    let last = cache.blocks.last().expect("model has blocks");
    let n = last.y.rows();
    let m = last.y.cols();
    let mut d_y = DenseMatrix::zeros(n, m);
    for j in 0..m {
        let mean_share = d_readout[j] / n as f64;
        for i in 0..n {
            d_y.add_at(i, j, mean_share);
        }
        d_y.add_at(cache.readout_argmax[j], j, d_readout[m + j]);
    }

    // blocks, last to first; the structural gradient follows the Laplacian
    // actually forwarded between blocks
    let mut block_grads: Vec<Option<BlockGrads>> = (0..model.blocks.len()).map(|_| None).collect();
    let mut d_l_next: Option<DenseMatrix> = None;
    let mut d_signal = d_y;
    for b in (0..model.blocks.len()).rev() {
        let (grads, d_x, d_l_in) = block_backward(
            &model.blocks[b],
            &cache.blocks[b],
            &d_signal,
            d_l_next.as_ref(),
            model.laplacian_pool,
        )?;
        block_grads[b] = Some(grads);
        d_signal = d_x;
        d_l_next = Some(d_l_in);
    }
    // d_l_next of block 0 is the intrinsic Laplacian adjoint: a constant of
    // the input graph, not a parameter; dropped.
    let blocks: Vec<BlockGrads> = block_grads.into_iter().map(|g| g.unwrap()).collect();
    Ok((blocks, fc1_w_grad, fc1_b_grad, fc2_w_grad, fc2_b_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DenseMatrix;

    fn signals(vals: &[&[f64]]) -> Vec<DenseMatrix> {
        vals.iter()
            .map(|v| DenseMatrix::from_vec(2, v.len() / 2, v.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn bn_constant_signal_is_zero() {
        let s = vec![DenseMatrix::filled(3, 4, 7.0)];
        let out = view_batch_norm(&s, &[1.0], &[0.0], BN_EPS).unwrap();
        assert!(out[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bn_gamma_zero_gives_beta() {
        let s = vec![DenseMatrix::filled(2, 2, 3.0)];
        let out = view_batch_norm(&s, &[0.0], &[2.5], BN_EPS).unwrap();
        assert!(out[0].data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn bn_standardizes_random_signal() {
        let mut rng = SeededRng::new(19);
        let mut s = DenseMatrix::zeros(6, 7);
        for v in s.data_mut().iter_mut() {
            *v = rng.uniform_range(-50.0, 50.0);
        }
        let out = view_batch_norm(&[s], &[1.0], &[0.0], BN_EPS).unwrap();
        let (mean, std) = out[0].elem_stats().unwrap();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pool_singleton_and_dominance() {
        let s = signals(&[&[1.0, 2.0, 3.0, 4.0]]);
        let out = view_max_pool(&s).unwrap();
        assert_eq!(out.pooled, s[0]);
        assert_eq!(out.dominant_index, 0);

        let s = signals(&[
            &[0.0, 0.0, 0.0, 0.0],
            &[-1.0, -1.0, -1.0, -1.0],
            &[1.0, 2.0, 3.0, 4.0],
        ]);
        let out = view_max_pool(&s).unwrap();
        assert_eq!(out.pooled, s[2]);
        assert_eq!(out.dominant_index, 2);
        assert!(out.argmax_view.iter().all(|&v| v == 2));
    }

    #[test]
    fn pool_ties_take_lowest_view() {
        let a = DenseMatrix::filled(2, 3, 1.0);
        let out = view_max_pool(&[a.clone(), a.clone()]).unwrap();
        assert!(out.argmax_view.iter().all(|&v| v == 0));
        assert_eq!(out.dominant_index, 0);
        assert_eq!(out.pooled, a);
    }

    #[test]
    fn pool_idempotent_on_duplicates() {
        let mut rng = SeededRng::new(23);
        let mut a = DenseMatrix::zeros(3, 5);
        for v in a.data_mut().iter_mut() {
            *v = rng.uniform();
        }
        let single = view_max_pool(&[a.clone()]).unwrap();
        let dup = view_max_pool(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(single.pooled, dup.pooled);
        assert_eq!(single.dominant_index, dup.dominant_index);
    }

    #[test]
    fn pool_boosted_view_wins() {
        // one view's BN scalars shift it far above the rest: pooling must
        // select the boosted view everywhere
        let mut rng = SeededRng::new(29);
        let mut base = DenseMatrix::zeros(4, 6);
        for v in base.data_mut().iter_mut() {
            *v = rng.uniform_range(-40.0, 40.0);
        }
        let views = vec![base.clone(), base.clone(), base.clone()];
        let normed =
            view_batch_norm(&views, &[1.0, 1.0, 1.0], &[-100.0, 100.0, -100.0], BN_EPS).unwrap();
        let out = view_max_pool(&normed).unwrap();
        assert_eq!(out.dominant_index, 1);
        assert!(out.pooled.max_abs_diff(&normed[1]) < 1e-12);
    }

    #[test]
    fn pool_empty_rejected() {
        assert!(view_max_pool(&[]).is_err());
    }

    #[test]
    fn dominant_laplacian_selection() {
        let l0 = DenseMatrix::identity(2);
        let l1 = DenseMatrix::identity(2).scale(2.0);
        let set = LaplacianSet::new(vec![l0, l1.clone()]).unwrap();
        let outcome = PoolOutcome {
            pooled: DenseMatrix::zeros(2, 2),
            argmax_view: vec![1, 1, 1, 0],
            dominant_index: 1,
        };
        let l = dominant_laplacian(&outcome, &set).unwrap();
        assert!(l.max_abs_diff(&l1) < 1e-15);

        let bad = PoolOutcome {
            pooled: DenseMatrix::zeros(2, 2),
            argmax_view: vec![0; 4],
            dominant_index: 5,
        };
        assert!(dominant_laplacian(&bad, &set).is_err());
    }

    #[test]
    fn readout_cases() {
        let single = DenseMatrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(readout(&single).unwrap(), vec![1.5, -2.0, 1.5, -2.0]);

        let y = DenseMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(readout(&y).unwrap(), vec![1.0, 1.0, 2.0, 2.0]);

        assert!(readout(&DenseMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn softmax_contract() {
        let p = softmax(&[0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
        let p = softmax(&[3.0, 1.0, -2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
        // shift invariance
        let q = softmax(&[103.0, 101.0, 98.0]);
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(
            cross_entropy(&[1.0, 0.0], 0).unwrap(),
            -(1.0f64.max(PROB_FLOOR).ln())
        );
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let uniform6 = vec![1.0 / 6.0; 6];
        assert!((cross_entropy(&uniform6, 3).unwrap() - 6.0f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!(cross_entropy(&[0.9, 0.3], 0).is_err());
    }

    use crate::rng::SeededRng;

    fn tiny_arch(d: usize, q: usize) -> ModelArchitecture {
        ModelArchitecture {
            input_dim: d,
            num_classes: q,
            cheb_order: 3,
            views_per_block: [2, 2, 2],
            m_schedule: [5, 6, 7],
            fc_hidden: 8,
            dropout_rate: 0.0,
            ..ModelArchitecture::default()
        }
    }

    fn random_graph(rng: &mut SeededRng, n: usize, d: usize, label: usize) -> Graph {
        let mut adj = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.bernoulli(0.5) {
                    adj.set(i, j, 1.0);
                    adj.set(j, i, 1.0);
                }
            }
        }
        let mut x = DenseMatrix::zeros(n, d);
        for v in x.data_mut().iter_mut() {
            *v = rng.uniform();
        }
        Graph::new(adj, x, label).unwrap()
    }

    #[test]
    fn classify_zero_head_is_uniform() {
        let mut rng = SeededRng::new(55);
        let arch = tiny_arch(3, 2);
        let mut model = Model::init(&arch, &mut rng);
        model.fc2_weight = DenseMatrix::zeros(model.fc2_weight.rows(), model.fc2_weight.cols());
        model.fc2_bias = vec![0.0; 2];
        let g = random_graph(&mut rng, 5, 3, 0);
        let p = classify(&model, &g, false, &mut rng.derive(1)).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classify_probabilities_sum_to_one() {
        let mut rng = SeededRng::new(56);
        let arch = tiny_arch(4, 3);
        let model = Model::init(&arch, &mut rng);
        for trial in 0..3 {
            let g = random_graph(&mut rng, 4 + trial, 4, 0);
            let p = classify(&model, &g, false, &mut rng.derive(trial as u64)).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn classify_rejects_dim_mismatch() {
        let mut rng = SeededRng::new(57);
        let model = Model::init(&tiny_arch(3, 2), &mut rng);
        let g = random_graph(&mut rng, 4, 5, 0);
        assert!(classify(&model, &g, false, &mut rng.derive(0)).is_err());
    }

    #[test]
    fn classify_rejects_single_vertex() {
        let mut rng = SeededRng::new(58);
        let model = Model::init(&tiny_arch(3, 2), &mut rng);
        let g = Graph::new(DenseMatrix::zeros(1, 1), DenseMatrix::zeros(1, 3), 0).unwrap();
        assert!(classify(&model, &g, false, &mut rng.derive(0)).is_err());
    }

    #[test]
    fn block_forward_deterministic_without_dropout() {
        let mut rng = SeededRng::new(59);
        let model = Model::init(&tiny_arch(3, 2), &mut rng);
        let g = random_graph(&mut rng, 6, 3, 0);
        let l = normalized_laplacian(g.adjacency()).unwrap();
        let run = |tag: u64| {
            block_forward(
                g.features(),
                &l,
                &model.blocks[0],
                model.cheb_order,
                model.lambda_mode,
                model.laplacian_pool,
                true,
                &mut SeededRng::new(tag),
            )
            .unwrap()
        };
        let (y1, l1) = run(1);
        let (y2, l2) = run(999); // dropout rate 0: rng must not matter
        assert!(y1.max_abs_diff(&y2) < 1e-15);
        assert!(l1.max_abs_diff(&l2) < 1e-15);
    }

    #[test]
    fn block_forward_zero_linear_gives_zero() {
        let mut rng = SeededRng::new(60);
        let mut model = Model::init(&tiny_arch(3, 2), &mut rng);
        let layer = &mut model.blocks[0];
        layer.weight = DenseMatrix::zeros(layer.weight.rows(), layer.weight.cols());
        layer.bias = vec![0.0; layer.bias.len()];
        let g = random_graph(&mut rng, 5, 3, 0);
        let l = normalized_laplacian(g.adjacency()).unwrap();
        let (y, _) = block_forward(
            g.features(),
            &l,
            &model.blocks[0],
            model.cheb_order,
            model.lambda_mode,
            model.laplacian_pool,
            false,
            &mut rng.derive(0),
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_shapes_follow_schedule() {
        let mut rng = SeededRng::new(61);
        let arch = ModelArchitecture {
            input_dim: 7,
            num_classes: 2,
            cheb_order: 6,
            views_per_block: [8, 6, 6],
            m_schedule: [80, 128, 256],
            fc_hidden: 128,
            dropout_rate: 0.0,
            ..ModelArchitecture::default()
        };
        let model = Model::init(&arch, &mut rng);
        assert_eq!(model.blocks[0].weight.shape(), (42, 80));
        assert_eq!(model.blocks[0].num_views(), 8);
        assert_eq!(model.blocks[1].weight.shape(), (480, 128));
        assert_eq!(model.fc1_weight.shape(), (512, 128));
        let g = random_graph(&mut rng, 5, 7, 0);
        let l = normalized_laplacian(g.adjacency()).unwrap();
        let (y, _) = block_forward(
            g.features(),
            &l,
            &model.blocks[0],
            6,
            model.lambda_mode,
            model.laplacian_pool,
            false,
            &mut rng.derive(0),
        )
        .unwrap();
        assert_eq!(y.shape(), (5, 80));
    }
}
