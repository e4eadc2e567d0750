//! Training engine: exact reverse-mode gradients through the whole pipeline,
//! single-graph SGD, finite-difference validation, evaluation, and k-fold
//! cross-validation with machine-readable reports.

use crate::cheb::FrozenViewStats;
use crate::cheb::LambdaMaxMode;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::model::{
    backward_from_logits, classify, classify_cached, cross_entropy, BlockGrads, FrozenForwardStats,
    LaplacianPool, Model, ModelArchitecture, ParamGroup, PROB_FLOOR,
};
use crate::rng::SeededRng;
use crate::tu::{
    encode_degree_onehot, encode_label_onehot, normalize_continuous_fit, stratified_kfold, Dataset,
    FeatureEncoding, FoldPlan, RawDataset,
};
use crate::view::SigmaMode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Engine-level configuration; the CLI resolves flags and files into this.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub k_order: usize,
    pub views_per_block: [usize; 3],
    pub m_schedule: [usize; 3],
    pub fc_hidden: usize,
    pub dropout_rate: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub degree_cap: usize,
    /// None selects label one-hot when node labels exist, degree one-hot
    /// otherwise.
    pub encoding: Option<FeatureEncoding>,
    pub folds: usize,
    /// Execution detail only: fold results are independent of parallelism,
    /// so this is kept out of the config echo and run id.
    #[serde(skip, default = "default_parallel_folds")]
    pub parallel_folds: usize,
    pub laplacian_pool: LaplacianPool,
    pub lambda_max: LambdaMaxMode,
    pub sigma_mode: SigmaMode,
    pub squared_kernel: bool,
    /// Fit continuous-attribute statistics on the training fold only.
    pub per_fold_norm: bool,
}

fn default_parallel_folds() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            epochs: 80,
            seed: 42,
            k_order: 6,
            views_per_block: [8, 6, 6],
            m_schedule: [80, 128, 256],
            fc_hidden: 128,
            dropout_rate: 0.5,
            alpha: 1.0,
            sigma: 1.0,
            degree_cap: 50,
            encoding: None,
            folds: 10,
            parallel_folds: 1,
            laplacian_pool: LaplacianPool::Dominant,
            lambda_max: LambdaMaxMode::Power,
            sigma_mode: SigmaMode::Fixed,
            squared_kernel: false,
            per_fold_norm: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::domain(
                "TrainConfig",
                "learning rate must be positive",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::domain("TrainConfig", "epochs must be at least 1"));
        }
        if self.k_order == 0 {
            return Err(Error::domain(
                "TrainConfig",
                "Chebyshev order must be at least 1",
            ));
        }
        if self.folds == 0 {
            return Err(Error::domain("TrainConfig", "fold count must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::domain(
                "TrainConfig",
                "dropout rate must be in [0, 1)",
            ));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> ModelArchitecture {
        ModelArchitecture {
            input_dim,
            num_classes,
            cheb_order: self.k_order,
            views_per_block: self.views_per_block,
            m_schedule: self.m_schedule,
            fc_hidden: self.fc_hidden,
            dropout_rate: self.dropout_rate,
            alpha: self.alpha,
            sigma: self.sigma,
            sigma_mode: self.sigma_mode,
            squared_kernel: self.squared_kernel,
            laplacian_pool: self.laplacian_pool,
            lambda_mode: self.lambda_max,
        }
    }

    /// Stable identifier derived from the config content alone.
    pub fn run_id(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Apply the configured (or automatic) feature encoding.
pub fn encode_dataset(
    raw: &RawDataset,
    config: &TrainConfig,
    fit_graphs: Option<&[usize]>,
) -> Result<Dataset> {
    let encoding = config.encoding.unwrap_or(if raw.has_node_labels {
        FeatureEncoding::LabelOnehot
    } else {
        FeatureEncoding::DegreeOnehot
    });
    match encoding {
        FeatureEncoding::LabelOnehot => encode_label_onehot(raw),
        FeatureEncoding::DegreeOnehot => encode_degree_onehot(raw, config.degree_cap),
        FeatureEncoding::Continuous => normalize_continuous_fit(raw, fit_graphs),
    }
}

/// One gradient tensor per trainable parameter, shapes mirroring the model.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub blocks: Vec<BlockGrads>,
    pub fc1_weight: DenseMatrix,
    pub fc1_bias: Vec<f64>,
    pub fc2_weight: DenseMatrix,
    pub fc2_bias: Vec<f64>,
}

impl GradientSet {
    pub fn params(&self, group: &ParamGroup) -> &[f64] {
        match *group {
            ParamGroup::Q { block, view } => self.blocks[block].q[view].data(),
            ParamGroup::Theta { block } => self.blocks[block].thetas.data(),
            ParamGroup::Gamma { block } => &self.blocks[block].gamma,
            ParamGroup::Beta { block } => &self.blocks[block].beta,
            ParamGroup::Weight { block } => self.blocks[block].weight.data(),
            ParamGroup::Bias { block } => &self.blocks[block].bias,
            ParamGroup::Fc1Weight => self.fc1_weight.data(),
            ParamGroup::Fc1Bias => &self.fc1_bias,
            ParamGroup::Fc2Weight => self.fc2_weight.data(),
            ParamGroup::Fc2Bias => &self.fc2_bias,
        }
    }

    fn first_non_finite(&self, model: &Model) -> Option<String> {
        for group in model.param_groups() {
            if self.params(&group).iter().any(|v| !v.is_finite()) {
                return Some(group.name());
            }
        }
        None
    }
}

/// Loss and exact gradients for one graph.
///
/// Differentiates through the head, readout, dropout mask, rectifiers,
/// linear layers, view max pooling, batch normalization (including its
/// statistics), the Chebyshev recurrence, hybrid Laplacian construction,
/// Gaussian kernel, distance scatter, the floored square root, metric
/// normalization, and `Q -> Q Q^T`. The spectral bound from power iteration
/// is a constant.
pub fn compute_gradients(
    model: &Model,
    graph: &Graph,
    rng: &mut SeededRng,
) -> Result<(f64, GradientSet)> {
    let (probs, cache) = classify_cached(model, graph, true, rng, None)?;
    let loss = cross_entropy(&probs, graph.label())?;
    if !loss.is_finite() {
        let site = diagnose_cache(&cache).unwrap_or_else(|| "loss".to_string());
        return Err(Error::NonFinite { site });
    }
    let target = graph.label();
    let d_logits: Vec<f64> = if probs[target] > PROB_FLOOR {
        probs
            .iter()
            .enumerate()
            .map(|(j, &p)| p - f64::from(u8::from(j == target)))
            .collect()
    } else {
        // the floor clamps the loss to a constant here
        vec![0.0; probs.len()]
    };
    let (blocks, fc1_w, fc1_b, fc2_w, fc2_b) = backward_from_logits(model, &cache, &d_logits)?;
    let grads = GradientSet {
        blocks,
        fc1_weight: fc1_w,
        fc1_bias: fc1_b,
        fc2_weight: fc2_w,
        fc2_bias: fc2_b,
    };
    if let Some(site) = grads.first_non_finite(model) {
        return Err(Error::NonFinite {
            site: format!("gradient of {site}"),
        });
    }
    Ok((loss, grads))
}

fn diagnose_cache(cache: &crate::model::ForwardCache) -> Option<String> {
    for (b, block) in cache.blocks.iter().enumerate() {
        for (v, vc) in block.views.iter().enumerate() {
            let site = |what: &str| format!("block{b}.view{v}.{what}");
            if !vc.view.metric.all_finite() {
                return Some(site("metric"));
            }
            if vc.view.dist.iter().any(|d| !d.is_finite()) {
                return Some(site("distances"));
            }
            if !vc.view.s.all_finite() {
                return Some(site("similarity"));
            }
            if !vc.view.l_hybrid.all_finite() {
                return Some(site("hybrid_laplacian"));
            }
            if !vc.signal.all_finite() {
                return Some(site("signal"));
            }
        }
        if !block.pool.pooled.all_finite() {
            return Some(format!("block{b}.pooled"));
        }
        if !block.y.all_finite() {
            return Some(format!("block{b}.output"));
        }
    }
    if cache.readout_vec.iter().any(|v| !v.is_finite()) {
        return Some("readout".into());
    }
    if cache.logits.iter().any(|v| !v.is_finite()) {
        return Some("logits".into());
    }
    if cache.probs.iter().any(|v| !v.is_finite()) {
        return Some("probabilities".into());
    }
    None
}

#[cfg(test)]
fn loss_of(model: &Model, graph: &Graph) -> Result<f64> {
    let mut rng = SeededRng::new(0);
    let probs = classify(model, graph, false, &mut rng)?;
    cross_entropy(&probs, graph.label())
}

fn loss_with_frozen(model: &Model, graph: &Graph, frozen: &FrozenForwardStats) -> Result<f64> {
    let mut rng = SeededRng::new(0);
    let (probs, _) = classify_cached(model, graph, false, &mut rng, Some(frozen))?;
    cross_entropy(&probs, graph.label())
}

/// Finite-difference agreement for one parameter group.
#[derive(Clone, Debug, Serialize)]
pub struct FdGroupReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

/// Finite-difference agreement across all groups.
#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<FdGroupReport>,
    pub max_rel_err: f64,
}

impl FdReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn failing_groups(&self) -> Vec<&FdGroupReport> {
        self.groups
            .iter()
            .filter(|g| g.max_rel_err >= self.tolerance)
            .collect()
    }
}

const FD_SAMPLE_CAP: usize = 500;

/// Relative-error denominator floor. Below this magnitude a gradient entry
/// cannot be resolved relatively by central differences in f64 (the loss
/// evaluations cancel to a few ulps, ~1e-10 of derivative at step 1e-5), so
/// such entries are compared absolutely at `tolerance * FD_DENOM_FLOOR`.
const FD_DENOM_FLOOR: f64 = 1e-5;

fn fd_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_DENOM_FLOOR)
}

/// Compare analytic gradients against central finite differences, group by
/// group. Groups above 500 coordinates are checked on a seeded subsample.
/// Requires dropout off (the perturbed losses must be deterministic).
pub fn finite_difference_check(
    model: &Model,
    graph: &Graph,
    step: f64,
    tolerance: f64,
) -> Result<FdReport> {
    if model.blocks.iter().any(|b| b.dropout_rate > 0.0) {
        return Err(Error::domain(
            "finite_difference_check",
            "dropout must be disabled",
        ));
    }
    let mut rng = SeededRng::new(0);
    let (probs, cache) = classify_cached(model, graph, true, &mut rng, None)?;
    let loss0 = cross_entropy(&probs, graph.label())?;
    if !loss0.is_finite() {
        return Err(Error::NonFinite {
            site: "loss".into(),
        });
    }
    let (_, grads) = compute_gradients(model, graph, &mut SeededRng::new(0))?;

    // The analytic gradient treats the per-view spectral bound (and, in
    // median mode, the bandwidth) as constants; the perturbed losses must
    // hold them at the base forward pass's values to measure the same
    // function. With a fixed bound the freeze is a no-op.
    let frozen: FrozenForwardStats = cache
        .blocks
        .iter()
        .map(|b| {
            b.views
                .iter()
                .map(|v| FrozenViewStats {
                    lambda: v.lambda,
                    sigma: v.view.sigma_used,
                })
                .collect()
        })
        .collect();

    let groups = model.param_groups();
    let reports: Vec<Result<FdGroupReport>> = groups
        .par_iter()
        .enumerate()
        .map(|(gi, group)| {
            let analytic = grads.params(group);
            let len = analytic.len();
            let coords: Vec<usize> = if len > FD_SAMPLE_CAP {
                let mut pick = SeededRng::new(0xfd_5eed ^ gi as u64);
                let mut all: Vec<usize> = (0..len).collect();
                pick.shuffle(&mut all);
                all.truncate(FD_SAMPLE_CAP);
                all
            } else {
                (0..len).collect()
            };
            let mut max_rel = 0.0f64;
            let mut work = model.clone();
            for &c in &coords {
                let original = work.params(group)[c];
                work.params_mut(group)[c] = original + step;
                let plus = loss_with_frozen(&work, graph, &frozen)?;
                work.params_mut(group)[c] = original - step;
                let minus = loss_with_frozen(&work, graph, &frozen)?;
                work.params_mut(group)[c] = original;
                let numeric = (plus - minus) / (2.0 * step);
                max_rel = max_rel.max(fd_rel_err(analytic[c], numeric));
            }
            Ok(FdGroupReport {
                name: group.name(),
                coords_checked: coords.len(),
                max_rel_err: max_rel,
            })
        })
        .collect();
    let groups = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    Ok(FdReport {
        step,
        tolerance,
        groups,
        max_rel_err,
    })
}

/// `p <- p - lr * g` over every trainable parameter.
pub fn sgd_step(model: &mut Model, grads: &GradientSet, lr: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::domain("sgd_step", "learning rate must be positive"));
    }
    if let Some(site) = grads.first_non_finite(model) {
        return Err(Error::NonFinite {
            site: format!("sgd_step input gradient {site}"),
        });
    }
    for group in model.param_groups() {
        let g = grads.params(&group).to_vec();
        for (p, gv) in model.params_mut(&group).iter_mut().zip(g.iter()) {
            *p -= lr * gv;
        }
    }
    Ok(())
}

/// Per-fold training record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub test_accuracy: f64,
    pub train_loss_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

/// Train on every graph outside `fold`; report test accuracy on the fold.
/// One gradient step per graph (single batch), seeded shuffled order each
/// epoch.
pub fn train(
    dataset: &Dataset,
    fold_plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
) -> Result<(Model, FoldReport)> {
    config.validate()?;
    if fold >= fold_plan.k {
        return Err(Error::domain(
            "train",
            format!("fold {fold} out of range for k = {}", fold_plan.k),
        ));
    }
    let started = Instant::now();
    let train_idx = fold_plan.train_indices(fold);
    let test_idx = fold_plan.test_indices(fold);
    if train_idx.is_empty() {
        return Err(Error::domain("train", "empty training split"));
    }

    let root = SeededRng::new(config.seed);
    let mut init_rng = root.derive(0x1000 + fold as u64);
    let mut train_rng = root.derive(0x2000 + fold as u64);
    let arch = config.architecture(dataset.feature_dim, dataset.num_classes);
    let mut model = Model::init(&arch, &mut init_rng);

    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        train_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for &gi in &order {
            let (loss, grads) = compute_gradients(&model, &dataset.graphs[gi], &mut train_rng)?;
            sgd_step(&mut model, &grads, config.learning_rate)?;
            epoch_loss += loss;
        }
        loss_curve.push(epoch_loss / order.len() as f64);

        if !test_idx.is_empty() {
            let acc = evaluate(&model, dataset, &test_idx)?;
            if acc > best_accuracy {
                best_accuracy = acc;
                best_epoch = epoch;
            }
        }
    }

    let test_accuracy = if test_idx.is_empty() {
        f64::NAN
    } else {
        evaluate(&model, dataset, &test_idx)?
    };
    let report = FoldReport {
        fold_index: fold,
        test_accuracy,
        train_loss_curve: loss_curve,
        best_epoch,
        best_accuracy: if best_accuracy.is_finite() {
            best_accuracy
        } else {
            test_accuracy
        },
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Argmax-class accuracy over the indexed graphs, dropout off. Ties in the
/// class probabilities resolve to the lowest class index.
pub fn evaluate(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::domain("evaluate", "empty index set"));
    }
    let mut rng = SeededRng::new(0);
    let mut correct = 0usize;
    for &gi in indices {
        let graph = &dataset.graphs[gi];
        let probs = classify(model, graph, false, &mut rng)?;
        let pred = argmax_lowest(&probs);
        if pred == graph.label() {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Deterministic aggregate of a full cross-validation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvReport {
    pub schema_version: u32,
    pub run_id: String,
    pub dataset: String,
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Non-deterministic run metadata kept out of the main report so repeated
/// runs with one seed produce byte-identical reports.
#[derive(Clone, Debug, Serialize)]
pub struct CvTiming {
    pub total_seconds: f64,
    pub fold_seconds: Vec<f64>,
}

pub struct CvOutcome {
    pub report: CvReport,
    pub timing: CvTiming,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Full k-fold cross-validation: independent models per fold, aggregated
/// mean and standard deviation over fold accuracies. Folds run in parallel
/// when `parallel_folds > 1`; results are identical either way because every
/// fold derives its own random streams.
pub fn cross_validate(raw: &RawDataset, config: &TrainConfig) -> Result<CvOutcome> {
    config.validate()?;
    let started = Instant::now();
    let plan = stratified_kfold(&raw.labels, config.folds, config.seed)?;

    let encoding = config.encoding.unwrap_or(if raw.has_node_labels {
        FeatureEncoding::LabelOnehot
    } else {
        FeatureEncoding::DegreeOnehot
    });
    let per_fold_encoding = config.per_fold_norm && encoding == FeatureEncoding::Continuous;
    let shared_dataset = if per_fold_encoding {
        None
    } else {
        Some(encode_dataset(raw, config, None)?)
    };

    let run_fold = |fold: usize| -> Result<FoldReport> {
        let dataset = match &shared_dataset {
            Some(d) => d.clone(),
            None => encode_dataset(raw, config, Some(&plan.train_indices(fold)))?,
        };
        let (_, report) = train(&dataset, &plan, fold, config)
            .map_err(|e| Error::domain("cross_validate", format!("fold {fold} failed: {e}")))?;
        Ok(report)
    };

    let results: Vec<Result<FoldReport>> = if config.parallel_folds > 1 {
        (0..plan.k).into_par_iter().map(run_fold).collect()
    } else {
        (0..plan.k).map(run_fold).collect()
    };
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;

    let accuracies: Vec<f64> = folds.iter().map(|f| f.test_accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
    let timing = CvTiming {
        total_seconds: started.elapsed().as_secs_f64(),
        fold_seconds: folds.iter().map(|f| f.wall_time_seconds).collect(),
    };
    let report = CvReport {
        schema_version: 1,
        run_id: config.run_id(),
        dataset: raw.name.clone(),
        config: config.clone(),
        folds,
        mean_accuracy,
        std_accuracy,
    };
    Ok(CvOutcome { report, timing })
}

/// Write `report.json` (deterministic), `timing.json`, per-fold files and a
/// plain-text summary under `out_dir`.
pub fn write_cv_report(out_dir: &Path, outcome: &CvOutcome) -> Result<()> {
    let io_err = |file: &Path, e: std::io::Error| Error::Io {
        file: file.display().to_string(),
        source: e,
    };
    let folds_dir = out_dir.join("folds");
    std::fs::create_dir_all(&folds_dir).map_err(|e| io_err(&folds_dir, e))?;

    for fold in &outcome.report.folds {
        let path = folds_dir.join(format!("fold_{}.json", fold.fold_index));
        let body = serde_json::to_string_pretty(fold).expect("fold serializes");
        std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;
    }

    let report_path = out_dir.join("report.json");
    let body = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    std::fs::write(&report_path, body).map_err(|e| io_err(&report_path, e))?;

    let timing_path = out_dir.join("timing.json");
    let body = serde_json::to_string_pretty(&outcome.timing).expect("timing serializes");
    std::fs::write(&timing_path, body).map_err(|e| io_err(&timing_path, e))?;

    let summary_path = out_dir.join("summary.txt");
    std::fs::write(&summary_path, summary_table(&outcome.report))
        .map_err(|e| io_err(&summary_path, e))?;
    Ok(())
}

pub fn summary_table(report: &CvReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "dataset: {}\nrun id: {}\nfolds: {}\n\n",
        report.dataset,
        report.run_id,
        report.folds.len()
    ));
    out.push_str("fold  accuracy  best_epoch  best_accuracy  final_loss\n");
    for f in &report.folds {
        out.push_str(&format!(
            "{:>4}  {:>8.4}  {:>10}  {:>13.4}  {:>10.4}\n",
            f.fold_index,
            f.test_accuracy,
            f.best_epoch,
            f.best_accuracy,
            f.train_loss_curve.last().copied().unwrap_or(f64::NAN),
        ));
    }
    out.push_str(&format!(
        "\n{}: {:.4} \u{b1} {:.4}\n",
        report.dataset, report.mean_accuracy, report.std_accuracy
    ));
    out
}
