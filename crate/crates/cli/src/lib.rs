//! Operator-facing command line: dataset inspection, gradient checking,
//! training, evaluation, and cross-validation.
//!
//! Configuration precedence is CLI flag > config file > built-in default.
//! The config file is flat `key = value` with `#` comments; keys mirror the
//! long flag names. Unknown keys are rejected.
//!
//! Exit codes: 0 success, 1 runtime/validation failure, 2 usage/config error.

use clap::{Args, Parser, Subcommand};
use mvgc_core::cheb::LambdaMaxMode;
use mvgc_core::checkpoint::{load_model, save_model};
use mvgc_core::graph::Graph;
use mvgc_core::matrix::DenseMatrix;
use mvgc_core::model::{LaplacianPool, Model, ModelArchitecture};
use mvgc_core::rng::SeededRng;
use mvgc_core::train::{
    cross_validate, encode_dataset, evaluate, finite_difference_check, train, write_cv_report,
    FdReport, TrainConfig,
};
use mvgc_core::tu::{load_tu_dataset, stratified_kfold, FeatureEncoding, RawDataset};
use mvgc_core::view::SigmaMode;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "mvgc",
    about = "Multi-view adaptive graph convolutions for graph classification",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print dataset statistics in benchmark-table format.
    Inspect(CommonOpts),
    /// Validate analytic gradients against central finite differences.
    Gradcheck(GradcheckOpts),
    /// Train on a single stratified split and write a checkpoint.
    Train(TrainOpts),
    /// Evaluate a checkpoint on a stratified split.
    Eval(EvalOpts),
    /// Full k-fold cross-validation with reports.
    Cv(CommonOpts),
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonOpts {
    /// Dataset name (e.g. MUTAG, PTC-MR, ENZYMES, IMDB-B).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding TU-format datasets.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Output directory for reports and checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key = value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Constant SGD learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Chebyshev filter order K.
    #[arg(long)]
    pub k_order: Option<usize>,
    /// Views per block, e.g. 8,6,6.
    #[arg(long)]
    pub views: Option<String>,
    /// Linear output widths per block, e.g. 80,128,256.
    #[arg(long)]
    pub m_schedule: Option<String>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Weight of the view Laplacian in the hybrid combination.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Degree one-hot clamp for label-free datasets.
    #[arg(long)]
    pub degree_cap: Option<usize>,
    /// label | degree | continuous (default: labels when present).
    #[arg(long)]
    pub encoding: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Train folds concurrently; results are identical regardless.
    #[arg(long)]
    pub parallel_folds: Option<usize>,
    /// dominant | mean | max.
    #[arg(long)]
    pub laplacian_pool: Option<String>,
}

#[derive(Args, Debug)]
pub struct GradcheckOpts {
    #[command(flatten)]
    pub common: CommonOpts,
    /// Minimal near-linear configuration (alpha = 0, K = 1, one view).
    #[arg(long)]
    pub toy_linear: bool,
    /// Central-difference step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Maximum accepted relative error.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainOpts {
    #[command(flatten)]
    pub common: CommonOpts,
    /// Which fold serves as the held-out test split.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Args, Debug)]
pub struct EvalOpts {
    #[command(flatten)]
    pub common: CommonOpts,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Which fold serves as the held-out test split.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

/// A failure routed to an exit code.
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

impl CliFailure {
    fn usage(msg: impl Into<String>) -> Self {
        CliFailure {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    fn runtime(msg: impl Into<String>) -> Self {
        CliFailure {
            code: EXIT_RUNTIME,
            message: msg.into(),
        }
    }
}

impl From<mvgc_core::Error> for CliFailure {
    fn from(e: mvgc_core::Error) -> Self {
        CliFailure::runtime(e.to_string())
    }
}

/// Fully resolved run settings.
pub struct Resolved {
    pub config: TrainConfig,
    pub dataset: Option<String>,
    pub data_root: PathBuf,
    pub out: Option<PathBuf>,
}

fn parse_triple(raw: &str, what: &str) -> Result<[usize; 3], CliFailure> {
    let parts: Vec<&str> = raw.split(',').map(|p| p.trim()).collect();
    if parts.len() != 3 {
        return Err(CliFailure::usage(format!(
            "{what} must be three comma-separated integers, got '{raw}'"
        )));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(parts.iter()) {
        *o = p
            .parse()
            .map_err(|_| CliFailure::usage(format!("bad {what} component '{p}'")))?;
    }
    if out.contains(&0) {
        return Err(CliFailure::usage(format!(
            "{what} components must be positive"
        )));
    }
    Ok(out)
}

fn parse_encoding(raw: &str) -> Result<FeatureEncoding, CliFailure> {
    match raw.to_ascii_lowercase().as_str() {
        "label" | "label-onehot" => Ok(FeatureEncoding::LabelOnehot),
        "degree" | "degree-onehot" => Ok(FeatureEncoding::DegreeOnehot),
        "continuous" => Ok(FeatureEncoding::Continuous),
        other => Err(CliFailure::usage(format!(
            "unknown encoding '{other}' (expected label, degree or continuous)"
        ))),
    }
}

fn parse_pool(raw: &str) -> Result<LaplacianPool, CliFailure> {
    match raw.to_ascii_lowercase().as_str() {
        "dominant" => Ok(LaplacianPool::Dominant),
        "mean" => Ok(LaplacianPool::Mean),
        "max" => Ok(LaplacianPool::Max),
        other => Err(CliFailure::usage(format!(
            "unknown laplacian pool '{other}' (expected dominant, mean or max)"
        ))),
    }
}

fn parse_bool(raw: &str, key: &str) -> Result<bool, CliFailure> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CliFailure::usage(format!(
            "bad boolean '{other}' for {key}"
        ))),
    }
}

/// Parse a flat `key = value` config file. Every key corresponds to a long
/// flag (or one of the file-only toggles); unknown keys are rejected.
fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliFailure> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliFailure::usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliFailure::usage(format!(
                "{}:{}: expected 'key = value'",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    const KNOWN: &[&str] = &[
        "dataset",
        "data-root",
        "out",
        "seed",
        "lr",
        "epochs",
        "k-order",
        "views",
        "m-schedule",
        "fc-hidden",
        "dropout",
        "alpha",
        "sigma",
        "degree-cap",
        "encoding",
        "folds",
        "parallel-folds",
        "laplacian-pool",
        "squared-kernel",
        "lambda-max",
        "sigma-mode",
        "per-fold-norm",
    ];
    for key in map.keys() {
        if !KNOWN.iter().any(|k| k == key) {
            return Err(CliFailure::usage(format!(
                "unknown config key '{key}' in {}",
                path.display()
            )));
        }
    }
    Ok(map)
}

macro_rules! file_value {
    ($file:expr, $key:literal, $ty:ty) => {
        match $file.get($key) {
            Some(raw) => Some(raw.parse::<$ty>().map_err(|_| {
                CliFailure::usage(format!("bad value '{raw}' for config key '{}'", $key))
            })?),
            None => None,
        }
    };
}

/// Merge defaults, config file, and CLI flags (highest precedence last).
pub fn resolve(opts: &CommonOpts) -> Result<Resolved, CliFailure> {
    let file = match &opts.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut config = TrainConfig::default();

    if let Some(v) = file_value!(file, "seed", u64) {
        config.seed = v;
    }
    if let Some(v) = file_value!(file, "lr", f64) {
        config.learning_rate = v;
    }
    if let Some(v) = file_value!(file, "epochs", usize) {
        config.epochs = v;
    }
    if let Some(v) = file_value!(file, "k-order", usize) {
        config.k_order = v;
    }
    if let Some(raw) = file.get("views") {
        config.views_per_block = parse_triple(raw, "views")?;
    }
    if let Some(raw) = file.get("m-schedule") {
        config.m_schedule = parse_triple(raw, "m-schedule")?;
    }
    if let Some(v) = file_value!(file, "fc-hidden", usize) {
        config.fc_hidden = v;
    }
    if let Some(v) = file_value!(file, "dropout", f64) {
        config.dropout_rate = v;
    }
    if let Some(v) = file_value!(file, "alpha", f64) {
        config.alpha = v;
    }
    if let Some(v) = file_value!(file, "sigma", f64) {
        config.sigma = v;
    }
    if let Some(v) = file_value!(file, "degree-cap", usize) {
        config.degree_cap = v;
    }
    if let Some(raw) = file.get("encoding") {
        config.encoding = Some(parse_encoding(raw)?);
    }
    if let Some(v) = file_value!(file, "folds", usize) {
        config.folds = v;
    }
    if let Some(v) = file_value!(file, "parallel-folds", usize) {
        config.parallel_folds = v;
    }
    if let Some(raw) = file.get("laplacian-pool") {
        config.laplacian_pool = parse_pool(raw)?;
    }
    if let Some(raw) = file.get("squared-kernel") {
        config.squared_kernel = parse_bool(raw, "squared-kernel")?;
    }
    if let Some(raw) = file.get("lambda-max") {
        config.lambda_max = match raw.to_ascii_lowercase().as_str() {
            "power" => LambdaMaxMode::Power,
            "fixed" => LambdaMaxMode::Fixed,
            other => {
                return Err(CliFailure::usage(format!(
                    "unknown lambda-max mode '{other}' (expected power or fixed)"
                )))
            }
        };
    }
    if let Some(raw) = file.get("sigma-mode") {
        config.sigma_mode = match raw.to_ascii_lowercase().as_str() {
            "fixed" => SigmaMode::Fixed,
            "median" => SigmaMode::Median,
            other => {
                return Err(CliFailure::usage(format!(
                    "unknown sigma-mode '{other}' (expected fixed or median)"
                )))
            }
        };
    }
    if let Some(raw) = file.get("per-fold-norm") {
        config.per_fold_norm = parse_bool(raw, "per-fold-norm")?;
    }

    // CLI overrides
    if let Some(v) = opts.seed {
        config.seed = v;
    }
    if let Some(v) = opts.lr {
        config.learning_rate = v;
    }
    if let Some(v) = opts.epochs {
        config.epochs = v;
    }
    if let Some(v) = opts.k_order {
        config.k_order = v;
    }
    if let Some(raw) = &opts.views {
        config.views_per_block = parse_triple(raw, "views")?;
    }
    if let Some(raw) = &opts.m_schedule {
        config.m_schedule = parse_triple(raw, "m-schedule")?;
    }
    if let Some(v) = opts.dropout {
        config.dropout_rate = v;
    }
    if let Some(v) = opts.alpha {
        config.alpha = v;
    }
    if let Some(v) = opts.sigma {
        config.sigma = v;
    }
    if let Some(v) = opts.degree_cap {
        config.degree_cap = v;
    }
    if let Some(raw) = &opts.encoding {
        config.encoding = Some(parse_encoding(raw)?);
    }
    if let Some(v) = opts.folds {
        config.folds = v;
    }
    if let Some(v) = opts.parallel_folds {
        config.parallel_folds = v;
    }
    if let Some(raw) = &opts.laplacian_pool {
        config.laplacian_pool = parse_pool(raw)?;
    }

    let dataset = opts
        .dataset
        .clone()
        .or_else(|| file.get("dataset").cloned());

    // COLLAB is desk-scaled by default: fewer views, lower degree cap
    if let Some(name) = &dataset {
        if name.to_ascii_uppercase().starts_with("COLLAB") {
            if opts.views.is_none() && !file.contains_key("views") {
                config.views_per_block = [4, 3, 3];
            }
            if opts.degree_cap.is_none() && !file.contains_key("degree-cap") {
                config.degree_cap = 30;
            }
        }
    }

    config
        .validate()
        .map_err(|e| CliFailure::usage(e.to_string()))?;

    let data_root = opts
        .data_root
        .clone()
        .or_else(|| file.get("data-root").map(PathBuf::from))
        .or_else(|| std::env::var_os("MVGC_DATA_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"));
    let out = opts
        .out
        .clone()
        .or_else(|| file.get("out").map(PathBuf::from));
    Ok(Resolved {
        config,
        dataset,
        data_root,
        out,
    })
}

/// Largest COLLAB-style subsample used for smoke runs.
const COLLAB_SMOKE_CAP: usize = 500;

/// Load and prepare a dataset; COLLAB is subsampled to desk scale.
pub fn load_prepared(
    name: &str,
    data_root: &Path,
    config: &TrainConfig,
) -> Result<RawDataset, CliFailure> {
    let raw = match load_tu_dataset(data_root, name) {
        Ok(raw) => raw,
        Err(e @ mvgc_core::Error::Io { .. }) => {
            return Err(CliFailure::usage(format!(
                "dataset '{name}' not found under {}: {e}\n\
                 fetch benchmarks with scripts/fetch_datasets.sh or pass --data-root",
                data_root.display()
            )));
        }
        Err(other) => return Err(other.into()),
    };
    if raw.name.to_ascii_uppercase().starts_with("COLLAB") && raw.graphs.len() > COLLAB_SMOKE_CAP {
        let mut order: Vec<usize> = (0..raw.graphs.len()).collect();
        SeededRng::new(config.seed)
            .derive(0xc011ab)
            .shuffle(&mut order);
        order.truncate(COLLAB_SMOKE_CAP);
        order.sort_unstable();
        return Ok(raw.subset(&order));
    }
    Ok(raw)
}

fn require_dataset(resolved: &Resolved) -> Result<&str, CliFailure> {
    resolved
        .dataset
        .as_deref()
        .ok_or_else(|| CliFailure::usage("missing --dataset"))
}

pub fn cmd_inspect(opts: &CommonOpts) -> Result<String, CliFailure> {
    let resolved = resolve(opts)?;
    let name = require_dataset(&resolved)?;
    let raw = load_prepared(name, &resolved.data_root, &resolved.config)?;
    let stats = raw.stats();
    let attr = match stats.attr_dim {
        Some(d) => d.to_string(),
        None => "-".to_string(),
    };
    Ok(format!(
        "{}: {} graphs, {} classes, mean vertices {:.2}, mean edges {:.2}, \
         node labels: {}, attribute dim: {}",
        raw.name,
        stats.graphs,
        stats.classes,
        stats.mean_vertices,
        stats.mean_edges,
        if stats.has_node_labels { "yes" } else { "no" },
        attr
    ))
}

fn random_graph(rng: &mut SeededRng, n: usize, d: usize, label: usize) -> Graph {
    let mut adj = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.bernoulli(0.45) {
                adj.set(i, j, 1.0);
                adj.set(j, i, 1.0);
            }
        }
    }
    let mut x = DenseMatrix::zeros(n, d);
    for v in x.data_mut().iter_mut() {
        *v = rng.uniform();
    }
    Graph::new(adj, x, label).expect("construction is valid")
}

fn format_fd_report(label: &str, report: &FdReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "gradient check [{label}] step {:.1e}, tolerance {:.1e}",
        report.step, report.tolerance
    );
    for g in &report.groups {
        let status = if g.max_rel_err < report.tolerance {
            "pass"
        } else {
            "FAIL"
        };
        let _ = writeln!(
            out,
            "  {status}  {:<20} coords {:>4}  max rel err {:.3e}",
            g.name, g.coords_checked, g.max_rel_err
        );
    }
    let _ = writeln!(
        out,
        "  overall: {} (max {:.3e})",
        if report.pass() { "PASS" } else { "FAIL" },
        report.max_rel_err
    );
    out
}

pub fn cmd_gradcheck(opts: &GradcheckOpts) -> Result<(String, bool), CliFailure> {
    let resolved = resolve(&opts.common)?;
    let mut output = String::new();
    let mut all_pass = true;

    if opts.toy_linear {
        let step = opts.step.unwrap_or(1e-4);
        let tolerance = opts.tolerance.unwrap_or(1e-6);
        let arch = ModelArchitecture {
            input_dim: 4,
            num_classes: 2,
            cheb_order: 1,
            views_per_block: [1, 1, 1],
            m_schedule: [6, 6, 6],
            fc_hidden: 8,
            dropout_rate: 0.0,
            alpha: 0.0,
            ..ModelArchitecture::default()
        };
        let mut rng = SeededRng::new(resolved.config.seed);
        let model = Model::init(&arch, &mut rng);
        let graph = random_graph(&mut rng, 6, 4, 0);
        let report = finite_difference_check(&model, &graph, step, tolerance)?;
        all_pass &= report.pass();
        output.push_str(&format_fd_report("toy linear", &report));
        return Ok((output, all_pass));
    }

    let step = opts.step.unwrap_or(1e-5);
    let tolerance = opts.tolerance.unwrap_or(1e-4);
    let config = &resolved.config;

    // a real dataset graph when a dataset is configured, otherwise a seeded
    // random graph with a benchmark-like feature width
    let (d, dataset_graph, source) = match &resolved.dataset {
        Some(name) => {
            let raw = load_prepared(name, &resolved.data_root, config)?;
            let dataset = encode_dataset(&raw, config, None)?;
            let g = dataset.graphs[0].clone();
            (dataset.feature_dim, Some(g), name.clone())
        }
        None => (7, None, "random".to_string()),
    };

    let arch = ModelArchitecture {
        dropout_rate: 0.0,
        ..config.architecture(d, 2)
    };
    let mut rng = SeededRng::new(config.seed);
    let model = Model::init(&arch, &mut rng);

    let graph = random_graph(&mut rng, 8, d, 1);
    let report = finite_difference_check(&model, &graph, step, tolerance)?;
    all_pass &= report.pass();
    output.push_str(&format_fd_report("seeded random graph", &report));

    if let Some(g) = dataset_graph {
        let arch = ModelArchitecture {
            dropout_rate: 0.0,
            ..config.architecture(d, 2)
        };
        let model = Model::init(&arch, &mut SeededRng::new(config.seed));
        let graph =
            Graph::new(g.adjacency().clone(), g.features().clone(), 0).map_err(CliFailure::from)?;
        let report = finite_difference_check(&model, &graph, step, tolerance)?;
        all_pass &= report.pass();
        output.push_str(&format_fd_report(&format!("{source} graph #0"), &report));
    }
    Ok((output, all_pass))
}

/// Single-split training record written beside the checkpoint.
#[derive(serde::Serialize)]
struct TrainRunReport {
    dataset: String,
    fold: usize,
    config: TrainConfig,
    report: mvgc_core::train::FoldReport,
}

pub fn cmd_train(opts: &TrainOpts) -> Result<String, CliFailure> {
    let resolved = resolve(&opts.common)?;
    let name = require_dataset(&resolved)?;
    let raw = load_prepared(name, &resolved.data_root, &resolved.config)?;
    let config = &resolved.config;
    let plan = stratified_kfold(&raw.labels, config.folds, config.seed)?;
    if opts.fold >= plan.k {
        return Err(CliFailure::usage(format!(
            "--fold {} out of range for {} folds",
            opts.fold, plan.k
        )));
    }
    let fit = plan.train_indices(opts.fold);
    let fit_ref: Option<&[usize]> = if config.per_fold_norm {
        Some(&fit)
    } else {
        None
    };
    let dataset = encode_dataset(&raw, config, fit_ref)?;
    let (model, report) = train(&dataset, &plan, opts.fold, config)?;

    let out_dir = resolved
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-train", raw.name)));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliFailure::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let ckpt = out_dir.join("model.ckpt");
    save_model(&ckpt, &model)?;
    let run = TrainRunReport {
        dataset: raw.name.clone(),
        fold: opts.fold,
        config: config.clone(),
        report: report.clone(),
    };
    let report_path = out_dir.join("train_report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&run).expect("report serializes"),
    )
    .map_err(|e| CliFailure::runtime(format!("cannot write {}: {e}", report_path.display())))?;

    Ok(format!(
        "{}: fold {} test accuracy {:.6}\ncheckpoint: {}\nreport: {}",
        raw.name,
        opts.fold,
        report.test_accuracy,
        ckpt.display(),
        report_path.display()
    ))
}

pub fn cmd_eval(opts: &EvalOpts) -> Result<String, CliFailure> {
    let resolved = resolve(&opts.common)?;
    let name = require_dataset(&resolved)?;
    let raw = load_prepared(name, &resolved.data_root, &resolved.config)?;
    let config = &resolved.config;
    let model = load_model(&opts.checkpoint)?;

    let plan = stratified_kfold(&raw.labels, config.folds, config.seed)?;
    if opts.fold >= plan.k {
        return Err(CliFailure::usage(format!(
            "--fold {} out of range for {} folds",
            opts.fold, plan.k
        )));
    }
    let fit = plan.train_indices(opts.fold);
    let fit_ref: Option<&[usize]> = if config.per_fold_norm {
        Some(&fit)
    } else {
        None
    };
    let dataset = encode_dataset(&raw, config, fit_ref)?;
    if dataset.feature_dim != model.input_dim() {
        return Err(CliFailure::runtime(format!(
            "checkpoint expects feature dim {}, dataset {} has {}",
            model.input_dim(),
            raw.name,
            dataset.feature_dim
        )));
    }
    let accuracy = evaluate(&model, &dataset, &plan.test_indices(opts.fold))?;
    Ok(format!(
        "{}: fold {} test accuracy {:.6}",
        raw.name, opts.fold, accuracy
    ))
}

pub fn cmd_cv(opts: &CommonOpts) -> Result<String, CliFailure> {
    let resolved = resolve(opts)?;
    let name = require_dataset(&resolved)?;
    let raw = load_prepared(name, &resolved.data_root, &resolved.config)?;
    let outcome = cross_validate(&raw, &resolved.config)?;
    let out_dir = resolved
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-cv", raw.name)));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliFailure::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    write_cv_report(&out_dir, &outcome)?;
    Ok(format!(
        "{}: {:.4} \u{b1} {:.4}\nreport: {}",
        outcome.report.dataset,
        outcome.report.mean_accuracy,
        outcome.report.std_accuracy,
        out_dir.join("report.json").display()
    ))
}

/// Print without dying when stdout is a closed pipe (e.g. `mvgc ... | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

/// Dispatch a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome: Result<String, CliFailure> = match &cli.command {
        Command::Inspect(opts) => cmd_inspect(opts),
        Command::Gradcheck(opts) => match cmd_gradcheck(opts) {
            Ok((output, true)) => Ok(output),
            Ok((output, false)) => {
                emit(output.trim_end());
                eprintln!("gradient check failed");
                return EXIT_RUNTIME;
            }
            Err(e) => Err(e),
        },
        Command::Train(opts) => cmd_train(opts),
        Command::Eval(opts) => cmd_eval(opts),
        Command::Cv(opts) => cmd_cv(opts),
    };
    match outcome {
        Ok(output) => {
            emit(&output);
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
