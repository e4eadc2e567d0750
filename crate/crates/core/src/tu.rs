//! TU-Dortmund benchmark dataset ingestion.
//!
//! The on-disk format is a family of plain-text files sharing a prefix:
//!
//! * `<name>_A.txt` - edge list, lines `i, j` with 1-indexed global vertex ids
//! * `<name>_graph_indicator.txt` - graph id (1-indexed) per vertex line
//! * `<name>_graph_labels.txt` - one integer per graph
//! * `<name>_node_labels.txt` - one integer per vertex (optional)
//! * `<name>_node_attributes.txt` - comma-separated reals per vertex (optional)
//!
//! Fields split on commas with optional surrounding whitespace; blank lines
//! are ignored. Edge lists ship both directions; we symmetrize and dedupe,
//! and report edge counts once per undirected pair.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::rng::SeededRng;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One graph as parsed, before feature encoding.
#[derive(Clone, Debug)]
pub struct RawGraph {
    pub n: usize,
    /// Undirected edges, deduplicated, 0-based local vertex ids, i < j.
    pub edges: Vec<(usize, usize)>,
    pub node_labels: Option<Vec<i64>>,
    pub node_attrs: Option<Vec<Vec<f64>>>,
    pub raw_label: i64,
}

impl RawGraph {
    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == v || b == v)
            .count()
    }

    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }
}

/// A parsed dataset with labels remapped to a contiguous 0-based range.
#[derive(Clone, Debug)]
pub struct RawDataset {
    pub name: String,
    pub graphs: Vec<RawGraph>,
    /// Remapped class label per graph.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub has_node_labels: bool,
    pub attr_dim: Option<usize>,
}

/// Summary statistics in the layout of the usual benchmark tables.
#[derive(Clone, Debug)]
pub struct DatasetStats {
    pub graphs: usize,
    pub classes: usize,
    pub mean_vertices: f64,
    pub mean_edges: f64,
    pub has_node_labels: bool,
    pub attr_dim: Option<usize>,
}

impl RawDataset {
    pub fn stats(&self) -> DatasetStats {
        let g = self.graphs.len() as f64;
        DatasetStats {
            graphs: self.graphs.len(),
            classes: self.num_classes,
            mean_vertices: self.graphs.iter().map(|gr| gr.n as f64).sum::<f64>() / g,
            mean_edges: self
                .graphs
                .iter()
                .map(|gr| gr.edges.len() as f64)
                .sum::<f64>()
                / g,
            has_node_labels: self.has_node_labels,
            attr_dim: self.attr_dim,
        }
    }

    /// Restrict to a subset of graphs (used for smoke-scale runs).
    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        let graphs: Vec<RawGraph> = indices.iter().map(|&i| self.graphs[i].clone()).collect();
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        RawDataset {
            name: self.name.clone(),
            graphs,
            labels,
            num_classes: self.num_classes,
            has_node_labels: self.has_node_labels,
            attr_dim: self.attr_dim,
        }
    }
}

/// Feature encoding applied to a raw dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureEncoding {
    LabelOnehot,
    DegreeOnehot,
    Continuous,
}

impl fmt::Display for FeatureEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureEncoding::LabelOnehot => "label-onehot",
            FeatureEncoding::DegreeOnehot => "degree-onehot",
            FeatureEncoding::Continuous => "continuous",
        };
        write!(f, "{s}")
    }
}

/// Encoded dataset ready for the model.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub encoding: FeatureEncoding,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label()).collect()
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let content = fs::read_to_string(path).map_err(|e| Error::Io {
        file: path.display().to_string(),
        source: e,
    })?;
    Ok(content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(|f| f.trim()).collect()
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Canonical directory names for the common benchmark aliases.
fn dataset_aliases(name: &str) -> Vec<String> {
    let mut out = vec![name.to_string()];
    let underscored = name.replace('-', "_");
    if underscored != name {
        out.push(underscored);
    }
    match name.to_ascii_uppercase().as_str() {
        "IMDB-B" | "IMDB_B" => out.push("IMDB-BINARY".to_string()),
        "IMDB-M" | "IMDB_M" => out.push("IMDB-MULTI".to_string()),
        "PTC-MR" => out.push("PTC_MR".to_string()),
        _ => {}
    }
    out
}

/// Locate `<dir>/<name>_A.txt` under `root`, trying `root/<alias>/` then
/// `root/` itself for each known alias of `name`.
pub fn resolve_dataset(root: &Path, name: &str) -> Result<(PathBuf, String)> {
    for alias in dataset_aliases(name) {
        let sub = root.join(&alias);
        if sub.join(format!("{alias}_A.txt")).exists() {
            return Ok((sub, alias));
        }
        if root.join(format!("{alias}_A.txt")).exists() {
            return Ok((root.to_path_buf(), alias));
        }
    }
    Err(Error::Io {
        file: root
            .join(name)
            .join(format!("{name}_A.txt"))
            .display()
            .to_string(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset files not found"),
    })
}

/// Parse a TU dataset from `root_dir`.
pub fn load_tu_dataset(root_dir: &Path, name: &str) -> Result<RawDataset> {
    let (dir, canonical) = resolve_dataset(root_dir, name)?;
    let file = |suffix: &str| dir.join(format!("{canonical}_{suffix}.txt"));

    // graph_indicator: vertex -> graph id
    let indicator_path = file("graph_indicator");
    let mut graph_of_vertex: Vec<usize> = Vec::new();
    for (lineno, line) in read_lines(&indicator_path)? {
        let fields = split_fields(&line);
        if fields.len() != 1 {
            return Err(parse_err(&indicator_path, lineno, "expected one graph id"));
        }
        let gid: usize = fields[0].parse().map_err(|_| {
            parse_err(
                &indicator_path,
                lineno,
                format!("bad graph id '{}'", fields[0]),
            )
        })?;
        if gid == 0 {
            return Err(parse_err(
                &indicator_path,
                lineno,
                "graph ids are 1-indexed",
            ));
        }
        graph_of_vertex.push(gid - 1);
    }
    let total_vertices = graph_of_vertex.len();
    let num_graphs = graph_of_vertex.iter().copied().max().map_or(0, |m| m + 1);

    // Vertices of a graph must be contiguous in the global numbering; record
    // each graph's offset and size.
    let mut sizes = vec![0usize; num_graphs];
    for &g in &graph_of_vertex {
        sizes[g] += 1;
    }
    let mut offsets = vec![0usize; num_graphs];
    let mut acc = 0;
    for (g, s) in sizes.iter().enumerate() {
        offsets[g] = acc;
        acc += s;
    }
    for (v, &g) in graph_of_vertex.iter().enumerate() {
        if v < offsets[g] || v >= offsets[g] + sizes[g] {
            return Err(parse_err(
                &indicator_path,
                v + 1,
                format!("vertices of graph {} are not contiguous", g + 1),
            ));
        }
    }

    // graph labels
    let labels_path = file("graph_labels");
    let mut raw_labels: Vec<i64> = Vec::new();
    for (lineno, line) in read_lines(&labels_path)? {
        let fields = split_fields(&line);
        let lab: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(&labels_path, lineno, format!("bad label '{}'", fields[0])))?;
        raw_labels.push(lab);
    }
    if raw_labels.len() != num_graphs {
        return Err(parse_err(
            &labels_path,
            raw_labels.len(),
            format!("{} labels for {} graphs", raw_labels.len(), num_graphs),
        ));
    }
    let distinct: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let class_of = |raw: i64| distinct.iter().position(|&c| c == raw).unwrap();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| class_of(l)).collect();

    // edges
    let edges_path = file("A");
    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (lineno, line) in read_lines(&edges_path)? {
        let fields = split_fields(&line);
        if fields.len() != 2 {
            return Err(parse_err(&edges_path, lineno, "expected 'i, j'"));
        }
        let parse_vertex = |f: &str| -> Result<usize> {
            let v: usize = f
                .parse()
                .map_err(|_| parse_err(&edges_path, lineno, format!("bad vertex id '{f}'")))?;
            if v == 0 || v > total_vertices {
                return Err(parse_err(
                    &edges_path,
                    lineno,
                    format!("vertex id {v} out of range 1..={total_vertices}"),
                ));
            }
            Ok(v - 1)
        };
        let a = parse_vertex(fields[0])?;
        let b = parse_vertex(fields[1])?;
        let ga = graph_of_vertex[a];
        let gb = graph_of_vertex[b];
        if ga != gb {
            return Err(parse_err(
                &edges_path,
                lineno,
                format!("edge crosses graph boundary ({} vs {})", ga + 1, gb + 1),
            ));
        }
        if a == b {
            continue; // self loops carry no information for a simple graph
        }
        let (la, lb) = (a - offsets[ga], b - offsets[ga]);
        edge_sets[ga].insert((la.min(lb), la.max(lb)));
    }

    // optional node labels
    let node_labels_path = file("node_labels");
    let node_labels: Option<Vec<i64>> = if node_labels_path.exists() {
        let mut out = Vec::with_capacity(total_vertices);
        for (lineno, line) in read_lines(&node_labels_path)? {
            let fields = split_fields(&line);
            if fields.len() != 1 {
                return Err(parse_err(
                    &node_labels_path,
                    lineno,
                    "expected one node label",
                ));
            }
            let lab: i64 = fields[0].parse().map_err(|_| {
                parse_err(
                    &node_labels_path,
                    lineno,
                    format!("bad node label '{}'", fields[0]),
                )
            })?;
            out.push(lab);
        }
        if out.len() != total_vertices {
            return Err(parse_err(
                &node_labels_path,
                out.len(),
                format!("{} node labels for {} vertices", out.len(), total_vertices),
            ));
        }
        Some(out)
    } else {
        None
    };

    // optional node attributes
    let attrs_path = file("node_attributes");
    let node_attrs: Option<Vec<Vec<f64>>> = if attrs_path.exists() {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(total_vertices);
        let mut dim: Option<usize> = None;
        for (lineno, line) in read_lines(&attrs_path)? {
            let fields = split_fields(&line);
            let mut row = Vec::with_capacity(fields.len());
            for f in &fields {
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(&attrs_path, lineno, format!("bad attribute '{f}'")))?;
                row.push(v);
            }
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(parse_err(
                        &attrs_path,
                        lineno,
                        format!("attribute dim {} differs from {}", row.len(), d),
                    ));
                }
                _ => {}
            }
            out.push(row);
        }
        if out.len() != total_vertices {
            return Err(parse_err(
                &attrs_path,
                out.len(),
                format!(
                    "{} attribute rows for {} vertices",
                    out.len(),
                    total_vertices
                ),
            ));
        }
        Some(out)
    } else {
        None
    };
    let attr_dim = node_attrs
        .as_ref()
        .map(|a| a.first().map_or(0, |r| r.len()));

    let mut graphs: Vec<RawGraph> = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let start = offsets[g];
        let n = sizes[g];
        graphs.push(RawGraph {
            n,
            edges: edge_sets[g].iter().copied().collect(),
            node_labels: node_labels
                .as_ref()
                .map(|all| all[start..start + n].to_vec()),
            node_attrs: node_attrs
                .as_ref()
                .map(|all| all[start..start + n].to_vec()),
            raw_label: raw_labels[g],
        });
    }

    Ok(RawDataset {
        name: canonical,
        graphs,
        labels,
        num_classes: distinct.len(),
        has_node_labels: node_labels.is_some(),
        attr_dim,
    })
}

/// Write a dataset back out in TU format (both edge directions, 1-indexed).
pub fn write_tu_dataset(dir: &Path, dataset: &RawDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        file: dir.display().to_string(),
        source: e,
    })?;
    let name = &dataset.name;
    let open = |suffix: &str| -> Result<fs::File> {
        let p = dir.join(format!("{name}_{suffix}.txt"));
        fs::File::create(&p).map_err(|e| Error::Io {
            file: p.display().to_string(),
            source: e,
        })
    };
    let io_err = |e: std::io::Error| Error::Io {
        file: dir.display().to_string(),
        source: e,
    };

    let mut f_a = open("A")?;
    let mut f_ind = open("graph_indicator")?;
    let mut f_lab = open("graph_labels")?;
    let mut f_nlab = if dataset.has_node_labels {
        Some(open("node_labels")?)
    } else {
        None
    };
    let mut f_attr = if dataset.attr_dim.is_some() {
        Some(open("node_attributes")?)
    } else {
        None
    };

    let mut offset = 0usize;
    for (g, graph) in dataset.graphs.iter().enumerate() {
        for &(i, j) in &graph.edges {
            writeln!(f_a, "{}, {}", offset + i + 1, offset + j + 1).map_err(io_err)?;
            writeln!(f_a, "{}, {}", offset + j + 1, offset + i + 1).map_err(io_err)?;
        }
        for v in 0..graph.n {
            writeln!(f_ind, "{}", g + 1).map_err(io_err)?;
            if let (Some(f), Some(labels)) = (f_nlab.as_mut(), graph.node_labels.as_ref()) {
                writeln!(f, "{}", labels[v]).map_err(io_err)?;
            }
            if let (Some(f), Some(attrs)) = (f_attr.as_mut(), graph.node_attrs.as_ref()) {
                let row: Vec<String> = attrs[v].iter().map(|x| format!("{x}")).collect();
                writeln!(f, "{}", row.join(", ")).map_err(io_err)?;
            }
        }
        writeln!(f_lab, "{}", graph.raw_label).map_err(io_err)?;
        offset += graph.n;
    }
    Ok(())
}

fn build_graphs(
    raw: &RawDataset,
    features: impl Fn(usize, &RawGraph) -> DenseMatrix,
) -> Result<Vec<Graph>> {
    raw.graphs
        .iter()
        .enumerate()
        .map(|(gi, g)| Graph::new(g.adjacency(), features(gi, g), raw.labels[gi]))
        .collect()
}

/// One-hot of the discrete vertex label; `d` is the number of distinct
/// labels across the whole dataset.
pub fn encode_label_onehot(raw: &RawDataset) -> Result<Dataset> {
    if !raw.has_node_labels {
        return Err(Error::Encoding(format!(
            "dataset {} has no node labels",
            raw.name
        )));
    }
    let mut distinct: BTreeSet<i64> = BTreeSet::new();
    for g in &raw.graphs {
        for &l in g.node_labels.as_ref().unwrap() {
            distinct.insert(l);
        }
    }
    let index_of = |l: i64| distinct.iter().position(|&c| c == l).unwrap();
    let d = distinct.len();
    let graphs = build_graphs(raw, |_, g| {
        let labels = g.node_labels.as_ref().unwrap();
        let mut x = DenseMatrix::zeros(g.n, d);
        for (v, &l) in labels.iter().enumerate() {
            x.set(v, index_of(l), 1.0);
        }
        x
    })?;
    Ok(Dataset {
        name: raw.name.clone(),
        graphs,
        num_classes: raw.num_classes,
        feature_dim: d,
        encoding: FeatureEncoding::LabelOnehot,
    })
}

/// One-hot of the vertex degree clamped to `cap`; `d = cap + 1`.
pub fn encode_degree_onehot(raw: &RawDataset, cap: usize) -> Result<Dataset> {
    if !(1..=200).contains(&cap) {
        return Err(Error::Encoding(format!(
            "degree cap {cap} outside [1, 200]"
        )));
    }
    let d = cap + 1;
    let graphs = build_graphs(raw, |_, g| {
        let mut degrees = vec![0usize; g.n];
        for &(i, j) in &g.edges {
            degrees[i] += 1;
            degrees[j] += 1;
        }
        let mut x = DenseMatrix::zeros(g.n, d);
        for (v, &deg) in degrees.iter().enumerate() {
            x.set(v, deg.min(cap), 1.0);
        }
        x
    })?;
    Ok(Dataset {
        name: raw.name.clone(),
        graphs,
        num_classes: raw.num_classes,
        feature_dim: d,
        encoding: FeatureEncoding::DegreeOnehot,
    })
}

/// Per-dimension standardization `(x - mu_j) / sigma_j` of continuous vertex
/// attributes. Statistics are computed over all vertices of the graphs in
/// `fit_graphs` (every graph when `None`); near-constant dimensions map
/// to zero.
pub fn normalize_continuous_fit(raw: &RawDataset, fit_graphs: Option<&[usize]>) -> Result<Dataset> {
    let dim = raw
        .attr_dim
        .ok_or_else(|| Error::Encoding(format!("dataset {} has no node attributes", raw.name)))?;
    let all: Vec<usize> = (0..raw.graphs.len()).collect();
    let fit = fit_graphs.unwrap_or(&all);

    let mut count = 0usize;
    let mut mean = vec![0.0f64; dim];
    for &gi in fit {
        for row in raw.graphs[gi].node_attrs.as_ref().unwrap() {
            for (m, &v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Encoding("no vertices to fit statistics on".into()));
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; dim];
    for &gi in fit {
        for row in raw.graphs[gi].node_attrs.as_ref().unwrap() {
            for ((s, &v), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|&v| (v / count as f64).sqrt()).collect();

    let graphs = build_graphs(raw, |_, g| {
        let attrs = g.node_attrs.as_ref().unwrap();
        let mut x = DenseMatrix::zeros(g.n, dim);
        for (v, row) in attrs.iter().enumerate() {
            for (j, &val) in row.iter().enumerate() {
                let z = if std[j] < 1e-12 {
                    0.0
                } else {
                    (val - mean[j]) / std[j]
                };
                x.set(v, j, z);
            }
        }
        x
    })?;
    Ok(Dataset {
        name: raw.name.clone(),
        graphs,
        num_classes: raw.num_classes,
        feature_dim: dim,
        encoding: FeatureEncoding::Continuous,
    })
}

/// Whole-dataset standardization (the default preprocessing).
pub fn normalize_continuous(raw: &RawDataset) -> Result<Dataset> {
    normalize_continuous_fit(raw, None)
}

/// Stratified k-fold assignment.
#[derive(Clone, Debug)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deterministic stratified split: fold sizes differ by at most one, and so
/// do per-class counts across folds. Classes are processed in label order;
/// each class's remainder items go to the currently smallest folds.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::Split("fold count must be positive".into()));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::Split(format!(
                "class {c} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
    }

    let mut rng = SeededRng::new(seed);
    let mut assignments = vec![0usize; labels.len()];
    let mut fold_sizes = vec![0usize; k];
    for members in by_class.iter_mut() {
        rng.shuffle(members);
        let base = members.len() / k;
        let remainder = members.len() % k;

        // folds ordered by (current size, index); the first `remainder`
        // receive one extra member of this class
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&f| (fold_sizes[f], f));

        let mut cursor = 0usize;
        for (rank, &fold) in order.iter().enumerate() {
            let take = base + usize::from(rank < remainder);
            for &m in &members[cursor..cursor + take] {
                assignments[m] = fold;
            }
            fold_sizes[fold] += take;
            cursor += take;
        }
    }

    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}
