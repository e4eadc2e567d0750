//! Deterministic synthetic dataset generator.
//!
//! Produces small two-class TU-format datasets where both structure and
//! vertex labels carry class signal: class 0 graphs are sparse with labels
//! drawn mostly from {0, 1}, class 1 graphs are dense with labels mostly
//! from {1, 2}. Used by the test suites for end-to-end runs that do not
//! depend on external benchmark downloads, and handy for demo runs.

use crate::rng::SeededRng;
use crate::tu::{RawDataset, RawGraph};

pub fn two_class_dataset(num_graphs: usize, seed: u64) -> RawDataset {
    let mut rng = SeededRng::new(seed);
    let mut graphs = Vec::with_capacity(num_graphs);
    let mut labels = Vec::with_capacity(num_graphs);
    for gi in 0..num_graphs {
        let class = gi % 2;
        let n = 6 + rng.below(6);
        let p_edge = if class == 0 { 0.2 } else { 0.55 };
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.bernoulli(p_edge) {
                    edges.push((i, j));
                }
            }
        }
        // keep every graph connected enough to be interesting: chain fallback
        for i in 0..n - 1 {
            if !edges.contains(&(i, i + 1)) && rng.bernoulli(0.5) {
                edges.push((i, i + 1));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let node_labels: Vec<i64> = (0..n)
            .map(|_| {
                let r = rng.uniform();
                if class == 0 {
                    if r < 0.75 {
                        0
                    } else {
                        1
                    }
                } else if r < 0.75 {
                    2
                } else {
                    1
                }
            })
            .collect();
        graphs.push(RawGraph {
            n,
            edges,
            node_labels: Some(node_labels),
            node_attrs: None,
            raw_label: class as i64 + 1,
        });
        labels.push(class);
    }
    RawDataset {
        name: "synthetic".into(),
        graphs,
        labels,
        num_classes: 2,
        has_node_labels: true,
        attr_dim: None,
    }
}
