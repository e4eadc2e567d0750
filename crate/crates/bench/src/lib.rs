//! Shared helpers for the criterion benchmarks.

use mvgc_core::graph::Graph;
use mvgc_core::matrix::DenseMatrix;
use mvgc_core::rng::SeededRng;

/// Erdos-Renyi-style graph with uniform features, sized like the mid-range
/// benchmark datasets.
pub fn bench_graph(seed: u64, n: usize, d: usize) -> Graph {
    let mut rng = SeededRng::new(seed);
    let mut adj = DenseMatrix::zeros(n, n);
    for i in 1..n {
        let j = rng.below(i);
        adj.set(i, j, 1.0);
        adj.set(j, i, 1.0);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.bernoulli(0.15) {
                adj.set(i, j, 1.0);
                adj.set(j, i, 1.0);
            }
        }
    }
    let mut x = DenseMatrix::zeros(n, d);
    for v in x.data_mut().iter_mut() {
        *v = rng.uniform();
    }
    Graph::new(adj, x, 0).expect("valid construction")
}
