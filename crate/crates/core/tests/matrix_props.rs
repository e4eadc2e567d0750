//! Property tests for the dense kernel and the randomness substrate.

use mvgc_core::matrix::DenseMatrix;
use mvgc_core::rng::SeededRng;
use proptest::prelude::*;

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |data| DenseMatrix::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(
        a in matrix_strategy(4, 3),
        b in matrix_strategy(3, 5),
        c in matrix_strategy(5, 2),
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(left.max_abs_diff(&right) / scale < 1e-9);
    }

    #[test]
    fn hadamard_commutes_exactly(a in matrix_strategy(5, 4), b in matrix_strategy(5, 4)) {
        prop_assert_eq!(a.hadamard(&b).unwrap(), b.hadamard(&a).unwrap());
    }

    #[test]
    fn transpose_is_involution(a in matrix_strategy(6, 3)) {
        prop_assert_eq!(a.transpose().transpose(), a);
    }
}

#[test]
fn diag_hadamard_identity_holds_broadly() {
    // diag(A B^T) == (A (.) B) 1_d for 100 random shapes with c, d <= 10
    let mut rng = SeededRng::new(2024);
    for _ in 0..100 {
        let c = 1 + rng.below(10);
        let d = 1 + rng.below(10);
        let mut a = DenseMatrix::zeros(c, d);
        let mut b = DenseMatrix::zeros(c, d);
        for v in a.data_mut().iter_mut() {
            *v = rng.uniform() * 4.0 - 2.0;
        }
        for v in b.data_mut().iter_mut() {
            *v = rng.uniform() * 4.0 - 2.0;
        }
        let prod = a.matmul_transpose_b(&b).unwrap();
        let rhs = a.hadamard(&b).unwrap().row_sums();
        for (i, &want) in rhs.iter().enumerate() {
            assert!(
                (prod.at(i, i) - want).abs() < 1e-12,
                "row {i}: {} vs {want}",
                prod.at(i, i)
            );
        }
    }
}

#[test]
fn rng_streams_reproduce() {
    let mut a = SeededRng::new(0xabcdef);
    let mut b = SeededRng::new(0xabcdef);
    for _ in 0..10_000 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    // derived streams too
    let mut da = SeededRng::new(7).derive(3);
    let mut db = SeededRng::new(7).derive(3);
    for _ in 0..10_000 {
        assert_eq!(da.uniform().to_bits(), db.uniform().to_bits());
    }
}
