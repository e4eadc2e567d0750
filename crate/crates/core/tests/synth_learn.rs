use mvgc_core::synth::two_class_dataset;
use mvgc_core::train::{cross_validate, TrainConfig};

#[test]
fn synthetic_learning_demo() {
    let raw = two_class_dataset(40, 2025);
    let config = TrainConfig {
        learning_rate: 2e-3,
        epochs: 30,
        seed: 42,
        k_order: 6,
        views_per_block: [4, 3, 3],
        m_schedule: [16, 24, 32],
        fc_hidden: 32,
        dropout_rate: 0.5,
        folds: 5,
        ..TrainConfig::default()
    };
    let outcome = cross_validate(&raw, &config).unwrap();
    println!(
        "synthetic 5-fold: {:.4} +/- {:.4}",
        outcome.report.mean_accuracy, outcome.report.std_accuracy
    );
    for f in &outcome.report.folds {
        println!(
            "  fold {}: acc {:.3}, first loss {:.4}, last loss {:.4}",
            f.fold_index,
            f.test_accuracy,
            f.train_loss_curve[0],
            f.train_loss_curve.last().unwrap()
        );
    }
    assert!(outcome.report.mean_accuracy > 0.8);
}
