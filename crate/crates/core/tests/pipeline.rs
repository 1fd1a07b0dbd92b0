//! End-to-end flow over a synthetic bundle: generate, validate, extract
//! features with both detectors, and train/evaluate them in-process.

use repdetect::detect::{run_detection, LogisticHyperparams, SplitSpec};
use repdetect::lid::{lid_features_from_bundle, LidConfig};
use repdetect::mdre::{mdre_feature_matrix, run_mdre, MdreConfig};
use repdetect::repstore::validate_bundle;
use repdetect::synthgen::{generate_bundle, SynthConfig};

fn pipeline_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_train: 800,
        n_test: 240,
        max_pairs: 120,
        view_count: 2,
        view_dims: 12,
        target_layers: 2,
        ..SynthConfig::hard_margin(seed)
    }
}

/// One-sided Mann-Whitney z-score for "values in `hi` exceed `lo`",
/// normal approximation with tie correction.
fn mann_whitney_z(hi: &[f64], lo: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = hi
        .iter()
        .map(|&v| (v, true))
        .chain(lo.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_hi = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        for row in &all[i..j] {
            if row.1 {
                rank_sum_hi += avg_rank;
            }
        }
        i = j;
    }
    let (n1, n2) = (hi.len() as f64, lo.len() as f64);
    let u = rank_sum_hi - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1) as f64 - tie_term / ((n * (n - 1)) as f64));
    (u - mean) / var.sqrt()
}

#[test]
fn synthetic_bundle_flows_through_both_detectors() {
    let dir = tempfile::TempDir::new().unwrap();
    let config = pipeline_config(101);
    let (manifest, stats) = generate_bundle(&config, dir.path()).unwrap();
    println!(
        "pairs={} skipped_misclassified={} skipped_unflippable={}",
        stats.pairs, stats.skipped_misclassified, stats.skipped_unflippable
    );
    assert!(stats.pairs >= 60, "too few pairs: {}", stats.pairs);

    let report = validate_bundle(&manifest).unwrap();
    assert_eq!(report.pairs, stats.pairs);

    let predictions = manifest.load_predictions().unwrap();

    // Distance features: crafted points sit between the class clouds,
    // far from their predicted class's training cloud, so the
    // adversarial half of every column must stochastically dominate.
    let mdre_config = MdreConfig::new(vec!["view0".into(), "view1".into(), "target".into()]);
    let features = mdre_feature_matrix(&manifest, &predictions, &mdre_config).unwrap();
    assert_eq!(features.rows(), 2 * stats.pairs);
    assert_eq!(features.cols(), 3);
    for col in 0..features.cols() {
        let values: Vec<f64> = (0..features.rows()).map(|r| features.row(r)[col]).collect();
        let (normal, adv) = values.split_at(stats.pairs);
        let z = mann_whitney_z(adv, normal);
        // One-sided p < 0.01 is z > 2.33; this geometry gives far more.
        assert!(z > 2.33, "column {col}: z = {z}");
    }

    let split = SplitSpec::new(7);
    let hyper = LogisticHyperparams::default();
    let (eval, model, _) = run_mdre(&manifest, &predictions, &mdre_config, &split, &hyper).unwrap();
    println!("mdre accuracy {}", eval.accuracy);
    assert!(eval.accuracy >= 0.9, "mdre accuracy {}", eval.accuracy);
    assert_eq!(
        eval.tp + eval.fp + eval.tn + eval.fn_,
        eval_rows(&eval) as u64
    );
    assert_eq!(model.weights.len(), 3);

    // Dimensionality features over the target model's layers.
    let lid_config = LidConfig {
        k: 10,
        batch_size: 200,
        ..LidConfig::new(7, vec![0, 1])
    };
    let lid = lid_features_from_bundle(&manifest, &predictions, "target", &lid_config).unwrap();
    assert_eq!(lid.rows(), 2 * stats.pairs);
    assert_eq!(lid.cols(), 2);
    let (lid_eval, _) = run_detection(&lid, &split, &hyper).unwrap();
    println!("lid accuracy {}", lid_eval.accuracy);
    assert!(
        lid_eval.accuracy >= 0.6,
        "lid accuracy {}",
        lid_eval.accuracy
    );
}

fn eval_rows(eval: &repdetect::EvalReport) -> usize {
    eval.split.as_ref().map(|s| s.n_test).unwrap()
}

#[test]
fn reruns_are_bit_identical_across_thread_counts() {
    let dir = tempfile::TempDir::new().unwrap();
    let config = pipeline_config(303);
    let (manifest, _) = generate_bundle(&config, dir.path()).unwrap();
    let predictions = manifest.load_predictions().unwrap();
    let lid_config = LidConfig {
        k: 12,
        batch_size: 150,
        ..LidConfig::new(11, vec![0, 1])
    };

    let wide = lid_features_from_bundle(&manifest, &predictions, "target", &lid_config).unwrap();
    let narrow = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| lid_features_from_bundle(&manifest, &predictions, "target", &lid_config))
        .unwrap();
    assert_eq!(wide.data(), narrow.data());

    let mdre_config = MdreConfig::new(vec!["view0".into(), "view1".into()]);
    let a = mdre_feature_matrix(&manifest, &predictions, &mdre_config).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| mdre_feature_matrix(&manifest, &predictions, &mdre_config))
        .unwrap();
    assert_eq!(a.data(), b.data());
}
