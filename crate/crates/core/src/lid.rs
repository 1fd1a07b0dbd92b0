//! Local intrinsic dimensionality features.
//!
//! The estimator looks at the k nearest-neighbor distances `r_1 <= ... <=
//! r_k` around a query point and returns
//!
//! ```text
//! lid = -k / sum_i ln(r_i / r_k)
//! ```
//!
//! which is the maximum-likelihood fit of a local power-law expansion rate.
//! Adversarial inputs tend to sit in regions of higher apparent dimension
//! than natural inputs, so one estimate per representation layer makes a
//! useful feature vector for a downstream classifier.
//!
//! Neighborhoods are measured against a random subsample ("batch") of the
//! reference corpus rather than the full corpus. Each (example, layer)
//! pair derives its own RNG from the run seed, so results are independent
//! of scheduling and of which other examples are in the run.

use rayon::prelude::*;

use crate::detect::{run_detection, LogisticHyperparams, SplitSpec};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::knn::knn_indexed;
use crate::matrix::Matrix;
use crate::repstore::{Manifest, Predictions, Role};
use crate::rng::derive_rng;

/// Parameters for LID feature extraction.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LidConfig {
    /// Neighborhood size for the estimator.
    pub k: usize,
    /// Rows sampled from the reference corpus per (example, layer).
    pub batch_size: usize,
    /// Base seed for all per-example sampling streams.
    pub seed: u64,
    /// Layers to extract, in feature-column order.
    pub layers: Vec<u32>,
}

impl LidConfig {
    pub fn new(seed: u64, layers: Vec<u32>) -> Self {
        LidConfig {
            k: 20,
            batch_size: 100,
            seed,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if self.k >= self.batch_size {
            return Err(Error::InvalidArgument(format!(
                "k ({}) must be smaller than the batch size ({})",
                self.k, self.batch_size
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one layer must be selected".into(),
            ));
        }
        Ok(())
    }
}

/// Maximum-likelihood local intrinsic dimensionality from sorted neighbor
/// distances.
///
/// `distances` must be ascending, strictly positive, finite, and at least
/// two long. The estimate is undefined when all distances are equal (the
/// log-ratio sum vanishes); that case is an error, not a NaN.
pub fn lid_mle(distances: &[f64]) -> Result<f64> {
    let k = distances.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 neighbor distances, got {k}"
        )));
    }
    let r_max = distances[k - 1];
    let mut prev = 0.0;
    let mut sum = 0.0;
    for &r in distances {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "neighbor distances must be positive and finite, got {r}"
            )));
        }
        if r < prev {
            return Err(Error::InvalidArgument(
                "neighbor distances must be sorted ascending".into(),
            ));
        }
        prev = r;
        sum += (r / r_max).ln();
    }
    if sum == 0.0 {
        return Err(Error::Undefined(
            "all neighbor distances are equal; the local expansion rate has no \
             finite maximum-likelihood estimate"
                .into(),
        ));
    }
    Ok(-(k as f64) / sum)
}

/// Queries and reference pool for one layer, rows aligned across layers.
#[derive(Debug)]
pub struct LayerData {
    pub layer_id: u32,
    pub queries: Matrix,
    pub pool: Matrix,
}

/// One LID estimate per (example, layer): row `i` of the result holds the
/// estimates for query row `i` across `config.layers`, in order.
///
/// For each (example, layer) pair a fresh RNG is derived from
/// `(config.seed, example_id, layer_id)`, `batch_size` pool rows are drawn
/// without replacement, and the estimator runs on the k nearest of those
/// (zero-distance hits are excluded, so a query may appear in its own
/// pool). Work is parallelized across examples; results do not depend on
/// the schedule.
pub fn lid_feature_matrix(
    layers: &[LayerData],
    example_ids: &[String],
    labels: &[u8],
    config: &LidConfig,
) -> Result<FeatureTable> {
    config.validate()?;
    if layers.len() != config.layers.len() {
        return Err(Error::Misaligned(format!(
            "{} layer data blocks for {} configured layers",
            layers.len(),
            config.layers.len()
        )));
    }
    for (data, &layer_id) in layers.iter().zip(&config.layers) {
        if data.layer_id != layer_id {
            return Err(Error::Misaligned(format!(
                "layer data {} out of order with configured layer {layer_id}",
                data.layer_id
            )));
        }
        if data.queries.dims() != data.pool.dims() {
            return Err(Error::DimensionMismatch {
                left: data.queries.dims(),
                right: data.pool.dims(),
            });
        }
        if data.queries.rows() != example_ids.len() {
            return Err(Error::Misaligned(format!(
                "layer {layer_id} has {} query rows for {} example ids",
                data.queries.rows(),
                example_ids.len()
            )));
        }
        if config.batch_size > data.pool.rows() {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds the layer {layer_id} pool of {} rows",
                config.batch_size,
                data.pool.rows()
            )));
        }
    }
    if labels.len() != example_ids.len() {
        return Err(Error::Misaligned(format!(
            "{} labels for {} example ids",
            labels.len(),
            example_ids.len()
        )));
    }

    let n = example_ids.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = &example_ids[i];
            let mut row = Vec::with_capacity(layers.len());
            for data in layers {
                let feature = lid_for_query(data, i, id, config)
                    .map_err(|e| e.for_example(id, data.layer_id))?;
                row.push(feature);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(n * layers.len());
    for row in rows {
        data.extend(row);
    }
    FeatureTable::new(
        "lid",
        config.layers.iter().map(|l| format!("layer-{l}")).collect(),
        example_ids.to_vec(),
        labels.to_vec(),
        data,
    )
}

fn lid_for_query(
    data: &LayerData,
    row: usize,
    example_id: &str,
    config: &LidConfig,
) -> Result<f64> {
    let mut rng = derive_rng(
        config.seed,
        &[
            b"lid-batch",
            example_id.as_bytes(),
            &data.layer_id.to_le_bytes(),
        ],
    );
    let mut sampled =
        rand::seq::index::sample(&mut rng, data.pool.rows(), config.batch_size).into_vec();
    sampled.sort_unstable();
    let neighbors = knn_indexed(data.queries.row(row), &data.pool, &sampled, config.k, true)?;
    let distances: Vec<f64> = neighbors.into_iter().map(|(_, d)| d).collect();
    lid_mle(&distances)
}

/// Load per-layer query and pool matrices for `model_id` from a bundle.
///
/// Queries are the paired examples in pairing order — all normals first,
/// then all adversarials — and the pool is the train-role matrix. Returns
/// the layer blocks plus the shared example ids and 0/1 labels.
pub fn load_layer_data(
    manifest: &Manifest,
    predictions: &Predictions,
    model_id: &str,
    layers: &[u32],
) -> Result<(Vec<LayerData>, Vec<String>, Vec<u8>)> {
    let normal_rows: Vec<usize> = manifest
        .pairing
        .iter()
        .map(|(n, _)| {
            predictions.normal.index_of(n).ok_or_else(|| {
                Error::Schema(format!("pairing references unknown normal example {n:?}"))
            })
        })
        .collect::<Result<_>>()?;
    let adv_rows: Vec<usize> = manifest
        .pairing
        .iter()
        .map(|(_, a)| {
            predictions.adversarial.index_of(a).ok_or_else(|| {
                Error::Schema(format!(
                    "pairing references unknown adversarial example {a:?}"
                ))
            })
        })
        .collect::<Result<_>>()?;

    let mut example_ids: Vec<String> = manifest.pairing.iter().map(|(n, _)| n.clone()).collect();
    example_ids.extend(manifest.pairing.iter().map(|(_, a)| a.clone()));
    let k = manifest.pairing.len();
    let mut labels = vec![0u8; k];
    labels.extend(std::iter::repeat_n(1, k));

    let mut blocks = Vec::with_capacity(layers.len());
    for &layer_id in layers {
        let pool = manifest
            .load_repset(model_id, layer_id, Role::Train, predictions)?
            .data;
        let normal = manifest
            .load_repset(model_id, layer_id, Role::Normal, predictions)?
            .data;
        let adversarial = manifest
            .load_repset(model_id, layer_id, Role::Adversarial, predictions)?
            .data;
        let queries = normal
            .gather(&normal_rows)?
            .vstack(&adversarial.gather(&adv_rows)?)?;
        blocks.push(LayerData {
            layer_id,
            queries,
            pool,
        });
    }
    Ok((blocks, example_ids, labels))
}

/// Bundle-level convenience: load `model_id`'s layers and extract the LID
/// feature table in one call.
pub fn lid_features_from_bundle(
    manifest: &Manifest,
    predictions: &Predictions,
    model_id: &str,
    config: &LidConfig,
) -> Result<FeatureTable> {
    config.validate()?;
    let (blocks, example_ids, labels) =
        load_layer_data(manifest, predictions, model_id, &config.layers)?;
    lid_feature_matrix(&blocks, &example_ids, &labels, config)
}

/// The default neighborhood-size grid: 10 to 40 in steps of 2, plus the
/// two coarse sizes 100 and 1000.
pub fn default_k_grid() -> Vec<usize> {
    (10..42).step_by(2).chain([100, 1000]).collect()
}

/// Result of evaluating one grid entry.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TuneOutcome {
    Evaluated { test_accuracy: f64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TuneEntry {
    pub k: usize,
    /// Batch size actually used: at least `k + 1` even if the configured
    /// batch is smaller.
    pub batch_size: usize,
    #[serde(flatten)]
    pub outcome: TuneOutcome,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TuneResult {
    pub best_k: usize,
    pub best_accuracy: f64,
    pub entries: Vec<TuneEntry>,
}

/// Sweep neighborhood sizes and pick the one with the best held-out
/// detection accuracy (ties go to the smaller k).
///
/// Every entry reuses the same split seed so the comparison is apples to
/// apples. Grid values needing a batch larger than the pool are marked
/// skipped rather than failing the sweep; if nothing can be evaluated,
/// that is an error.
pub fn tune_k(
    manifest: &Manifest,
    predictions: &Predictions,
    model_id: &str,
    base: &LidConfig,
    grid: &[usize],
    split: &SplitSpec,
    hyper: &LogisticHyperparams,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty neighborhood grid".into()));
    }
    let mut ks: Vec<usize> = grid.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let (blocks, example_ids, labels) =
        load_layer_data(manifest, predictions, model_id, &base.layers)?;
    let pool_rows = blocks.iter().map(|b| b.pool.rows()).min().unwrap_or(0);

    let mut entries = Vec::with_capacity(ks.len());
    let mut best: Option<(usize, f64)> = None;
    for k in ks {
        let batch = base.batch_size.max(k + 1);
        if k < 2 {
            entries.push(TuneEntry {
                k,
                batch_size: batch,
                outcome: TuneOutcome::Skipped {
                    reason: "k must be at least 2".into(),
                },
            });
            continue;
        }
        if batch > pool_rows {
            entries.push(TuneEntry {
                k,
                batch_size: batch,
                outcome: TuneOutcome::Skipped {
                    reason: format!("needs a batch of {batch} but the pool has {pool_rows} rows"),
                },
            });
            continue;
        }
        let config = LidConfig {
            k,
            batch_size: batch,
            seed: base.seed,
            layers: base.layers.clone(),
        };
        let table = lid_feature_matrix(&blocks, &example_ids, &labels, &config)?;
        let (report, _) = run_detection(&table, split, hyper)?;
        if best.is_none_or(|(_, acc)| report.accuracy > acc) {
            best = Some((k, report.accuracy));
        }
        entries.push(TuneEntry {
            k,
            batch_size: batch,
            outcome: TuneOutcome::Evaluated {
                test_accuracy: report.accuracy,
            },
        });
    }

    let (best_k, best_accuracy) = best.ok_or_else(|| {
        Error::InvalidArgument("no grid entry could be evaluated on this bundle".into())
    })?;
    Ok(TuneResult {
        best_k,
        best_accuracy,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    #[test]
    fn two_point_example() {
        // Distances (1, e): the log-ratio sum is -1, so the estimate is 2.
        let lid = lid_mle(&[1.0, E]).unwrap();
        assert!((lid - 2.0).abs() < 1e-12, "got {lid}");
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(matches!(lid_mle(&[1.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            lid_mle(&[2.0, 2.0, 2.0]),
            Err(Error::Undefined(_))
        ));
        assert!(matches!(
            lid_mle(&[0.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            lid_mle(&[-1.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            lid_mle(&[2.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            lid_mle(&[1.0, f64::INFINITY]),
            Err(Error::InvalidArgument(_))
        ));
    }

    proptest! {
        #[test]
        fn estimates_are_positive_and_scale_invariant(
            mut raw in proptest::collection::vec(0.01f64..100.0, 2..30),
            scale in 0.001f64..1000.0,
        ) {
            raw.sort_by(f64::total_cmp);
            prop_assume!(raw[0] < raw[raw.len() - 1]);
            let lid = lid_mle(&raw).unwrap();
            prop_assert!(lid.is_finite() && lid > 0.0);

            let scaled: Vec<f64> = raw.iter().map(|r| r * scale).collect();
            let lid2 = lid_mle(&scaled).unwrap();
            prop_assert!((lid - lid2).abs() <= 1e-6 * lid.abs());
        }
    }

    fn one_query_setup(pool_points: Vec<f32>, k: usize, batch: usize) -> Result<FeatureTable> {
        let rows = pool_points.len();
        let layers = vec![LayerData {
            layer_id: 0,
            queries: Matrix::new(1, 1, vec![0.0]).unwrap(),
            pool: Matrix::new(rows, 1, pool_points).unwrap(),
        }];
        let config = LidConfig {
            k,
            batch_size: batch,
            seed: 1,
            layers: vec![0],
        };
        lid_feature_matrix(&layers, &["q0".into()], &[0], &config)
    }

    #[test]
    fn feature_matrix_reproduces_the_estimator() {
        // Pool at distances (1, e, e) from the query; with k = 2 the
        // nearest distances are (1, e) and the feature must be 2.
        let table = one_query_setup(vec![1.0, E as f32, -(E as f32)], 2, 3).unwrap();
        assert_eq!(table.cols(), 1);
        let feature = table.row(0)[0];
        // The pool is stored in f32, so allow for that rounding.
        assert!((feature - 2.0).abs() < 1e-6, "got {feature}");
    }

    #[test]
    fn undefined_estimates_are_tagged_with_the_example() {
        // All pool points at the same distance -> undefined estimate.
        let err = one_query_setup(vec![1.0, -1.0, 1.0], 2, 3).unwrap_err();
        match err {
            Error::FeatureExtraction {
                example_id,
                layer_id,
                source,
            } => {
                assert_eq!(example_id, "q0");
                assert_eq!(layer_id, 0);
                assert!(matches!(*source, Error::Undefined(_)));
            }
            other => panic!("expected FeatureExtraction, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(LidConfig {
            k: 1,
            batch_size: 10,
            seed: 0,
            layers: vec![0]
        }
        .validate()
        .is_err());
        assert!(LidConfig {
            k: 10,
            batch_size: 10,
            seed: 0,
            layers: vec![0]
        }
        .validate()
        .is_err());
        assert!(LidConfig {
            k: 2,
            batch_size: 10,
            seed: 0,
            layers: vec![]
        }
        .validate()
        .is_err());
        assert!(LidConfig {
            k: 2,
            batch_size: 10,
            seed: 0,
            layers: vec![0]
        }
        .validate()
        .is_ok());
    }

    fn random_setup(seed: u64) -> (Vec<LayerData>, Vec<String>, Vec<u8>) {
        use rand::Rng;
        let mut rng = crate::rng::derive_rng(seed, &[b"lid-test-data"]);
        let (n_pool, n_query, dims) = (60, 8, 3);
        let pool: Vec<f32> = (0..n_pool * dims)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let queries: Vec<f32> = (0..n_query * dims)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let layers = vec![
            LayerData {
                layer_id: 0,
                queries: Matrix::new(n_query, dims, queries.clone()).unwrap(),
                pool: Matrix::new(n_pool, dims, pool.clone()).unwrap(),
            },
            LayerData {
                layer_id: 1,
                queries: Matrix::new(n_query, dims, queries).unwrap(),
                pool: Matrix::new(n_pool, dims, pool).unwrap(),
            },
        ];
        let ids = (0..n_query).map(|i| format!("q{i}")).collect();
        let labels = (0..n_query).map(|i| (i % 2) as u8).collect();
        (layers, ids, labels)
    }

    #[test]
    fn same_seed_same_features_any_thread_count() {
        let (layers, ids, labels) = random_setup(42);
        let config = LidConfig {
            k: 5,
            batch_size: 30,
            seed: 7,
            layers: vec![0, 1],
        };
        let a = lid_feature_matrix(&layers, &ids, &labels, &config).unwrap();
        let b = lid_feature_matrix(&layers, &ids, &labels, &config).unwrap();
        assert_eq!(a.data(), b.data());

        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| lid_feature_matrix(&layers, &ids, &labels, &config).unwrap());
        for (x, y) in a.data().iter().zip(single.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn different_seed_different_samples() {
        let (layers, ids, labels) = random_setup(42);
        let mut config = LidConfig {
            k: 5,
            batch_size: 30,
            seed: 7,
            layers: vec![0, 1],
        };
        let a = lid_feature_matrix(&layers, &ids, &labels, &config).unwrap();
        config.seed = 8;
        let b = lid_feature_matrix(&layers, &ids, &labels, &config).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn batch_larger_than_pool_is_rejected() {
        let (layers, ids, labels) = random_setup(1);
        let config = LidConfig {
            k: 5,
            batch_size: 1000,
            seed: 0,
            layers: vec![0, 1],
        };
        assert!(matches!(
            lid_feature_matrix(&layers, &ids, &labels, &config),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_k_grid();
        assert_eq!(grid.len(), 18);
        assert_eq!(grid[0], 10);
        assert_eq!(grid[15], 40);
        assert_eq!(grid[16], 100);
        assert_eq!(grid[17], 1000);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
}
