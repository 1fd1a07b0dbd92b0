//! Multi-model nearest-distance ensemble features.
//!
//! For each paired example and each selected representation model, the
//! feature is the Euclidean distance from the example's representation to
//! the nearest *train* representation whose predicted label matches the
//! example's own predicted label. Normal inputs sit close to the cluster
//! of their (correct) class; adversarial inputs were pushed across a
//! decision boundary, so under their new predicted label they tend to be
//! far from every training point of that class. One distance per model
//! gives an m-column table for the downstream classifier, and models can
//! disagree — that is the point of ensembling them.

use rayon::prelude::*;

use crate::detect::{run_detection, EvalReport, LogisticHyperparams, LogisticModel, SplitSpec};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::knn::nearest_same_label;
use crate::repstore::{Manifest, Predictions, Role};

/// How to pick the layer used for each model's distance column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    /// The model's highest layer id in the bundle (the usual choice:
    /// final-layer representations).
    LastLayer,
    /// A specific layer id, which must exist for every selected model.
    Fixed(u32),
}

/// Which models contribute distance columns, and from which layer.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MdreConfig {
    /// Feature-column order follows this list.
    pub model_ids: Vec<String>,
    pub layer: LayerSelector,
}

impl MdreConfig {
    pub fn new(model_ids: Vec<String>) -> Self {
        MdreConfig {
            model_ids,
            layer: LayerSelector::LastLayer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_ids.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one model must be selected".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.model_ids {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!(
                    "model {id:?} selected more than once"
                )));
            }
        }
        Ok(())
    }

    fn resolve_layer(&self, manifest: &Manifest, model_id: &str) -> Result<u32> {
        let layers = manifest.layers_of(model_id);
        if layers.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "model {model_id:?} is not in the bundle"
            )));
        }
        match self.layer {
            LayerSelector::LastLayer => Ok(*layers.last().unwrap()),
            LayerSelector::Fixed(l) => {
                if layers.contains(&l) {
                    Ok(l)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "model {model_id:?} has no layer {l} (available: {layers:?})"
                    )))
                }
            }
        }
    }
}

/// Build the distance table: `2k` rows (k normals then k adversarials, in
/// pairing order) by one column per selected model.
///
/// Distances are measured against train representations under *predicted*
/// labels on both sides, so an adversarial example is compared to the
/// class the classifier now believes it belongs to. Columns follow
/// `config.model_ids`; permuting that list permutes columns and nothing
/// else.
pub fn mdre_feature_matrix(
    manifest: &Manifest,
    predictions: &Predictions,
    config: &MdreConfig,
) -> Result<FeatureTable> {
    config.validate()?;
    if manifest.pairing.is_empty() {
        return Err(Error::Schema(
            "bundle has no normal/adversarial pairs; at least one is required".into(),
        ));
    }

    let k = manifest.pairing.len();
    let m = config.model_ids.len();
    // Column-major scratch: one distance vector per model, then interleave.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(m);

    for model_id in &config.model_ids {
        let layer_id = config.resolve_layer(manifest, model_id)?;
        let train = manifest.load_repset(model_id, layer_id, Role::Train, predictions)?;
        let normal = manifest.load_repset(model_id, layer_id, Role::Normal, predictions)?;
        let adversarial =
            manifest.load_repset(model_id, layer_id, Role::Adversarial, predictions)?;
        let train_labels = &predictions.train.predicted;

        let distance_for = |reps: &crate::repstore::RepSet,
                            role: &crate::repstore::RolePredictions,
                            id: &str|
         -> Result<f64> {
            let row = role.index_of(id).ok_or_else(|| {
                Error::Schema(format!("pairing references unknown example {id:?}"))
            })?;
            let label = role.predicted[row];
            let (_, d) = nearest_same_label(reps.data.row(row), &train.data, train_labels, label)
                .map_err(|e| match e {
                    Error::EmptyCandidates { label, .. } => Error::EmptyCandidates {
                        label,
                        context: format!("train pool of model {model_id:?}, layer {layer_id}"),
                    },
                    e => e,
                })
                .map_err(|e| e.for_example(id, layer_id))?;
            Ok(d)
        };

        let normals: Vec<f64> = manifest
            .pairing
            .par_iter()
            .map(|(norm_id, _)| distance_for(&normal, &predictions.normal, norm_id))
            .collect::<Result<_>>()?;
        let advs: Vec<f64> = manifest
            .pairing
            .par_iter()
            .map(|(_, adv_id)| distance_for(&adversarial, &predictions.adversarial, adv_id))
            .collect::<Result<_>>()?;

        let mut column = normals;
        column.extend(advs);
        columns.push(column);
    }

    let mut data = Vec::with_capacity(2 * k * m);
    for row in 0..2 * k {
        for column in &columns {
            data.push(column[row]);
        }
    }

    let mut example_ids: Vec<String> = manifest.pairing.iter().map(|(n, _)| n.clone()).collect();
    example_ids.extend(manifest.pairing.iter().map(|(_, a)| a.clone()));
    let mut labels = vec![0u8; k];
    labels.extend(std::iter::repeat_n(1, k));

    FeatureTable::new("mdre", config.model_ids.clone(), example_ids, labels, data)
}

/// Extract features and run the standard split-train-evaluate harness.
pub fn run_mdre(
    manifest: &Manifest,
    predictions: &Predictions,
    config: &MdreConfig,
    split: &SplitSpec,
    hyper: &LogisticHyperparams,
) -> Result<(EvalReport, LogisticModel, FeatureTable)> {
    let table = mdre_feature_matrix(manifest, predictions, config)?;
    let (report, model) = run_detection(&table, split, hyper)?;
    let report = report.with_context("mdre", manifest.dataset_name.clone(), "");
    Ok((report, model, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repstore::{
        load_manifest, repm, write_predictions, ManifestEntry, PredictionRecord,
    };
    use std::path::Path;
    use tempfile::TempDir;

    /// One-dimensional bundle with hand-checkable distances.
    ///
    /// Train: class 0 at {0.0, 0.2}, class 1 at {10.0, 10.4}.
    /// Normals: n0 = 0.5 (pred 0), n1 = 9.0 (pred 1).
    /// Adversarials: a0 = 5.0 (pred 1, gold 0), a1 = 4.0 (pred 0, gold 1).
    /// Model "wide" doubles every coordinate.
    fn write_bundle(dir: &Path) -> crate::repstore::Manifest {
        let records = vec![
            rec("t0", 0, 0, Role::Train),
            rec("t1", 0, 0, Role::Train),
            rec("t2", 1, 1, Role::Train),
            rec("t3", 1, 1, Role::Train),
            rec("n0", 0, 0, Role::Normal),
            rec("n1", 1, 1, Role::Normal),
            rec("a0", 1, 0, Role::Adversarial),
            rec("a1", 0, 1, Role::Adversarial),
        ];
        write_predictions(&dir.join("predictions.json"), &records).unwrap();

        let train = [0.0f32, 0.2, 10.0, 10.4];
        let normal = [0.5f32, 9.0];
        let adv = [5.0f32, 4.0];

        let mut entries = Vec::new();
        for (model, scale, layer) in [("base", 1.0f32, 0u32), ("wide", 2.0, 3)] {
            for (role, rows, points) in [
                (Role::Train, 4usize, &train[..]),
                (Role::Normal, 2, &normal[..]),
                (Role::Adversarial, 2, &adv[..]),
            ] {
                let scaled: Vec<f32> = points.iter().map(|p| p * scale).collect();
                let file = format!("{model}_L{layer}_{role}.repm");
                let checksum = repm::write_f32(&dir.join(&file), rows, 1, &scaled).unwrap();
                entries.push(ManifestEntry {
                    model_id: model.into(),
                    layer_id: layer,
                    role,
                    file_path: file,
                    rows: rows as u64,
                    dims: 1,
                    checksum,
                });
            }
        }

        let manifest = crate::repstore::Manifest::new(
            "toy",
            2,
            entries,
            "predictions.json",
            vec![("n0".into(), "a0".into()), ("n1".into(), "a1".into())],
            dir,
        );
        manifest.save(&dir.join("manifest.json")).unwrap();
        load_manifest(&dir.join("manifest.json")).unwrap()
    }

    fn rec(id: &str, pred: u32, gold: u32, role: Role) -> PredictionRecord {
        PredictionRecord {
            example_id: id.into(),
            predicted_label: pred,
            gold_label: gold,
            role,
        }
    }

    #[test]
    fn distances_match_hand_computation() {
        let dir = TempDir::new().unwrap();
        let manifest = write_bundle(dir.path());
        let predictions = manifest.load_predictions().unwrap();
        let config = MdreConfig::new(vec!["base".into()]);
        let table = mdre_feature_matrix(&manifest, &predictions, &config).unwrap();

        assert_eq!(table.rows(), 4);
        assert_eq!(table.cols(), 1);
        assert_eq!(table.example_ids, vec!["n0", "n1", "a0", "a1"]);
        assert_eq!(table.labels, vec![0, 0, 1, 1]);

        // n0 = 0.5 pred 0 -> nearest of {0.0, 0.2} = 0.3
        // n1 = 9.0 pred 1 -> nearest of {10.0, 10.4} = 1.0
        // a0 = 5.0 pred 1 -> nearest of {10.0, 10.4} = 5.0
        // a1 = 4.0 pred 0 -> nearest of {0.0, 0.2} = 3.8
        let expected = [0.3, 1.0, 5.0, 3.8];
        for (i, want) in expected.iter().enumerate() {
            assert!(
                (table.row(i)[0] - want).abs() < 1e-6,
                "row {i}: {} vs {want}",
                table.row(i)[0]
            );
        }
    }

    #[test]
    fn columns_follow_model_order() {
        let dir = TempDir::new().unwrap();
        let manifest = write_bundle(dir.path());
        let predictions = manifest.load_predictions().unwrap();

        let ab = mdre_feature_matrix(
            &manifest,
            &predictions,
            &MdreConfig::new(vec!["base".into(), "wide".into()]),
        )
        .unwrap();
        let ba = mdre_feature_matrix(
            &manifest,
            &predictions,
            &MdreConfig::new(vec!["wide".into(), "base".into()]),
        )
        .unwrap();

        assert_eq!(ab.column_names, vec!["base", "wide"]);
        assert_eq!(ba.column_names, vec!["wide", "base"]);
        for i in 0..ab.rows() {
            assert_eq!(ab.row(i)[0].to_bits(), ba.row(i)[1].to_bits());
            assert_eq!(ab.row(i)[1].to_bits(), ba.row(i)[0].to_bits());
            // "wide" doubles coordinates, so its distances double too.
            assert!((ab.row(i)[1] - 2.0 * ab.row(i)[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn last_layer_is_chosen_per_model() {
        let dir = TempDir::new().unwrap();
        let manifest = write_bundle(dir.path());
        let config = MdreConfig::new(vec!["wide".into()]);
        assert_eq!(config.resolve_layer(&manifest, "wide").unwrap(), 3);

        let fixed = MdreConfig {
            model_ids: vec!["wide".into()],
            layer: LayerSelector::Fixed(0),
        };
        assert!(fixed.resolve_layer(&manifest, "wide").is_err());
        assert!(fixed.resolve_layer(&manifest, "base").is_ok());
    }

    #[test]
    fn unknown_and_duplicate_models_are_rejected() {
        let dir = TempDir::new().unwrap();
        let manifest = write_bundle(dir.path());
        let predictions = manifest.load_predictions().unwrap();

        let missing = MdreConfig::new(vec!["nope".into()]);
        assert!(matches!(
            mdre_feature_matrix(&manifest, &predictions, &missing),
            Err(Error::InvalidArgument(_))
        ));

        let dup = MdreConfig::new(vec!["base".into(), "base".into()]);
        assert!(matches!(
            mdre_feature_matrix(&manifest, &predictions, &dup),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn pairing_order_defines_row_order() {
        let dir = TempDir::new().unwrap();
        let manifest = write_bundle(dir.path());
        let predictions = manifest.load_predictions().unwrap();

        let mut flipped = manifest.clone();
        flipped.pairing = vec![("n1".into(), "a1".into()), ("n0".into(), "a0".into())];
        let table = mdre_feature_matrix(
            &flipped,
            &predictions,
            &MdreConfig::new(vec!["base".into()]),
        )
        .unwrap();
        assert_eq!(table.example_ids, vec!["n1", "n0", "a1", "a0"]);
        let expected = [1.0, 0.3, 3.8, 5.0];
        for (i, want) in expected.iter().enumerate() {
            assert!((table.row(i)[0] - want).abs() < 1e-6);
        }
    }
}
