//! Detector feature tables.
//!
//! Both characterization pipelines reduce a bundle to the same shape: one
//! row of `f64` features per paired example (all normals first, then all
//! adversarials, in pairing order) plus a binary label column — 0 for
//! normal, 1 for adversarial. The table serializes as a JSON header next
//! to a binary payload so the numbers survive a round trip bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::repm;
use crate::repstore::write_json;

/// A labeled feature matrix produced by one detector pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// Which pipeline produced this (e.g. "lid" or "mdre").
    pub kind: String,
    /// One name per feature column.
    pub column_names: Vec<String>,
    /// One id per row, aligned with `labels`.
    pub example_ids: Vec<String>,
    /// 0 = normal, 1 = adversarial.
    pub labels: Vec<u8>,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    schema_version: u32,
    kind: String,
    column_names: Vec<String>,
    example_ids: Vec<String>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
    payload_path: String,
    payload_checksum: String,
}

const FEATURE_SCHEMA_VERSION: u32 = 1;

impl FeatureTable {
    /// Assemble and validate a table. `data` is row-major with
    /// `example_ids.len()` rows and `column_names.len()` columns; labels
    /// must be 0 or 1 and every feature finite.
    pub fn new(
        kind: impl Into<String>,
        column_names: Vec<String>,
        example_ids: Vec<String>,
        labels: Vec<u8>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let rows = example_ids.len();
        let cols = column_names.len();
        if labels.len() != rows {
            return Err(Error::Misaligned(format!(
                "{} labels for {rows} example ids",
                labels.len()
            )));
        }
        if cols == 0 {
            return Err(Error::InvalidArgument(
                "feature table needs at least one column".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::Misaligned(format!(
                "feature buffer has {} values, expected {rows} x {cols}",
                data.len()
            )));
        }
        if let Some(bad) = labels.iter().position(|l| *l > 1) {
            return Err(Error::Schema(format!(
                "label {} at row {bad} is not 0 or 1",
                labels[bad]
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature table".into(),
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(FeatureTable {
            kind: kind.into(),
            column_names,
            example_ids,
            labels,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.example_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn paths(base: &Path) -> (PathBuf, PathBuf) {
        (base.with_extension("json"), base.with_extension("repm"))
    }

    /// Write `<base>.json` (header) and `<base>.repm` (binary payload).
    pub fn save(&self, base: &Path) -> Result<()> {
        let (json_path, repm_path) = Self::paths(base);
        let checksum = repm::write_f64(&repm_path, self.rows(), self.cols, &self.data)?;
        let payload_name = repm_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad output path {base:?}")))?
            .to_string();
        let header = FeatureHeader {
            schema_version: FEATURE_SCHEMA_VERSION,
            kind: self.kind.clone(),
            column_names: self.column_names.clone(),
            example_ids: self.example_ids.clone(),
            labels: self.labels.clone(),
            rows: self.rows(),
            cols: self.cols,
            payload_path: payload_name,
            payload_checksum: checksum,
        };
        write_json(&json_path, &header)
    }

    /// Read a table written by [`FeatureTable::save`], verifying the
    /// payload checksum and all shape invariants.
    pub fn load(base: &Path) -> Result<Self> {
        let (json_path, _) = Self::paths(base);
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: FeatureHeader = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: json_path.clone(),
            source: e,
        })?;
        if header.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported feature table schema_version {}",
                header.schema_version
            )));
        }
        let dir = json_path.parent().unwrap_or(Path::new("."));
        let repm_path = dir.join(&header.payload_path);
        let actual = repm::sha256_file(&repm_path)?;
        if actual != header.payload_checksum {
            return Err(Error::Integrity {
                path: repm_path,
                expected: header.payload_checksum,
                actual,
            });
        }
        let (rows, cols, data) = repm::read_f64(&repm_path)?;
        if rows != header.rows || cols != header.cols {
            return Err(Error::Misaligned(format!(
                "payload is {rows} x {cols}, header says {} x {}",
                header.rows, header.cols
            )));
        }
        FeatureTable::new(
            header.kind,
            header.column_names,
            header.example_ids,
            header.labels,
            data,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn sample() -> FeatureTable {
        FeatureTable::new(
            "lid",
            vec!["layer-0".into(), "layer-1".into()],
            vec!["n0".into(), "a0".into()],
            vec![0, 1],
            vec![2.0, 3.5, 9.25, 11.0],
        )
        .unwrap()
    }

    #[test]
    fn construction_validates_shapes_and_values() {
        assert!(FeatureTable::new("x", vec![], vec![], vec![], vec![]).is_err());
        assert!(
            FeatureTable::new("x", vec!["c".into()], vec!["a".into()], vec![2], vec![1.0]).is_err()
        );
        assert!(FeatureTable::new(
            "x",
            vec!["c".into()],
            vec!["a".into()],
            vec![0],
            vec![f64::NAN]
        )
        .is_err());
        assert!(FeatureTable::new(
            "x",
            vec!["c".into()],
            vec!["a".into(), "b".into()],
            vec![0, 1],
            vec![1.0]
        )
        .is_err());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = TempDir::new().unwrap();
        let base = dir.path().join("features");
        let table = sample();
        table.save(&base).unwrap();
        let back = FeatureTable::load(&base).unwrap();
        assert_eq!(back, table);
        for (a, b) in back.data().iter().zip(table.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn payload_tampering_is_caught() {
        let dir = TempDir::new().unwrap();
        let base = dir.path().join("features");
        sample().save(&base).unwrap();
        let repm_path = base.with_extension("repm");
        let mut bytes = std::fs::read(&repm_path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&repm_path, bytes).unwrap();
        assert!(matches!(
            FeatureTable::load(&base),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn row_access() {
        let t = sample();
        assert_eq!(t.row(0), &[2.0, 3.5]);
        assert_eq!(t.row(1), &[9.25, 11.0]);
    }
}
