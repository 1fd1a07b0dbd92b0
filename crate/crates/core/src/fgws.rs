//! Frequency-guided word-substitution baseline.
//!
//! Adversarial text attacks tend to swap common words for rare ones. This
//! detector inverts the trick: replace every infrequent token by its most
//! frequent strictly-more-frequent synonym, re-query the classifier, and
//! flag the input as adversarial when the predicted class's confidence
//! drops by more than a calibrated threshold γ.
//!
//! The classifier itself is behind a [`ConfidenceOracle`]: a file-backed
//! map from token sequences to probability vectors. That keeps the module
//! free of any model dependency — at desk scale the oracle is precomputed,
//! and in production it would wrap a live model.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::repstore::write_json;

/// Word occurrence counts from a training corpus. Absent words have
/// implicit count zero, so out-of-vocabulary tokens always qualify as
/// infrequent.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    total_tokens: u64,
}

impl FrequencyTable {
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut map = HashMap::new();
        let mut total = 0u64;
        for (word, count) in counts {
            if count == 0 {
                return Err(Error::Schema(format!(
                    "word {word:?} has count 0; absent words are implicitly zero"
                )));
            }
            if map.insert(word.clone(), count).is_some() {
                return Err(Error::Schema(format!("duplicate word {word:?}")));
            }
            total += count;
        }
        Ok(FrequencyTable {
            counts: map,
            total_tokens: total,
        })
    }

    /// Occurrence count, zero for unknown words.
    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn distinct_words(&self) -> usize {
        self.counts.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Load from a JSON object `{word: count, ...}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, u64> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            source: e,
        })?;
        FrequencyTable::from_counts(raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ordered: BTreeMap<&String, &u64> = self.counts.iter().collect();
        write_json(path, &ordered)
    }
}

/// Candidate replacement words. Loaded data — neighbor mining happens
/// upstream of this toolkit.
#[derive(Debug, Clone, Default)]
pub struct SynonymMap {
    neighbors: HashMap<String, Vec<String>>,
}

impl SynonymMap {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (word, mut neighbors) in entries {
            if neighbors.contains(&word) {
                return Err(Error::Schema(format!(
                    "word {word:?} lists itself as a synonym"
                )));
            }
            neighbors.sort();
            neighbors.dedup();
            map.insert(word, neighbors);
        }
        Ok(SynonymMap { neighbors: map })
    }

    pub fn neighbors_of(&self, word: &str) -> &[String] {
        self.neighbors.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Load from a JSON object `{word: [synonym, ...], ...}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                source: e,
            })?;
        SynonymMap::from_entries(raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ordered: BTreeMap<&String, &Vec<String>> = self.neighbors.iter().collect();
        write_json(path, &ordered)
    }
}

/// Precomputed classifier confidences, keyed by a hash of the token
/// sequence (case-preserving, single-space joined, SHA-256).
#[derive(Debug, Clone)]
pub struct ConfidenceOracle {
    num_classes: usize,
    entries: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OracleFile {
    schema_version: u32,
    num_classes: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

const ORACLE_SCHEMA_VERSION: u32 = 1;

impl ConfidenceOracle {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(ConfidenceOracle {
            num_classes,
            entries: HashMap::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Canonical lookup key for a token sequence.
    pub fn key_for(tokens: &[String]) -> String {
        let joined = tokens.join(" ");
        hex::encode(Sha256::digest(joined.as_bytes()))
    }

    /// Register the confidence vector for a sequence. Probabilities must
    /// be non-negative and sum to 1 within 1e-9.
    pub fn insert(&mut self, tokens: &[String], probs: Vec<f64>) -> Result<()> {
        self.insert_keyed(Self::key_for(tokens), probs)
    }

    fn insert_keyed(&mut self, key: String, probs: Vec<f64>) -> Result<()> {
        if probs.len() != self.num_classes {
            return Err(Error::Schema(format!(
                "confidence vector has {} entries for {} classes",
                probs.len(),
                self.num_classes
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Schema(
                "confidence vectors must be non-negative and finite".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Schema(format!(
                "confidence vector sums to {sum}, expected 1"
            )));
        }
        self.entries.insert(key, probs);
        Ok(())
    }

    /// Confidence vector for a sequence, or an oracle miss naming the key.
    pub fn lookup(&self, tokens: &[String]) -> Result<&[f64]> {
        let key = Self::key_for(tokens);
        self.entries
            .get(&key)
            .map(Vec::as_slice)
            .ok_or(Error::OracleMiss { key })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: OracleFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            source: e,
        })?;
        if raw.schema_version != ORACLE_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported oracle schema_version {}",
                raw.schema_version
            )));
        }
        let mut oracle = ConfidenceOracle::new(raw.num_classes)?;
        for (key, probs) in raw.entries {
            oracle.insert_keyed(key, probs)?;
        }
        Ok(oracle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = OracleFile {
            schema_version: ORACLE_SCHEMA_VERSION,
            num_classes: self.num_classes,
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        write_json(path, &doc)
    }
}

/// Occurrence count at the δ-th nearest-rank percentile of the
/// distinct-word count distribution. δ must be a multiple of 10 in
/// `[0, 100]`; δ=0 gives the minimum count and δ=100 the maximum.
pub fn frequency_threshold(table: &FrequencyTable, delta: u32) -> Result<u64> {
    if delta > 100 || !delta.is_multiple_of(10) {
        return Err(Error::InvalidArgument(format!(
            "percentile must be one of 0, 10, ..., 100, got {delta}"
        )));
    }
    if table.counts.is_empty() {
        return Err(Error::InvalidArgument(
            "frequency table is empty; cannot take a percentile".into(),
        ));
    }
    let mut counts: Vec<u64> = table.counts.values().copied().collect();
    counts.sort_unstable();
    let n = counts.len() as u64;
    // Nearest-rank: smallest index r with r/n >= delta/100, clamped to 1.
    let rank = ((delta as u64 * n).div_ceil(100)).max(1);
    Ok(counts[(rank - 1) as usize])
}

/// One replacement made by [`substitute_infrequent`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub position: usize,
    pub original: String,
    pub replacement: String,
}

/// Replace each token with count below `threshold` by its most frequent
/// strictly-more-frequent synonym (ties broken by lexicographic order).
/// One pass, left to right; replacements are never re-substituted. Tokens
/// with no qualifying synonym stay as they are.
pub fn substitute_infrequent(
    tokens: &[String],
    table: &FrequencyTable,
    threshold: u64,
    synonyms: &SynonymMap,
) -> (Vec<String>, Vec<Substitution>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut log = Vec::new();
    for (position, token) in tokens.iter().enumerate() {
        let count = table.count(token);
        if count >= threshold {
            out.push(token.clone());
            continue;
        }
        let best = synonyms
            .neighbors_of(token)
            .iter()
            .filter(|s| table.count(s) > count)
            .max_by(|a, b| {
                table
                    .count(a)
                    .cmp(&table.count(b))
                    // On equal counts prefer the lexicographically
                    // smaller word, i.e. treat it as "greater" here.
                    .then_with(|| b.cmp(a))
            });
        match best {
            Some(replacement) => {
                log.push(Substitution {
                    position,
                    original: token.clone(),
                    replacement: replacement.clone(),
                });
                out.push(replacement.clone());
            }
            None => out.push(token.clone()),
        }
    }
    (out, log)
}

/// Confidence drop of the predicted class after substitution, floored at
/// zero (a confidence increase is evidence of normality, not attack).
fn floored_difference(
    tokens: &[String],
    oracle: &ConfidenceOracle,
    table: &FrequencyTable,
    threshold: u64,
    synonyms: &SynonymMap,
) -> Result<f64> {
    Ok(raw_difference(tokens, oracle, table, threshold, synonyms)?
        .0
        .max(0.0))
}

fn raw_difference(
    tokens: &[String],
    oracle: &ConfidenceOracle,
    table: &FrequencyTable,
    threshold: u64,
    synonyms: &SynonymMap,
) -> Result<(f64, Vec<Substitution>)> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    let original = oracle.lookup(tokens)?;
    // argmax with ties to the smallest class index.
    let predicted = original
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.total_cmp(b).then(j.cmp(i)))
        .map(|(i, _)| i)
        .unwrap();
    let conf_original = original[predicted];
    let (transformed, log) = substitute_infrequent(tokens, table, threshold, synonyms);
    let conf_transformed = oracle.lookup(&transformed)?[predicted];
    Ok((conf_original - conf_transformed, log))
}

/// γ = the 90th nearest-rank percentile of the floored confidence
/// differences over a validation set of (presumed normal) sequences.
pub fn calibrate_gamma(
    validation: &[Vec<String>],
    oracle: &ConfidenceOracle,
    table: &FrequencyTable,
    threshold: u64,
    synonyms: &SynonymMap,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::InvalidArgument(
            "validation set is empty; cannot calibrate".into(),
        ));
    }
    let mut diffs = Vec::with_capacity(validation.len());
    for tokens in validation {
        diffs.push(floored_difference(
            tokens, oracle, table, threshold, synonyms,
        )?);
    }
    diffs.sort_by(f64::total_cmp);
    // Upper nearest-rank: the smallest value with at least 90% of the
    // distribution at or below it from above, i.e. index floor(0.9 n).
    let n = diffs.len();
    let rank = ((0.9 * n as f64).floor() as usize + 1).min(n);
    Ok(diffs[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Normal,
    Adversarial,
}

/// Outcome of [`fgws_detect`] for one sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub verdict: Verdict,
    /// Signed drop in the predicted class's confidence (negative when
    /// confidence rose after substitution).
    pub confidence_difference: f64,
    pub substitutions: Vec<Substitution>,
}

/// Flag `tokens` as adversarial iff the predicted class's confidence
/// drops by strictly more than `gamma` after substitution.
pub fn fgws_detect(
    tokens: &[String],
    oracle: &ConfidenceOracle,
    table: &FrequencyTable,
    threshold: u64,
    gamma: f64,
    synonyms: &SynonymMap,
) -> Result<Detection> {
    if !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be finite, got {gamma}"
        )));
    }
    let (difference, substitutions) = raw_difference(tokens, oracle, table, threshold, synonyms)?;
    Ok(Detection {
        verdict: if difference > gamma {
            Verdict::Adversarial
        } else {
            Verdict::Normal
        },
        confidence_difference: difference,
        substitutions,
    })
}
