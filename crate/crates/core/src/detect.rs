//! Binary detection on top of feature tables.
//!
//! The classifier is an L2-regularized logistic regression trained from
//! scratch: features are z-scored, weights start at zero, and full-batch
//! gradient descent with Armijo backtracking runs until the gradient's
//! max-norm drops below tolerance. That is deliberate — the feature spaces
//! here have a handful of columns, so closed-form speed tricks buy nothing,
//! while a hand-rolled trainer keeps every arithmetic step reproducible
//! across platforms and thread counts.
//!
//! `run_detection` is the shared experiment harness: shuffle examples with
//! a seeded RNG, split 80/20, fit on the train side, report a confusion
//! matrix on the test side.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::rng::derive_rng;

/// Training hyperparameters. `l2` is the coefficient λ in the penalty
/// `(λ/2)·‖w‖²` (the bias is never regularized).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticHyperparams {
    pub l2: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub standardize: bool,
}

impl Default for LogisticHyperparams {
    fn default() -> Self {
        LogisticHyperparams {
            l2: 1e-4,
            max_iters: 10_000,
            tolerance: 1e-8,
            standardize: true,
        }
    }
}

/// A trained logistic model plus the standardization it was fit under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub hyperparams: LogisticHyperparams,
}

/// Loss curve and termination info from one training run.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Objective value before training and after every accepted step.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^z) - y·z`.
#[inline]
fn sample_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

struct Standardized {
    data: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

/// Z-score columns; a constant column gets std 1 so it maps to all zeros
/// (and, with zero-initialized weights and an L2 penalty, its weight stays
/// exactly zero).
fn standardize(x: &[f64], rows: usize, cols: usize) -> Standardized {
    let mut means = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            means[c] += x[r * cols + c];
        }
    }
    for m in &mut means {
        *m /= rows as f64;
    }
    let mut stds = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            let d = x[r * cols + c] - means[c];
            stds[c] += d * d;
        }
    }
    for s in &mut stds {
        *s = (*s / rows as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = (x[r * cols + c] - means[c]) / stds[c];
        }
    }
    Standardized { data, means, stds }
}

/// Mean cross-entropy plus the L2 penalty, at (`w`, `b`).
///
/// Public so external checks (the acceptance suite, benchmarks) can probe
/// the training objective directly; `x` is used as given, unstandardized.
pub fn objective(x: &[f64], rows: usize, cols: usize, y: &[u8], w: &[f64], b: f64, l2: f64) -> f64 {
    let mut loss = 0.0;
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let z: f64 = b + row.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>();
        loss += sample_loss(z, y[r] as f64);
    }
    loss /= rows as f64;
    let penalty: f64 = w.iter().map(|wi| wi * wi).sum::<f64>() * (l2 / 2.0);
    loss + penalty
}

/// Gradient of [`objective`] with respect to `(w, b)`.
pub fn gradient(
    x: &[f64],
    rows: usize,
    cols: usize,
    y: &[u8],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; cols];
    let mut gb = 0.0;
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let z: f64 = b + row.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>();
        let resid = sigmoid(z) - y[r] as f64;
        for (g, xi) in gw.iter_mut().zip(row) {
            *g += resid * xi;
        }
        gb += resid;
    }
    let n = rows as f64;
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (gw, gb / n)
}

fn check_training_inputs(x: &[f64], rows: usize, cols: usize, y: &[u8]) -> Result<()> {
    if cols == 0 || rows == 0 {
        return Err(Error::InvalidArgument(
            "training set must have at least one row and one column".into(),
        ));
    }
    if x.len() != rows * cols {
        return Err(Error::Misaligned(format!(
            "feature buffer has {} values, expected {rows} x {cols}",
            x.len()
        )));
    }
    if y.len() != rows {
        return Err(Error::Misaligned(format!(
            "{} labels for {rows} rows",
            y.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "training features".into(),
            row: i / cols,
            col: i % cols,
        });
    }
    if y.iter().any(|l| *l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let ones = y.iter().filter(|l| **l == 1).count();
    if ones == 0 || ones == rows {
        return Err(Error::InvalidArgument(
            "training labels contain only one class".into(),
        ));
    }
    Ok(())
}

/// Fit a logistic model and return the loss trace alongside it.
pub fn train_logistic_traced(
    x: &[f64],
    rows: usize,
    cols: usize,
    y: &[u8],
    hyper: &LogisticHyperparams,
) -> Result<(LogisticModel, TrainTrace)> {
    check_training_inputs(x, rows, cols, y)?;
    if hyper.l2 < 0.0 || !hyper.l2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "l2 penalty must be finite and non-negative, got {}",
            hyper.l2
        )));
    }
    if hyper.tolerance <= 0.0 {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }

    let (xs, means, stds) = if hyper.standardize {
        let s = standardize(x, rows, cols);
        (s.data, s.means, s.stds)
    } else {
        (x.to_vec(), vec![0.0; cols], vec![1.0; cols])
    };

    let mut w = vec![0.0; cols];
    let mut b = 0.0;
    let mut loss = objective(&xs, rows, cols, y, &w, b, hyper.l2);
    let mut losses = vec![loss];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;

    loop {
        let (gw, gb) = gradient(&xs, rows, cols, y, &w, b, hyper.l2);
        grad_norm = gw
            .iter()
            .chain(std::iter::once(&gb))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < hyper.tolerance {
            converged = true;
            break;
        }
        if iterations >= hyper.max_iters {
            break;
        }

        // Backtracking line search on the steepest-descent direction:
        // accept the first step with an Armijo-sufficient decrease.
        let g2: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-20 {
            let wc: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let bc = b - step * gb;
            let candidate = objective(&xs, rows, cols, y, &wc, bc, hyper.l2);
            if candidate <= loss - 1e-4 * step * g2 {
                w = wc;
                b = bc;
                loss = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Step size underflowed: we are at numerical stationarity.
            break;
        }
        losses.push(loss);
        iterations += 1;
    }

    Ok((
        LogisticModel {
            weights: w,
            bias: b,
            feature_means: means,
            feature_stds: stds,
            hyperparams: hyper.clone(),
        },
        TrainTrace {
            losses,
            iterations,
            converged,
            final_grad_norm: grad_norm,
        },
    ))
}

/// Fit a logistic model on row-major features `x` (`rows` x `cols`).
pub fn train_logistic(
    x: &[f64],
    rows: usize,
    cols: usize,
    y: &[u8],
    hyper: &LogisticHyperparams,
) -> Result<LogisticModel> {
    train_logistic_traced(x, rows, cols, y, hyper).map(|(m, _)| m)
}

impl LogisticModel {
    /// Probability that `features` is adversarial.
    pub fn predict_proba(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                left: features.len(),
                right: self.weights.len(),
            });
        }
        let mut z = self.bias;
        for ((x, m), (s, w)) in features
            .iter()
            .zip(&self.feature_means)
            .zip(self.feature_stds.iter().zip(&self.weights))
        {
            z += (x - m) / s * w;
        }
        Ok(sigmoid(z))
    }

    /// Hard decision at the 0.5 boundary; exactly 0.5 maps to 1.
    pub fn predict(&self, features: &[f64]) -> Result<u8> {
        Ok(if self.predict_proba(features)? >= 0.5 {
            1
        } else {
            0
        })
    }

    /// Serialize to JSON.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::repstore::write_json(path, self)
    }

    /// Read a model written by [`LogisticModel::save`].
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Confusion counts and metadata for one detection experiment.
///
/// Serialized as the toolkit's standard report: `fn_` appears as `"fn"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub dataset: String,
    pub attack_tag: String,
    pub accuracy: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub seed: u64,
    pub standardized: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<SplitSummary>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Fill in the experiment identity fields.
    pub fn with_context(
        mut self,
        detector: impl Into<String>,
        dataset: impl Into<String>,
        attack_tag: impl Into<String>,
    ) -> Self {
        self.detector = detector.into();
        self.dataset = dataset.into();
        self.attack_tag = attack_tag.into();
        self
    }

    /// Attach the resolved run configuration for reproducibility.
    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }
}

/// How an example set was divided for one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Seeded train/test split parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub fraction: f64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            seed,
            fraction: 0.8,
        }
    }
}

/// Shuffle `0..n` with a seeded RNG and cut it into train/test, with the
/// train side taking `ceil(fraction * n)` rows (a 1e-9 guard absorbs
/// float error in the product so e.g. 0.8 of 1000 is exactly 800).
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.fraction > 0.0 && spec.fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie strictly between 0 and 1, got {}",
            spec.fraction
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} examples into train and test"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(spec.seed, &[b"train-test-split"]);
    order.shuffle(&mut rng);
    let n_train = (spec.fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    if n_train >= n {
        return Err(Error::DegenerateSplit(format!(
            "fraction {} of {n} examples leaves an empty test side",
            spec.fraction
        )));
    }
    let test = order.split_off(n_train);
    Ok((order, test))
}

fn gather_rows(table: &FeatureTable, indices: &[usize]) -> (Vec<f64>, Vec<u8>) {
    let cols = table.cols();
    let mut x = Vec::with_capacity(indices.len() * cols);
    let mut y = Vec::with_capacity(indices.len());
    for &i in indices {
        x.extend_from_slice(table.row(i));
        y.push(table.labels[i]);
    }
    (x, y)
}

fn check_both_classes(y: &[u8], side: &str) -> Result<()> {
    let ones = y.iter().filter(|l| **l == 1).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::DegenerateSplit(format!(
            "{side} side contains only one class"
        )));
    }
    Ok(())
}

/// Score a model on labeled features, producing the confusion counts.
/// Context fields (detector, dataset, ...) are left for the caller.
pub fn evaluate(model: &LogisticModel, x: &[f64], rows: usize, y: &[u8]) -> Result<EvalReport> {
    let cols = model.weights.len();
    if x.len() != rows * cols {
        return Err(Error::Misaligned(format!(
            "feature buffer has {} values, expected {rows} x {cols}",
            x.len()
        )));
    }
    if y.len() != rows {
        return Err(Error::Misaligned(format!(
            "{} labels for {rows} rows",
            y.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for r in 0..rows {
        let pred = model.predict(&x[r * cols..(r + 1) * cols])?;
        match (pred, y[r]) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => return Err(Error::InvalidArgument("labels must be 0 or 1".into())),
        }
    }
    Ok(EvalReport {
        detector: String::new(),
        dataset: String::new(),
        attack_tag: String::new(),
        accuracy: (tp + tn) as f64 / rows as f64,
        tp,
        fp,
        tn,
        fn_,
        seed: 0,
        standardized: model.hyperparams.standardize,
        split: None,
        config: serde_json::Value::Null,
    })
}

/// The standard experiment: seeded shuffle, 80/20 split, fit on train,
/// score on test. Errors if either side ends up single-class rather than
/// silently reporting a meaningless number.
pub fn run_detection(
    table: &FeatureTable,
    split: &SplitSpec,
    hyper: &LogisticHyperparams,
) -> Result<(EvalReport, LogisticModel)> {
    let (train_idx, test_idx) = split_indices(table.rows(), split)?;
    let (train_x, train_y) = gather_rows(table, &train_idx);
    let (test_x, test_y) = gather_rows(table, &test_idx);
    check_both_classes(&train_y, "train")?;
    check_both_classes(&test_y, "test")?;

    let model = train_logistic(&train_x, train_idx.len(), table.cols(), &train_y, hyper)?;
    let mut report = evaluate(&model, &test_x, test_idx.len(), &test_y)?;
    report.detector = table.kind.clone();
    report.seed = split.seed;
    report.split = Some(SplitSummary {
        seed: split.seed,
        fraction: split.fraction,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        train_indices: train_idx,
        test_indices: test_idx,
    });
    Ok((report, model))
}

/// Baseline detector over scalar language-model scores: one feature
/// column, same split-train-evaluate harness as every other detector.
pub fn lm_score_detector(
    example_ids: Vec<String>,
    scores: &[f64],
    labels: &[u8],
    split: &SplitSpec,
    hyper: &LogisticHyperparams,
) -> Result<(EvalReport, LogisticModel)> {
    if scores.len() != example_ids.len() {
        return Err(Error::Misaligned(format!(
            "{} scores for {} example ids",
            scores.len(),
            example_ids.len()
        )));
    }
    let table = FeatureTable::new(
        "lm",
        vec!["lm_score".into()],
        example_ids,
        labels.to_vec(),
        scores.to_vec(),
    )?;
    let (report, model) = run_detection(&table, split, hyper)?;
    Ok((report.with_context("lm", "", ""), model))
}
