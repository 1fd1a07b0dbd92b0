//! Synthetic bundle generation.
//!
//! Real bundles come from instrumenting language models over attacked
//! corpora. For development and acceptance testing this module fabricates
//! the same structure at desk scale: classes are Gaussian clouds in a
//! latent space, each "representation model" is a fixed random linear view
//! of that space plus a little noise, the target classifier is a linear
//! softmax trained on the latent points, and adversarial examples are
//! crafted by walking a correctly classified point toward the nearest
//! other-class mean until the prediction flips, then overshooting.
//!
//! Crafting happens in latent space and is then pushed through every view
//! — the attack edits the underlying input, not any one model's
//! representation — so crafted points sit *between* class clouds in every
//! view: off-manifold, which is exactly the geometry the detectors key on.
//!
//! Everything is a pure function of the config (including its seed);
//! generating the same bundle twice yields byte-identical files.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::detect::{train_logistic, LogisticHyperparams, LogisticModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::repstore::{
    load_manifest, repm, write_predictions, Manifest, ManifestEntry, PredictionRecord, Role,
};
use crate::rng::derive_rng;

/// Parameters of a synthetic bundle.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub num_classes: u32,
    pub latent_dims: usize,
    /// Number of single-layer "view" models emitted alongside the
    /// multi-layer target model.
    pub view_count: usize,
    pub view_dims: usize,
    /// One mean per class, each of length `latent_dims`.
    pub class_means: Vec<Vec<f64>>,
    /// Isotropic standard deviation of each class cloud.
    pub class_spread: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Stop crafting after this many normal/adversarial pairs.
    pub max_pairs: usize,
    /// How far past the decision boundary crafted points land, as a
    /// fraction of the segment to the nearest other-class mean.
    pub adversary_margin: f64,
    /// Standard deviation of per-view observation noise.
    pub view_noise: f64,
    /// Layers emitted for the target model (ids 0..target_layers).
    pub target_layers: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// The default well-separated two-class setup: cloud separation 20x
    /// the spread, so detectors have clean geometry to work with.
    pub fn hard_margin(seed: u64) -> Self {
        let mut mean_a = vec![0.0; 8];
        let mut mean_b = vec![0.0; 8];
        mean_a[0] = 3.0;
        mean_b[0] = -3.0;
        SynthConfig {
            num_classes: 2,
            latent_dims: 8,
            view_count: 3,
            view_dims: 16,
            class_means: vec![mean_a, mean_b],
            class_spread: 0.3,
            n_train: 4000,
            n_test: 600,
            max_pairs: 500,
            adversary_margin: 0.1,
            view_noise: 0.02,
            target_layers: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("need at least one class".into()));
        }
        if self.class_means.len() != self.num_classes as usize {
            return Err(Error::InvalidArgument(format!(
                "{} class means for {} classes",
                self.class_means.len(),
                self.num_classes
            )));
        }
        if self.latent_dims == 0 || self.view_dims == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        for (c, mean) in self.class_means.iter().enumerate() {
            if mean.len() != self.latent_dims {
                return Err(Error::InvalidArgument(format!(
                    "class {c} mean has {} coordinates, expected {}",
                    mean.len(),
                    self.latent_dims
                )));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "class {c} mean has non-finite coordinates"
                )));
            }
        }
        for a in 0..self.class_means.len() {
            for b in a + 1..self.class_means.len() {
                if self.class_means[a] == self.class_means[b] {
                    return Err(Error::InvalidArgument(format!(
                        "class means {a} and {b} coincide"
                    )));
                }
            }
        }
        if self.class_spread < 0.0 || !self.class_spread.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "class spread must be finite and non-negative, got {}",
                self.class_spread
            )));
        }
        if self.n_train == 0 || self.n_test == 0 || self.max_pairs == 0 {
            return Err(Error::InvalidArgument("counts must be positive".into()));
        }
        if self.adversary_margin <= 0.0 || !self.adversary_margin.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "adversary margin must be positive, got {}",
                self.adversary_margin
            )));
        }
        if self.view_noise < 0.0 || !self.view_noise.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "view noise must be finite and non-negative, got {}",
                self.view_noise
            )));
        }
        if self.view_count == 0 || self.target_layers == 0 {
            return Err(Error::InvalidArgument(
                "need at least one view and one target layer".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major `f64` points in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPoints {
    pub dims: usize,
    pub data: Vec<f64>,
}

impl LatentPoints {
    pub fn with_capacity(dims: usize, rows: usize) -> Self {
        LatentPoints {
            dims,
            data: Vec::with_capacity(dims * rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dims);
        self.data.extend_from_slice(row);
    }
}

/// One standard normal draw (Box-Muller; one value per call so the stream
/// is a simple function of the RNG position).
fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Latent train/test points plus gold labels.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub train: LatentPoints,
    pub train_labels: Vec<u32>,
    pub test: LatentPoints,
    pub test_labels: Vec<u32>,
}

/// Sample the class clouds. Points are laid out class-major (all of class
/// 0, then class 1, ...), sizes as even as the counts allow.
pub fn gen_mixture(config: &SynthConfig) -> Result<Mixture> {
    config.validate()?;
    let sample_split = |n: usize, tag: &[u8]| -> (LatentPoints, Vec<u32>) {
        let mut rng = derive_rng(config.seed, &[b"mixture", tag]);
        let mut points = LatentPoints::with_capacity(config.latent_dims, n);
        let mut labels = Vec::with_capacity(n);
        let classes = config.num_classes as usize;
        let mut row = vec![0.0; config.latent_dims];
        for c in 0..classes {
            let count = n / classes + usize::from(c < n % classes);
            let mean = &config.class_means[c];
            for _ in 0..count {
                for (x, m) in row.iter_mut().zip(mean) {
                    *x = m + config.class_spread * standard_normal(&mut rng);
                }
                points.push_row(&row);
                labels.push(c as u32);
            }
        }
        (points, labels)
    };
    let (train, train_labels) = sample_split(config.n_train, b"train");
    let (test, test_labels) = sample_split(config.n_test, b"test");
    Ok(Mixture {
        train,
        train_labels,
        test,
        test_labels,
    })
}

/// A fixed linear map from latent space to one view's representation
/// space.
#[derive(Debug, Clone)]
pub struct ViewMap {
    latent_dims: usize,
    view_dims: usize,
    /// `latent_dims x view_dims`, row-major.
    matrix: Vec<f64>,
}

impl ViewMap {
    /// The identity embedding (square, for tests and diagnostics).
    pub fn identity(dims: usize) -> Self {
        let mut matrix = vec![0.0; dims * dims];
        for i in 0..dims {
            matrix[i * dims + i] = 1.0;
        }
        ViewMap {
            latent_dims: dims,
            view_dims: dims,
            matrix,
        }
    }

    /// The bundle's map for `(model_id, layer_id)`: entries are seeded
    /// N(0, 1/latent_dims) draws, so view distances track latent
    /// distances in expectation.
    pub fn seeded(
        seed: u64,
        model_id: &str,
        layer_id: u32,
        latent_dims: usize,
        view_dims: usize,
    ) -> Self {
        let mut rng = derive_rng(
            seed,
            &[b"view-map", model_id.as_bytes(), &layer_id.to_le_bytes()],
        );
        let scale = 1.0 / (latent_dims as f64).sqrt();
        let matrix = (0..latent_dims * view_dims)
            .map(|_| scale * standard_normal(&mut rng))
            .collect();
        ViewMap {
            latent_dims,
            view_dims,
            matrix,
        }
    }

    /// Apply the map to every point, adding `noise`-scaled Gaussian
    /// observation noise from `rng`, and narrow to `f32` storage.
    pub fn apply(
        &self,
        points: &LatentPoints,
        noise: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<Matrix> {
        if points.dims != self.latent_dims {
            return Err(Error::DimensionMismatch {
                left: points.dims,
                right: self.latent_dims,
            });
        }
        let rows = points.rows();
        let mut out = Vec::with_capacity(rows * self.view_dims);
        for r in 0..rows {
            let x = points.row(r);
            for j in 0..self.view_dims {
                let mut acc = 0.0;
                for (k, xi) in x.iter().enumerate() {
                    acc += xi * self.matrix[k * self.view_dims + j];
                }
                if noise > 0.0 {
                    acc += noise * standard_normal(rng);
                }
                out.push(acc as f32);
            }
        }
        Matrix::new(rows, self.view_dims, out)
    }
}

/// The single-layer view models' representations of `points`, one matrix
/// per view, in view order. `tag` keys the noise stream (use different
/// tags for train/normal/adversarial point sets).
pub fn gen_views(points: &LatentPoints, config: &SynthConfig, tag: &str) -> Result<Vec<Matrix>> {
    config.validate()?;
    (0..config.view_count)
        .map(|j| {
            let model_id = format!("view{j}");
            let map = ViewMap::seeded(
                config.seed,
                &model_id,
                0,
                config.latent_dims,
                config.view_dims,
            );
            let mut noise_rng = derive_rng(
                config.seed,
                &[
                    b"view-noise",
                    model_id.as_bytes(),
                    &0u32.to_le_bytes(),
                    tag.as_bytes(),
                ],
            );
            map.apply(points, config.view_noise, &mut noise_rng)
        })
        .collect()
}

/// Linear softmax classifier over latent points: one-vs-rest logistic
/// models with argmax decision (ties to the smaller class).
#[derive(Debug, Clone)]
pub struct ToyTarget {
    pub num_classes: u32,
    models: Vec<LogisticModel>,
}

impl ToyTarget {
    pub fn predict(&self, x: &[f64]) -> u32 {
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for (c, model) in self.models.iter().enumerate() {
            let p = model
                .predict_proba(x)
                .expect("latent dimensionality is fixed at training time");
            if p > best_p {
                best_p = p;
                best = c;
            }
        }
        best as u32
    }

    pub fn accuracy(&self, points: &LatentPoints, labels: &[u32]) -> f64 {
        let correct = (0..points.rows())
            .filter(|&i| self.predict(points.row(i)) == labels[i])
            .count();
        correct as f64 / points.rows().max(1) as f64
    }
}

/// Fit the toy target classifier on latent training data.
pub fn toy_target(points: &LatentPoints, labels: &[u32], num_classes: u32) -> Result<ToyTarget> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "the target classifier needs at least 2 classes".into(),
        ));
    }
    if labels.len() != points.rows() {
        return Err(Error::Misaligned(format!(
            "{} labels for {} points",
            labels.len(),
            points.rows()
        )));
    }
    for c in 0..num_classes {
        let members = labels.iter().filter(|l| **l == c).count();
        if members == 0 || members == labels.len() {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {members} of {} training points; every class needs \
                 members and non-members",
                labels.len()
            )));
        }
    }
    let hyper = LogisticHyperparams {
        l2: 1e-3,
        max_iters: 3000,
        tolerance: 1e-7,
        standardize: true,
    };
    let models = (0..num_classes)
        .map(|c| {
            let y: Vec<u8> = labels.iter().map(|l| u8::from(*l == c)).collect();
            train_logistic(&points.data, points.rows(), points.dims, &y, &hyper)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyTarget {
        num_classes,
        models,
    })
}

/// Output of adversarial crafting: aligned normal/adversarial point
/// pairs plus counts of the test points that could not be used.
#[derive(Debug, Clone)]
pub struct CraftedPairs {
    pub normals: LatentPoints,
    /// Gold (= predicted) label of each normal point.
    pub normal_labels: Vec<u32>,
    pub adversaries: LatentPoints,
    /// The flipped label the target assigns each crafted point.
    pub adversary_predicted: Vec<u32>,
    /// Gold label of each crafted point (same as its paired normal).
    pub adversary_gold: Vec<u32>,
    pub skipped_misclassified: usize,
    pub skipped_unflippable: usize,
}

/// Craft at most `config.max_pairs` adversarial points by pushing
/// correctly classified test points across the nearest decision boundary.
///
/// For each point, bisect along the segment to the nearest other-class
/// mean for the smallest prediction-flipping step (tolerance 1e-6), then
/// overshoot by `adversary_margin`. Points that the target already
/// misclassifies, or whose prediction never flips along the segment, are
/// skipped and counted.
pub fn craft_adversaries(
    test: &LatentPoints,
    test_labels: &[u32],
    target: &ToyTarget,
    config: &SynthConfig,
) -> Result<CraftedPairs> {
    config.validate()?;
    if test_labels.len() != test.rows() {
        return Err(Error::Misaligned(format!(
            "{} labels for {} test points",
            test_labels.len(),
            test.rows()
        )));
    }
    let mut out = CraftedPairs {
        normals: LatentPoints::with_capacity(test.dims, config.max_pairs),
        normal_labels: Vec::new(),
        adversaries: LatentPoints::with_capacity(test.dims, config.max_pairs),
        adversary_predicted: Vec::new(),
        adversary_gold: Vec::new(),
        skipped_misclassified: 0,
        skipped_unflippable: 0,
    };

    let point_at = |x: &[f64], mean: &[f64], t: f64| -> Vec<f64> {
        x.iter()
            .zip(mean)
            .map(|(xi, mi)| xi + t * (mi - xi))
            .collect()
    };

    for (i, &gold) in test_labels.iter().enumerate() {
        if out.normal_labels.len() == config.max_pairs {
            break;
        }
        let x = test.row(i);
        if target.predict(x) != gold {
            out.skipped_misclassified += 1;
            continue;
        }

        // Nearest other-class mean (ties to the smaller class id).
        let mut nearest: Option<(usize, f64)> = None;
        for (c, mean) in config.class_means.iter().enumerate() {
            if c as u32 == gold {
                continue;
            }
            let d2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
            if nearest.is_none_or(|(_, best)| d2 < best) {
                nearest = Some((c, d2));
            }
        }
        let (c, _) = nearest.expect("validate() guarantees at least two distinct classes");
        let mean = &config.class_means[c];

        if target.predict(&point_at(x, mean, 1.0)) == gold {
            out.skipped_unflippable += 1;
            continue;
        }
        // Bisect for the smallest flipping step.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if target.predict(&point_at(x, mean, mid)) == gold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let adv = point_at(x, mean, hi + config.adversary_margin);
        let adv_pred = target.predict(&adv);
        if adv_pred == gold {
            // The overshoot crossed back into the original class.
            out.skipped_unflippable += 1;
            continue;
        }

        out.normals.push_row(x);
        out.normal_labels.push(gold);
        out.adversaries.push_row(&adv);
        out.adversary_predicted.push(adv_pred);
        out.adversary_gold.push(gold);
    }
    Ok(out)
}

/// Points uniform in the unit `d`-ball: seeded Gaussian direction times a
/// `U^(1/d)` radius. Returns `n x d` row-major values.
pub fn gen_ball(d: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "ball dimension and count must be positive".into(),
        ));
    }
    let mut rng = derive_rng(seed, &[b"unit-ball"]);
    let mut out = Vec::with_capacity(n * d);
    let mut g = vec![0.0; d];
    for _ in 0..n {
        loop {
            for gi in g.iter_mut() {
                *gi = standard_normal(&mut rng);
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let r = rng.gen::<f64>().powf(1.0 / d as f64) / norm;
                out.extend(g.iter().map(|v| v * r));
                break;
            }
        }
    }
    Ok(out)
}

/// Generation summary, echoed in reports.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthStats {
    pub pairs: usize,
    pub skipped_misclassified: usize,
    pub skipped_unflippable: usize,
    pub train_rows: usize,
    pub target_train_accuracy: f64,
    pub models: Vec<String>,
}

/// Generate a complete bundle under `out_dir` and load it back through
/// the standard manifest path (so every emitted bundle is known to pass
/// integrity checks).
pub fn generate_bundle(config: &SynthConfig, out_dir: &Path) -> Result<(Manifest, SynthStats)> {
    config.validate()?;
    if config.num_classes < 2 {
        return Err(Error::InvalidArgument(
            "bundles need at least 2 classes (adversarial labels must differ from gold)".into(),
        ));
    }
    std::fs::create_dir_all(out_dir.join("reps")).map_err(|e| Error::io(out_dir, e))?;

    let mixture = gen_mixture(config)?;
    let target = toy_target(&mixture.train, &mixture.train_labels, config.num_classes)?;
    let crafted = craft_adversaries(&mixture.test, &mixture.test_labels, &target, config)?;
    let pairs = crafted.normal_labels.len();
    if pairs == 0 {
        return Err(Error::InvalidArgument(
            "no adversarial pairs could be crafted from this configuration".into(),
        ));
    }

    // Prediction records: train points keep whatever the target says;
    // normals are correct and adversaries flipped by construction.
    let mut records = Vec::new();
    for i in 0..mixture.train.rows() {
        records.push(PredictionRecord {
            example_id: format!("train-{i:05}"),
            predicted_label: target.predict(mixture.train.row(i)),
            gold_label: mixture.train_labels[i],
            role: Role::Train,
        });
    }
    for i in 0..pairs {
        records.push(PredictionRecord {
            example_id: format!("norm-{i:05}"),
            predicted_label: crafted.normal_labels[i],
            gold_label: crafted.normal_labels[i],
            role: Role::Normal,
        });
    }
    for i in 0..pairs {
        records.push(PredictionRecord {
            example_id: format!("adv-{i:05}"),
            predicted_label: crafted.adversary_predicted[i],
            gold_label: crafted.adversary_gold[i],
            role: Role::Adversarial,
        });
    }
    write_predictions(&out_dir.join("predictions.json"), &records)?;

    // The target model contributes target_layers layers; each view model
    // contributes a single layer 0. Every (model, layer) has its own map.
    let mut model_layers: Vec<(String, u32)> = (0..config.target_layers)
        .map(|l| ("target".to_string(), l as u32))
        .collect();
    for j in 0..config.view_count {
        model_layers.push((format!("view{j}"), 0));
    }

    let point_sets: [(&str, Role, &LatentPoints); 3] = [
        ("train", Role::Train, &mixture.train),
        ("normal", Role::Normal, &crafted.normals),
        ("adversarial", Role::Adversarial, &crafted.adversaries),
    ];

    let mut entries = Vec::new();
    for (model_id, layer_id) in &model_layers {
        let map = ViewMap::seeded(
            config.seed,
            model_id,
            *layer_id,
            config.latent_dims,
            config.view_dims,
        );
        for (tag, role, points) in &point_sets {
            let mut noise_rng = derive_rng(
                config.seed,
                &[
                    b"view-noise",
                    model_id.as_bytes(),
                    &layer_id.to_le_bytes(),
                    tag.as_bytes(),
                ],
            );
            let matrix = map.apply(points, config.view_noise, &mut noise_rng)?;
            let file = format!("reps/{model_id}_L{layer_id}_{tag}.repm");
            let checksum = repm::write_f32(
                &out_dir.join(&file),
                matrix.rows(),
                matrix.dims(),
                matrix.data(),
            )?;
            entries.push(ManifestEntry {
                model_id: model_id.clone(),
                layer_id: *layer_id,
                role: *role,
                file_path: file,
                rows: matrix.rows() as u64,
                dims: matrix.dims() as u64,
                checksum,
            });
        }
    }

    let pairing = (0..pairs)
        .map(|i| (format!("norm-{i:05}"), format!("adv-{i:05}")))
        .collect();
    let manifest = Manifest::new(
        "synthetic",
        config.num_classes,
        entries,
        "predictions.json",
        pairing,
        out_dir,
    );
    manifest.save(&out_dir.join("manifest.json"))?;

    let stats = SynthStats {
        pairs,
        skipped_misclassified: crafted.skipped_misclassified,
        skipped_unflippable: crafted.skipped_unflippable,
        train_rows: mixture.train.rows(),
        target_train_accuracy: target.accuracy(&mixture.train, &mixture.train_labels),
        models: model_layers
            .iter()
            .map(|(m, _)| m.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect(),
    };

    // Read back through the front door: emitted bundles must always load.
    let manifest = load_manifest(&out_dir.join("manifest.json"))?;
    Ok((manifest, stats))
}
