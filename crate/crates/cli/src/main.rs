//! Command-line front end for the representation-space detectors.
//!
//! One binary, one subcommand per pipeline stage:
//!
//! * `synth` — fabricate a synthetic bundle with known geometry
//! * `validate` — integrity-check a bundle and print its shape
//! * `lid` — extract local-intrinsic-dimensionality features (and
//!   optionally sweep the neighborhood size)
//! * `mdre` — extract multi-model distance features, train and evaluate
//!   the ensemble detector
//! * `fgws` — run the frequency-guided word-substitution baseline over a
//!   token-level task file
//! * `lm-baseline` — train the language-model-score baseline detector
//!   from a score file
//! * `eval` — re-score a saved detector on a saved feature table
//!
//! Every report is JSON, embeds the fully resolved configuration, and is
//! byte-identical across reruns with the same flags (thread count
//! included). Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use repdetect::detect::{evaluate, lm_score_detector, LogisticHyperparams, SplitSpec};
use repdetect::fgws::{
    calibrate_gamma, fgws_detect, frequency_threshold, ConfidenceOracle, Detection, FrequencyTable,
    SynonymMap, Verdict,
};
use repdetect::lid::{lid_features_from_bundle, tune_k, LidConfig, TuneResult};
use repdetect::mdre::{run_mdre, LayerSelector, MdreConfig};
use repdetect::repstore::{load_manifest, validate_bundle, BundleReport, Manifest};
use repdetect::synthgen::{generate_bundle, SynthConfig, SynthStats};
use repdetect::{EvalReport, FeatureTable, LogisticModel};

#[derive(Parser)]
#[command(
    name = "repdetect",
    version,
    about = "Detect adversarial text examples from representation geometry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap the worker thread count (default: all cores). Results never
    /// depend on this.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle under --out
    Synth(SynthArgs),
    /// Check a bundle's integrity and report its shape
    Validate(ValidateArgs),
    /// Extract local-intrinsic-dimensionality features
    Lid(LidArgs),
    /// Train and evaluate the multi-distance ensemble detector
    Mdre(MdreArgs),
    /// Run the frequency-guided word-substitution baseline
    Fgws(FgwsArgs),
    /// Train the language-model-score baseline detector
    LmBaseline(LmArgs),
    /// Re-score a saved detector on a saved feature table
    Eval(EvalArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Directory to write the bundle into
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    /// Bundle manifest to check
    #[arg(long)]
    manifest: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LidArgs {
    /// Bundle manifest to read representations from
    #[arg(long)]
    manifest: PathBuf,
    /// The model whose layers are profiled (exactly one)
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Layer to include (repeatable; default: all of the model's layers)
    #[arg(long)]
    layer: Vec<u32>,
    /// Neighborhood size for the estimator
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Size of the reference sample drawn per example
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep these neighborhood sizes and report test accuracy per k
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    /// Ridge strength for the sweep's detector fits
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Output base path: features land at <out>.json + <out>.repm
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct MdreArgs {
    /// Bundle manifest to read representations from
    #[arg(long)]
    manifest: PathBuf,
    /// Models contributing one distance feature each (comma-separated)
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    /// Use this layer id for every model (default: each model's last)
    #[arg(long)]
    layer: Option<u32>,
    /// Split seed for train/test evaluation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ridge strength for the detector fit
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Output base path: features, model, and report land at
    /// <out>.json/.repm, <out>.model.json, <out>.eval.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FgwsArgs {
    /// Task file naming the frequency table, synonym map, oracle,
    /// validation sequences, and labeled examples
    #[arg(long)]
    manifest: PathBuf,
    /// Percentile (multiple of 10) below which words count as infrequent
    #[arg(long, default_value_t = 90)]
    delta: u32,
    /// Detection threshold; default: calibrated from the validation set
    #[arg(long)]
    gamma: Option<f64>,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LmArgs {
    /// Score file with per-example language-model scores and labels
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ridge strength for the detector fit
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Saved detector model (JSON)
    model: PathBuf,
    /// Feature table base path (the <base> of <base>.json + <base>.repm)
    features: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads as usize)
            .build_global()
        {
            eprintln!("error: thread pool setup failed: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Lid(args) => cmd_lid(args),
        Command::Mdre(args) => cmd_mdre(args),
        Command::Fgws(args) => cmd_fgws(args),
        Command::LmBaseline(args) => cmd_lm(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

/// Serialize a report (pretty JSON, trailing newline) to stdout or,
/// when `out` is given, to that file.
fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).context("report serialization")?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing report to {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", base.display()))
}

fn load_bundle(path: &Path) -> Result<Manifest> {
    load_manifest(path).with_context(|| format!("loading bundle {}", path.display()))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    #[derive(Serialize)]
    struct SynthReport {
        command: &'static str,
        config: SynthConfig,
        manifest: PathBuf,
        stats: SynthStats,
    }
    let config = SynthConfig::hard_margin(args.seed);
    let (_, stats) =
        generate_bundle(&config, &args.out).context("synth: bundle generation failed")?;
    emit(
        &SynthReport {
            command: "synth",
            config,
            manifest: args.out.join("manifest.json"),
            stats,
        },
        None,
    )
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct ValidateReport<'a> {
        command: &'static str,
        config: &'a ValidateArgs,
        report: BundleReport,
    }
    let manifest = load_bundle(&args.manifest)?;
    let report = validate_bundle(&manifest).context("validate: bundle check failed")?;
    emit(
        &ValidateReport {
            command: "validate",
            config: &args,
            report,
        },
        args.out.as_deref(),
    )
}

fn cmd_lid(args: LidArgs) -> Result<()> {
    #[derive(Serialize)]
    struct LidReport<'a> {
        command: &'static str,
        config: &'a LidArgs,
        layers: Vec<u32>,
        rows: usize,
        columns: Vec<String>,
        features: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        tune: Option<TuneResult>,
    }

    if args.models.len() != 1 {
        bail!(
            "lid: expected exactly one model id via --models, got {}",
            args.models.len()
        );
    }
    let model_id = &args.models[0];
    let manifest = load_bundle(&args.manifest)?;
    let predictions = manifest
        .load_predictions()
        .context("lid: loading predictions")?;

    let layers = if args.layer.is_empty() {
        let all = manifest.layers_of(model_id);
        if all.is_empty() {
            bail!("lid: model {model_id} has no layers in this bundle");
        }
        all
    } else {
        args.layer.clone()
    };

    let config = LidConfig {
        k: args.k,
        batch_size: args.batch_size,
        seed: args.seed,
        layers: layers.clone(),
    };
    let features = lid_features_from_bundle(&manifest, &predictions, model_id, &config)
        .context("lid: feature extraction failed")?;
    features
        .save(&args.out)
        .context("lid: writing feature table")?;

    let tune = match &args.k_grid {
        Some(grid) => {
            let hyper = LogisticHyperparams {
                l2: args.l2,
                ..LogisticHyperparams::default()
            };
            let result = tune_k(
                &manifest,
                &predictions,
                model_id,
                &config,
                grid,
                &SplitSpec::new(args.seed),
                &hyper,
            )
            .context("lid: neighborhood sweep failed")?;
            emit(&result, Some(&with_suffix(&args.out, ".tune.json")))?;
            Some(result)
        }
        None => None,
    };

    emit(
        &LidReport {
            command: "lid",
            layers,
            rows: features.rows(),
            columns: features.column_names.clone(),
            features: args.out.clone(),
            tune,
            config: &args,
        },
        None,
    )
}

fn cmd_mdre(args: MdreArgs) -> Result<()> {
    let manifest = load_bundle(&args.manifest)?;
    let predictions = manifest
        .load_predictions()
        .context("mdre: loading predictions")?;
    let config = MdreConfig {
        model_ids: args.models.clone(),
        layer: match args.layer {
            Some(l) => LayerSelector::Fixed(l),
            None => LayerSelector::LastLayer,
        },
    };
    let split = SplitSpec::new(args.seed);
    let hyper = LogisticHyperparams {
        l2: args.l2,
        ..LogisticHyperparams::default()
    };
    let (report, model, features) =
        run_mdre(&manifest, &predictions, &config, &split, &hyper).context("mdre: run failed")?;
    let report = report.with_config(serde_json::to_value(&args)?);

    features
        .save(&args.out)
        .context("mdre: writing feature table")?;
    model
        .save(&with_suffix(&args.out, ".model.json"))
        .context("mdre: writing model")?;
    emit(&report, Some(&with_suffix(&args.out, ".eval.json")))?;
    emit(&report, None)
}

/// Token-level task description for the word-substitution baseline:
/// paths are resolved relative to the task file itself.
#[derive(Deserialize)]
struct FgwsTask {
    schema_version: u32,
    #[serde(default)]
    dataset_name: String,
    frequency_table: PathBuf,
    synonyms: PathBuf,
    oracle: PathBuf,
    /// Held-out normal sequences for threshold calibration.
    #[serde(default)]
    validation: Vec<Vec<String>>,
    examples: Vec<FgwsExample>,
}

#[derive(Deserialize)]
struct FgwsExample {
    example_id: String,
    tokens: Vec<String>,
    /// 0 = normal, 1 = adversarial.
    label: u8,
}

fn cmd_fgws(args: FgwsArgs) -> Result<()> {
    #[derive(Serialize)]
    struct VerdictRow {
        example_id: String,
        label: u8,
        #[serde(flatten)]
        detection: Detection,
    }
    #[derive(Serialize)]
    struct FgwsReport<'a> {
        command: &'static str,
        config: &'a FgwsArgs,
        threshold: u64,
        gamma: f64,
        verdicts: Vec<VerdictRow>,
        eval: EvalReport,
    }

    let raw = std::fs::read_to_string(&args.manifest)
        .with_context(|| format!("fgws: reading task file {}", args.manifest.display()))?;
    let task: FgwsTask = serde_json::from_str(&raw)
        .with_context(|| format!("fgws: parsing task file {}", args.manifest.display()))?;
    if task.schema_version != 1 {
        bail!(
            "fgws: unsupported task schema version {}",
            task.schema_version
        );
    }
    if task.examples.is_empty() {
        bail!("fgws: task file has no examples");
    }
    let mut seen = BTreeSet::new();
    for ex in &task.examples {
        if ex.label > 1 {
            bail!(
                "fgws: example {} has label {}, expected 0 or 1",
                ex.example_id,
                ex.label
            );
        }
        if !seen.insert(&ex.example_id) {
            bail!("fgws: duplicate example id {}", ex.example_id);
        }
    }

    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let table = FrequencyTable::load(&base.join(&task.frequency_table))
        .context("fgws: loading frequency table")?;
    let synonyms =
        SynonymMap::load(&base.join(&task.synonyms)).context("fgws: loading synonym map")?;
    let oracle =
        ConfidenceOracle::load(&base.join(&task.oracle)).context("fgws: loading oracle")?;

    let threshold = frequency_threshold(&table, args.delta).context("fgws: threshold")?;
    let gamma = match args.gamma {
        Some(g) => g,
        None => {
            if task.validation.is_empty() {
                bail!("fgws: no validation sequences in the task file and no --gamma given");
            }
            calibrate_gamma(&task.validation, &oracle, &table, threshold, &synonyms)
                .context("fgws: calibration failed")?
        }
    };

    let mut verdicts = Vec::with_capacity(task.examples.len());
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for ex in &task.examples {
        let detection = fgws_detect(&ex.tokens, &oracle, &table, threshold, gamma, &synonyms)
            .with_context(|| format!("fgws: example {}", ex.example_id))?;
        let flagged = detection.verdict == Verdict::Adversarial;
        match (ex.label, flagged) {
            (1, true) => tp += 1,
            (1, false) => fn_ += 1,
            (0, true) => fp += 1,
            (0, false) => tn += 1,
            _ => unreachable!("labels validated above"),
        }
        verdicts.push(VerdictRow {
            example_id: ex.example_id.clone(),
            label: ex.label,
            detection,
        });
    }
    let total = (tp + fp + tn + fn_) as f64;
    let eval = EvalReport {
        detector: "fgws".into(),
        dataset: task.dataset_name.clone(),
        attack_tag: String::new(),
        accuracy: (tp + tn) as f64 / total,
        tp,
        fp,
        tn,
        fn_,
        seed: 0,
        standardized: false,
        split: None,
        config: serde_json::to_value(&args)?,
    };

    emit(
        &FgwsReport {
            command: "fgws",
            config: &args,
            threshold,
            gamma,
            verdicts,
            eval,
        },
        args.out.as_deref(),
    )
}

/// Score file for the language-model baseline.
#[derive(Deserialize)]
struct LmScores {
    schema_version: u32,
    #[serde(default)]
    dataset_name: String,
    examples: Vec<LmExample>,
}

#[derive(Deserialize)]
struct LmExample {
    example_id: String,
    score: f64,
    /// 0 = normal, 1 = adversarial.
    label: u8,
}

fn cmd_lm(args: LmArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.manifest).with_context(|| {
        format!(
            "lm-baseline: reading score file {}",
            args.manifest.display()
        )
    })?;
    let scores: LmScores = serde_json::from_str(&raw).with_context(|| {
        format!(
            "lm-baseline: parsing score file {}",
            args.manifest.display()
        )
    })?;
    if scores.schema_version != 1 {
        bail!(
            "lm-baseline: unsupported score schema version {}",
            scores.schema_version
        );
    }
    let ids: Vec<String> = scores
        .examples
        .iter()
        .map(|e| e.example_id.clone())
        .collect();
    let values: Vec<f64> = scores.examples.iter().map(|e| e.score).collect();
    let labels: Vec<u8> = scores.examples.iter().map(|e| e.label).collect();

    let hyper = LogisticHyperparams {
        l2: args.l2,
        ..LogisticHyperparams::default()
    };
    let (report, _) = lm_score_detector(ids, &values, &labels, &SplitSpec::new(args.seed), &hyper)
        .context("lm-baseline: run failed")?;
    let report = report
        .with_context("lm", scores.dataset_name.clone(), "")
        .with_config(serde_json::to_value(&args)?);
    emit(&report, args.out.as_deref())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = LogisticModel::load(&args.model)
        .with_context(|| format!("eval: loading model {}", args.model.display()))?;
    let table = FeatureTable::load(&args.features)
        .with_context(|| format!("eval: loading features {}", args.features.display()))?;
    let report = evaluate(&model, table.data(), table.rows(), &table.labels)
        .context("eval: scoring failed")?
        .with_context(table.kind.clone(), "", "")
        .with_config(serde_json::to_value(&args)?);
    emit(&report, args.out.as_deref())
}
