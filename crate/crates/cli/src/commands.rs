//! The six subcommands: synth, weights, train, loso, compare, project.
//!
//! Every artifact-producing command writes a `<artifact>.manifest.json`
//! recording the resolved configuration, seeds, and input digests, and is
//! byte-identical under re-runs with identical inputs — except the
//! `timing` field of the `loso`/`compare` reports, which is the only
//! wall-clock-dependent output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use otae_core::data::{
    apply_normalizer, fit_normalizer, load_csv, synth_generate, write_csv, LabeledDataset,
    NormalizationStats,
};
use otae_core::eval::{
    compare_modes, pca_project, run_loso, write_projection_csv, ComparisonReport, LosoRun,
};
use otae_core::model::{
    load_checkpoint, save_checkpoint, train, Checkpoint, EpochStats, TrainConfig,
    CHECKPOINT_SCHEMA_VERSION,
};
use otae_core::weighting::{compute_weights, SubjectWeights, WeightingConfig};
use otae_core::{Error, Result};

use crate::config::{resolve, FileConfig, SynthFlags, TrainFlags, WeightingFlags};
use crate::manifest::RunManifest;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Wall-clock measurements, kept in one clearly marked field so reports can
/// be compared modulo timing.
#[derive(Debug, Serialize)]
struct Timing {
    wall_seconds: f64,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialisation failed: {e}")))?;
    std::fs::write(path, json.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_value(value: &impl Serialize) -> Result<serde_json::Value> {
    serde_json::to_value(value)
        .map_err(|e| Error::Internal(format!("config serialisation failed: {e}")))
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthFlags,
    /// Output CSV path.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct SynthSidecar<'a> {
    schema_version: u32,
    generator: &'a otae_core::data::SyntheticConfig,
    subjects: Vec<String>,
    n_samples: usize,
    dim: usize,
    n_classes: usize,
}

pub fn synth(args: &SynthArgs, file: &FileConfig) -> Result<()> {
    let cfg = args.synth.resolve(&file.synth);
    let dataset = synth_generate(&cfg)?;
    ensure_parent(&args.output)?;
    write_csv(&args.output, &dataset)?;

    let mut sidecar_path = args.output.as_os_str().to_owned();
    sidecar_path.push(".meta.json");
    let sidecar_path = PathBuf::from(sidecar_path);
    write_json(
        &sidecar_path,
        &SynthSidecar {
            schema_version: REPORT_SCHEMA_VERSION,
            generator: &cfg,
            subjects: dataset.subjects(),
            n_samples: dataset.len(),
            dim: dataset.dim(),
            n_classes: dataset.n_classes(),
        },
    )?;

    RunManifest::new("synth", to_value(&cfg)?)
        .with_seed("root", cfg.seed)
        .with_artifact(&args.output)
        .with_artifact(&sidecar_path)
        .write_next_to(&args.output)?;

    println!(
        "wrote {} samples ({} subjects, {} classes, dim {}) to {}",
        dataset.len(),
        dataset.n_subjects(),
        dataset.n_classes(),
        dataset.dim(),
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// weights

#[derive(Debug, clap::Args)]
pub struct WeightsArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint providing the encoder (and normaliser) for latent-space
    /// distances.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip z-score feature normalisation (ignored when a checkpoint
    /// supplies its own normaliser).
    #[arg(long)]
    pub no_normalize: bool,
    #[command(flatten)]
    pub weighting: WeightingFlags,
    /// Output JSON path; prints to stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct WeightsReport<'a> {
    schema_version: u32,
    seed: u64,
    config: &'a WeightingConfig,
    weights: &'a SubjectWeights,
}

pub fn weights(args: &WeightsArgs, file: &FileConfig) -> Result<()> {
    let dataset = load_csv(&args.data)?;
    let weighting = args.weighting.resolve(&file.weighting)?;
    let seed = resolve(args.seed, file.train.seed, 0);

    let checkpoint = args
        .checkpoint
        .as_ref()
        .map(load_checkpoint)
        .transpose()?;
    let (dataset, encoder) = match &checkpoint {
        Some(ckpt) => {
            let normalized = match &ckpt.normalizer {
                Some(stats) => apply_normalizer(stats, &dataset)?,
                None => dataset,
            };
            (normalized, Some(&ckpt.model.encoder))
        }
        None if args.no_normalize => (dataset, None),
        None => {
            let stats = fit_normalizer(&dataset, "weights-input");
            (apply_normalizer(&stats, &dataset)?, None)
        }
    };

    let weights = compute_weights(&dataset, &weighting, encoder, seed)?;
    let report = WeightsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        config: &weighting,
        weights: &weights,
    };

    match &args.output {
        None => {
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Internal(format!("serialisation failed: {e}")))?;
            println!("{json}");
        }
        Some(path) => {
            write_json(path, &report)?;
            let mut manifest = RunManifest::new("weights", to_value(&weighting)?)
                .with_seed("root", seed)
                .with_input(&args.data)?;
            if let Some(ckpt_path) = &args.checkpoint {
                manifest = manifest.with_input(ckpt_path)?;
            }
            manifest.with_artifact(path).write_next_to(path)?;
            println!(
                "wrote weights for {} subjects to {}",
                weights.subjects.len(),
                path.display()
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output checkpoint path.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Training-history JSON path (default: checkpoint path with a
    /// `.history.json` extension).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct HistoryReport<'a> {
    schema_version: u32,
    config: &'a TrainConfig,
    history: &'a [EpochStats],
}

pub fn train_cmd(args: &TrainArgs, file: &FileConfig) -> Result<()> {
    let dataset = load_csv(&args.data)?;
    let config = args.train.resolve(file)?;

    let (train_set, normalizer) = normalize_if(&dataset, args.train.normalize(file))?;
    let out = train(&train_set, &config)?;

    let checkpoint = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        model: out.model,
        train_config: config.clone(),
        weights: out.weights,
        normalizer,
    };
    ensure_parent(&args.output)?;
    save_checkpoint(&args.output, &checkpoint)?;

    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.output.with_extension("history.json"));
    write_json(
        &history_path,
        &HistoryReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: &config,
            history: &out.history,
        },
    )?;

    RunManifest::new("train", to_value(&config)?)
        .with_seed("root", config.seed)
        .with_input(&args.data)?
        .with_artifact(&args.output)
        .with_artifact(&history_path)
        .write_next_to(&args.output)?;

    match out.history.last() {
        Some(last) => println!(
            "trained {} epochs; final loss {:.6}; checkpoint {}",
            out.history.len(),
            last.loss.total,
            args.output.display()
        ),
        None => println!(
            "trained 0 epochs; wrote initialised checkpoint {}",
            args.output.display()
        ),
    }
    Ok(())
}

fn normalize_if(
    dataset: &LabeledDataset,
    normalize: bool,
) -> Result<(LabeledDataset, Option<NormalizationStats>)> {
    if normalize {
        let stats = fit_normalizer(dataset, "full-dataset");
        Ok((apply_normalizer(&stats, dataset)?, Some(stats)))
    } else {
        Ok((dataset.clone(), None))
    }
}

// ---------------------------------------------------------------------------
// loso

#[derive(Debug, clap::Args)]
pub struct LosoArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Evaluate at most this many held-out subjects (seeded selection).
    #[arg(long)]
    pub fold_cap: Option<usize>,
    /// Output metrics JSON path.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct LosoReport<'a> {
    schema_version: u32,
    command: &'static str,
    data: String,
    fold_cap: Option<usize>,
    config: &'a TrainConfig,
    run: &'a LosoRun,
    timing: Timing,
}

pub fn loso(args: &LosoArgs, file: &FileConfig) -> Result<()> {
    let dataset = load_csv(&args.data)?;
    let config = args.train.resolve(file)?;
    let fold_cap = args.fold_cap.or(file.eval.fold_cap);

    let started = Instant::now();
    let run = run_loso(&dataset, &config, fold_cap)?;
    let timing = Timing {
        wall_seconds: started.elapsed().as_secs_f64(),
    };

    write_json(
        &args.output,
        &LosoReport {
            schema_version: REPORT_SCHEMA_VERSION,
            command: "loso",
            data: args.data.display().to_string(),
            fold_cap,
            config: &config,
            run: &run,
            timing,
        },
    )?;
    RunManifest::new("loso", to_value(&config)?)
        .with_seed("root", config.seed)
        .with_input(&args.data)?
        .with_artifact(&args.output)
        .write_next_to(&args.output)?;

    println!(
        "{} folds; accuracy {:.4} ± {:.4}; report {}",
        run.folds.len(),
        run.mean_accuracy,
        run.accuracy_std,
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Evaluate at most this many held-out subjects (seeded selection).
    #[arg(long)]
    pub fold_cap: Option<usize>,
    /// Output report JSON path.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct CompareReportFile<'a> {
    schema_version: u32,
    command: &'static str,
    data: String,
    fold_cap: Option<usize>,
    report: &'a ComparisonReport,
    timing: Timing,
}

pub fn compare(args: &CompareArgs, file: &FileConfig) -> Result<()> {
    let dataset = load_csv(&args.data)?;
    let config = args.train.resolve(file)?;
    let fold_cap = args.fold_cap.or(file.eval.fold_cap);

    let started = Instant::now();
    let report = compare_modes(&dataset, &config, fold_cap)?;
    let timing = Timing {
        wall_seconds: started.elapsed().as_secs_f64(),
    };

    write_json(
        &args.output,
        &CompareReportFile {
            schema_version: REPORT_SCHEMA_VERSION,
            command: "compare",
            data: args.data.display().to_string(),
            fold_cap,
            report: &report,
            timing,
        },
    )?;
    RunManifest::new("compare", to_value(&config)?)
        .with_seed("root", config.seed)
        .with_input(&args.data)?
        .with_artifact(&args.output)
        .write_next_to(&args.output)?;

    let fmt_pct = |v: Option<f64>| match v {
        Some(p) => format!("{p:+.2}%"),
        None => "undefined".to_string(),
    };
    println!(
        "baseline accuracy {:.4} ± {:.4}; weighted accuracy {:.4} ± {:.4}",
        report.baseline.mean_accuracy,
        report.baseline.accuracy_std,
        report.weighted.mean_accuracy,
        report.weighted.accuracy_std,
    );
    println!(
        "test centroid distance change {}; test min inter-class distance change {}; report {}",
        fmt_pct(report.mean_over_folds.mean_test_centroid_pct_change),
        fmt_pct(report.mean_over_folds.mean_test_min_distance_pct_change),
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// project

#[derive(Debug, clap::Args)]
pub struct ProjectArgs {
    /// Checkpoint with the encoder (and normaliser) to project through.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of principal components to keep.
    #[arg(long)]
    pub components: Option<usize>,
    /// Value for the `split` column of every row.
    #[arg(long)]
    pub split_label: Option<String>,
    /// Output CSV path.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn project(args: &ProjectArgs, file: &FileConfig) -> Result<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let dataset = load_csv(&args.data)?;
    // The default keeps up to three components but never more than the
    // latent space holds; an explicit request wider than the latent space
    // still fails below.
    let latent_dim = checkpoint.model.latent_dim;
    let components = resolve(args.components, file.project.components, latent_dim.min(3));
    let split_label = args
        .split_label
        .clone()
        .or_else(|| file.project.split_label.clone())
        .unwrap_or_else(|| "all".to_string());

    let dataset = match &checkpoint.normalizer {
        Some(stats) => apply_normalizer(stats, &dataset)?,
        None => dataset,
    };
    let latents = checkpoint.model.encode(&dataset.features_tensor())?;
    let pca = pca_project(&latents, components)?;

    ensure_parent(&args.output)?;
    let splits = vec![split_label.clone(); dataset.len()];
    let subject_ids: Vec<String> = dataset
        .subject_ids()
        .into_iter()
        .map(str::to_string)
        .collect();
    write_projection_csv(
        &args.output,
        &pca.projected,
        &dataset.labels(),
        &subject_ids,
        &splits,
    )?;

    #[derive(Serialize)]
    struct ProjectConfig<'a> {
        components: usize,
        split_label: &'a str,
    }
    RunManifest::new(
        "project",
        to_value(&ProjectConfig {
            components,
            split_label: &split_label,
        })?,
    )
    .with_input(&args.checkpoint)?
    .with_input(&args.data)?
    .with_artifact(&args.output)
    .write_next_to(&args.output)?;

    let variances: Vec<String> = pca
        .explained_variances
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect();
    println!(
        "projected {} samples onto {} components (explained variances {}); wrote {}",
        dataset.len(),
        components,
        variances.join(", "),
        args.output.display()
    );
    Ok(())
}
