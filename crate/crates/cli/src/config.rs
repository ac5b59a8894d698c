//! Configuration resolution: command-line flags override values from an
//! optional TOML config file, which override built-in defaults.
//!
//! The file mirrors the flags one-to-one, grouped into sections:
//!
//! ```toml
//! [synth]
//! subjects = 6
//! classes = 3
//! dim = 12
//! seed = 42
//!
//! [train]
//! epochs = 100
//! batch-size = 64
//! learning-rate = 1e-3
//! mode = "weighted"
//! encoder-hidden = [32]
//! latent-dim = 8
//!
//! [weighting]
//! mode = "budget"
//! beta = 0.5
//! space = "input"
//! estimator = "sliced"
//! projections = 64
//!
//! [eval]
//! fold-cap = 10
//!
//! [project]
//! components = 3
//! ```

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use otae_core::data::SyntheticConfig;
use otae_core::model::{ArchConfig, LossMode, TrainConfig};
use otae_core::nn::OptimizerKind;
use otae_core::weighting::{AlphaConfig, AlphaEstimator, AlphaSpace, WeightMode, WeightingConfig};
use otae_core::{Error, Result};

/// Which classifier objective `train`/`loso` optimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossModeArg {
    Baseline,
    Weighted,
}

impl From<LossModeArg> for LossMode {
    fn from(value: LossModeArg) -> Self {
        match value {
            LossModeArg::Baseline => LossMode::MseBaseline,
            LossModeArg::Weighted => LossMode::WassersteinWeighted,
        }
    }
}

/// How subject distances become loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightModeArg {
    Paper,
    Budget,
    GroupOnly,
}

impl From<WeightModeArg> for WeightMode {
    fn from(value: WeightModeArg) -> Self {
        match value {
            WeightModeArg::Paper => WeightMode::Paper,
            WeightModeArg::Budget => WeightMode::Budget,
            WeightModeArg::GroupOnly => WeightMode::GroupOnly,
        }
    }
}

/// Which representation subject distances are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceArg {
    Input,
    Latent,
}

impl From<SpaceArg> for AlphaSpace {
    fn from(value: SpaceArg) -> Self {
        match value {
            SpaceArg::Input => AlphaSpace::Input,
            SpaceArg::Latent => AlphaSpace::Latent,
        }
    }
}

/// Transport-distance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorArg {
    Sliced,
    Exact,
}

/// Parameter-update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(value: OptimizerArg) -> Self {
        match value {
            OptimizerArg::Adam => OptimizerKind::adam_default(),
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }
    }
}

/// Optional values loaded from the TOML config file. Every field mirrors a
/// flag; unknown keys are rejected so typos surface as configuration errors.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub weighting: WeightingSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub project: ProjectSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthSection {
    pub subjects: Option<usize>,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub class_separation: Option<f64>,
    pub subject_shift: Option<f64>,
    pub noise_sigma: Option<f64>,
    /// Pairs of `[subject index, multiplier]`.
    pub outliers: Option<Vec<(usize, f64)>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub recon_weight: Option<f64>,
    pub mode: Option<LossModeArg>,
    pub optimizer: Option<OptimizerArg>,
    pub seed: Option<u64>,
    pub encoder_hidden: Option<Vec<usize>>,
    pub latent_dim: Option<usize>,
    pub classifier_hidden: Option<Vec<usize>>,
    pub normalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct WeightingSection {
    pub mode: Option<WeightModeArg>,
    pub beta: Option<f64>,
    pub space: Option<SpaceArg>,
    pub estimator: Option<EstimatorArg>,
    pub projections: Option<usize>,
    pub exclude_self: Option<bool>,
    pub max_support: Option<usize>,
    pub refresh_interval: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSection {
    pub fold_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProjectSection {
    pub components: Option<usize>,
    pub split_label: Option<String>,
}

/// Loads the config file, or an empty config when no path is given.
pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    // The config file is named on the command line, so failing to read it is
    // a usage problem rather than a data problem.
    let raw = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config file {}: {e}", path.display()))
    })?;
    toml::from_str(&raw).map_err(|e| {
        Error::Config(format!("{}: invalid config file: {e}", path.display()))
    })
}

/// Flag value, else file value, else default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag value, else file value.
pub fn resolve_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Shared weighting knobs accepted by `weights`, `train`, `loso`, and
/// `compare`.
#[derive(Debug, Clone, clap::Args)]
pub struct WeightingFlags {
    /// Weighting mode: how distances become weights.
    #[arg(long = "weight-mode", value_enum)]
    pub weight_mode: Option<WeightModeArg>,
    /// Total subject-weight budget in budget mode, in (0, 1).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Space in which subject distances are measured.
    #[arg(long, value_enum)]
    pub space: Option<SpaceArg>,
    /// Transport-distance estimator.
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Number of random projections for the sliced estimator.
    #[arg(long)]
    pub projections: Option<usize>,
    /// Exclude each subject's own samples from its group distribution.
    #[arg(long)]
    pub exclude_self: bool,
    /// Subsample distributions above this support size before estimating.
    #[arg(long)]
    pub max_support: Option<usize>,
    /// Re-estimate latent-space weights every N epochs during training.
    #[arg(long)]
    pub refresh_interval: Option<usize>,
}

impl WeightingFlags {
    /// Resolves these flags against the `[weighting]` file section.
    pub fn resolve(&self, file: &WeightingSection) -> Result<WeightingConfig> {
        let defaults = WeightingConfig::default();
        let default_alpha = AlphaConfig::default();
        let default_projections = match default_alpha.estimator {
            AlphaEstimator::Sliced { projections } => projections,
            AlphaEstimator::Exact => 64,
        };
        let projections = resolve(self.projections, file.projections, default_projections);
        let estimator = match resolve(self.estimator, file.estimator, EstimatorArg::Sliced) {
            EstimatorArg::Sliced => AlphaEstimator::Sliced { projections },
            EstimatorArg::Exact => {
                if self.projections.is_some() {
                    return Err(Error::Config(
                        "--projections only applies to the sliced estimator".into(),
                    ));
                }
                AlphaEstimator::Exact
            }
        };
        let exclude_self = if self.exclude_self {
            true
        } else {
            file.exclude_self.unwrap_or(default_alpha.group_excludes_self)
        };
        Ok(WeightingConfig {
            mode: resolve(
                self.weight_mode.map(WeightMode::from),
                file.mode.map(WeightMode::from),
                defaults.mode,
            ),
            beta: resolve_opt(self.beta, file.beta),
            alpha: AlphaConfig {
                space: resolve(
                    self.space.map(AlphaSpace::from),
                    file.space.map(AlphaSpace::from),
                    default_alpha.space,
                ),
                estimator,
                group_excludes_self: exclude_self,
                max_support: resolve(self.max_support, file.max_support, default_alpha.max_support),
            },
            refresh_interval: resolve(
                self.refresh_interval,
                file.refresh_interval,
                defaults.refresh_interval,
            ),
        })
    }
}

/// Shared training knobs accepted by `train`, `loso`, and `compare`.
#[derive(Debug, Clone, clap::Args)]
pub struct TrainFlags {
    /// Number of passes over the training data.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Optimizer learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight on the reconstruction term (must be positive).
    #[arg(long)]
    pub recon_weight: Option<f64>,
    /// Classifier objective.
    #[arg(long, value_enum)]
    pub mode: Option<LossModeArg>,
    /// Parameter-update rule.
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Root seed for all randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Encoder hidden-layer widths, comma separated (mirrored by the decoder).
    #[arg(long, value_delimiter = ',')]
    pub encoder_hidden: Option<Vec<usize>>,
    /// Latent-space width.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Classifier hidden-layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub classifier_hidden: Option<Vec<usize>>,
    /// Skip z-score feature normalisation.
    #[arg(long)]
    pub no_normalize: bool,
    #[command(flatten)]
    pub weighting: WeightingFlags,
}

impl TrainFlags {
    /// Resolves these flags against the `[train]` and `[weighting]` file
    /// sections.
    pub fn resolve(&self, file: &FileConfig) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let arch_defaults = ArchConfig::default();
        Ok(TrainConfig {
            epochs: resolve(self.epochs, file.train.epochs, defaults.epochs),
            batch_size: resolve(self.batch_size, file.train.batch_size, defaults.batch_size),
            learning_rate: resolve(
                self.learning_rate,
                file.train.learning_rate,
                defaults.learning_rate,
            ),
            recon_weight: resolve(
                self.recon_weight,
                file.train.recon_weight,
                defaults.recon_weight,
            ),
            loss_mode: resolve(
                self.mode.map(LossMode::from),
                file.train.mode.map(LossMode::from),
                defaults.loss_mode,
            ),
            weighting: self.weighting.resolve(&file.weighting)?,
            arch: ArchConfig {
                encoder_hidden: resolve(
                    self.encoder_hidden.clone(),
                    file.train.encoder_hidden.clone(),
                    arch_defaults.encoder_hidden,
                ),
                latent_dim: resolve(self.latent_dim, file.train.latent_dim, arch_defaults.latent_dim),
                classifier_hidden: resolve(
                    self.classifier_hidden.clone(),
                    file.train.classifier_hidden.clone(),
                    arch_defaults.classifier_hidden,
                ),
            },
            optimizer: resolve(
                self.optimizer.map(OptimizerKind::from),
                file.train.optimizer.map(OptimizerKind::from),
                defaults.optimizer,
            ),
            seed: resolve(self.seed, file.train.seed, defaults.seed),
        })
    }

    /// Whether features should be z-scored before training.
    pub fn normalize(&self, file: &FileConfig) -> bool {
        if self.no_normalize {
            false
        } else {
            file.train.normalize.unwrap_or(true)
        }
    }
}

/// Parses an `INDEX:MULTIPLIER` outlier designation, e.g. `2:4.0`.
pub fn parse_outlier(value: &str) -> std::result::Result<(usize, f64), String> {
    let (index, multiplier) = value
        .split_once(':')
        .ok_or_else(|| format!("expected INDEX:MULTIPLIER, got {value:?}"))?;
    let index: usize = index
        .parse()
        .map_err(|_| format!("invalid subject index {index:?}"))?;
    let multiplier: f64 = multiplier
        .parse()
        .map_err(|_| format!("invalid multiplier {multiplier:?}"))?;
    Ok((index, multiplier))
}

/// Synthetic-generator flags shared with the config file's `[synth]` section.
#[derive(Debug, clap::Args)]
pub struct SynthFlags {
    /// Number of subjects.
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Number of classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature dimensionality.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Samples per subject per class.
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    /// Distance scale between class means.
    #[arg(long)]
    pub class_separation: Option<f64>,
    /// Distance scale of per-subject offsets.
    #[arg(long)]
    pub subject_shift: Option<f64>,
    /// Standard deviation of per-sample noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Scale one subject's offset, e.g. `--outlier 2:4.0` (repeatable).
    #[arg(long, value_name = "INDEX:MULTIPLIER", value_parser = parse_outlier)]
    pub outlier: Vec<(usize, f64)>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthFlags {
    /// Flag value, else `[synth]` file value, else built-in default.
    pub fn resolve(&self, file: &SynthSection) -> SyntheticConfig {
        let defaults = SyntheticConfig::default();
        let file_outliers = file.outliers.clone().unwrap_or_default();
        SyntheticConfig {
            subjects: resolve(self.subjects, file.subjects, defaults.subjects),
            classes: resolve(self.classes, file.classes, defaults.classes),
            dim: resolve(self.dim, file.dim, defaults.dim),
            samples_per_class: resolve(
                self.samples_per_class,
                file.samples_per_class,
                defaults.samples_per_class,
            ),
            class_separation: resolve(
                self.class_separation,
                file.class_separation,
                defaults.class_separation,
            ),
            subject_shift: resolve(self.subject_shift, file.subject_shift, defaults.subject_shift),
            noise_sigma: resolve(self.noise_sigma, file.noise_sigma, defaults.noise_sigma),
            outlier_multipliers: if self.outlier.is_empty() {
                file_outliers
            } else {
                self.outlier.clone()
            },
            seed: resolve(self.seed, file.seed, defaults.seed),
        }
    }
}
