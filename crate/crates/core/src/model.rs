//! The autoencoder + classifier model and its training loop.
//!
//! One shared encoder feeds two heads: a decoder that reconstructs the
//! input (mean-squared error) and a classifier over the latent code
//! (cross-entropy). The classifier term is split into a group part scaled
//! by `lambda_g` and per-subject parts scaled by each subject's `lambda`,
//! so subjects far from the group contribute less:
//!
//! ```text
//! reconstruction = mean squared error over the batch
//! group_ce       = lambda_g * mean cross-entropy over the batch
//! subject_ce_i   = lambda_i * mean cross-entropy over subject i's rows
//! total          = recon_weight * reconstruction + group_ce + sum_i subject_ce_i
//! ```
//!
//! Gradients flow from the decoder into the encoder and from the classifier
//! into the encoder; the two heads never see each other's loss.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, NormalizationStats};
use crate::error::{Error, Result};
use crate::nn::{
    backward, cross_entropy_loss, cross_entropy_per_sample, forward, init_params, mse_loss,
    Activation, LayerSpec, MlpGrads, MlpParams, OptimizerKind, OptimizerState,
};
use crate::seeds::{stream_rng, Stream};
use crate::tensor::Tensor2;
use crate::weighting::{compute_weights, AlphaSpace, SubjectWeights, WeightingConfig};

/// Network shape knobs; input and class dimensions come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Hidden widths between input and latent (encoder); mirrored by the
    /// decoder. May be empty for a single-layer encoder.
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Hidden widths between latent and class scores.
    pub classifier_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![32],
            latent_dim: 8,
            classifier_hidden: vec![16],
        }
    }
}

/// Which classifier objective the trainer optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Plain mean cross-entropy (equivalent to `lambda_g = 1`, all subject
    /// weights 0) plus reconstruction; no transport computation at all.
    MseBaseline,
    /// Subject-weighted classifier term driven by transport distances.
    WassersteinWeighted,
}

/// Everything the training loop needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight on the reconstruction term; must be positive.
    pub recon_weight: f64,
    pub loss_mode: LossMode,
    pub weighting: WeightingConfig,
    pub arch: ArchConfig,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            recon_weight: 1.0,
            loss_mode: LossMode::WassersteinWeighted,
            weighting: WeightingConfig::default(),
            arch: ArchConfig::default(),
            optimizer: OptimizerKind::adam_default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset: &LabeledDataset) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.recon_weight.is_finite() || self.recon_weight <= 0.0 {
            return Err(Error::Config(format!(
                "reconstruction weight must be positive and finite, got {}",
                self.recon_weight
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.loss_mode == LossMode::WassersteinWeighted && dataset.n_subjects() < 2 {
            return Err(Error::Config(format!(
                "weighted training needs at least 2 subjects, dataset has {}",
                dataset.n_subjects()
            )));
        }
        Ok(())
    }
}

/// Encoder, decoder, and classifier parameters plus the latent width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderClassifier {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub classifier: MlpParams,
    pub latent_dim: usize,
}

impl AutoencoderClassifier {
    /// Initialises a model for `input_dim` features and `n_classes` classes.
    /// The encoder and its two heads get independent sub-seeds derived from
    /// `seed`, so the same seed always builds the same model.
    pub fn build(
        input_dim: usize,
        n_classes: usize,
        arch: &ArchConfig,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || n_classes == 0 || arch.latent_dim == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive (input {input_dim}, classes {n_classes}, \
                 latent {})",
                arch.latent_dim
            )));
        }
        let mut seeds = stream_rng(seed, Stream::ParamInit);
        let encoder_seed = seeds.next_u64();
        let decoder_seed = seeds.next_u64();
        let classifier_seed = seeds.next_u64();

        let chain = |dims: &[usize], final_act: Activation| -> Vec<LayerSpec> {
            (0..dims.len() - 1)
                .map(|i| {
                    let act = if i + 2 == dims.len() {
                        final_act
                    } else {
                        Activation::Relu
                    };
                    LayerSpec::new(dims[i], dims[i + 1], act)
                })
                .collect()
        };

        let mut enc_dims = vec![input_dim];
        enc_dims.extend(&arch.encoder_hidden);
        enc_dims.push(arch.latent_dim);
        let mut dec_dims = vec![arch.latent_dim];
        dec_dims.extend(arch.encoder_hidden.iter().rev());
        dec_dims.push(input_dim);
        let mut clf_dims = vec![arch.latent_dim];
        clf_dims.extend(&arch.classifier_hidden);
        clf_dims.push(n_classes);

        Ok(Self {
            encoder: init_params(&chain(&enc_dims, Activation::Relu), encoder_seed)?,
            decoder: init_params(&chain(&dec_dims, Activation::Linear), decoder_seed)?,
            classifier: init_params(&chain(&clf_dims, Activation::Softmax), classifier_seed)?,
            latent_dim: arch.latent_dim,
        })
    }

    /// Checks the three networks individually and their shared shapes.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.classifier.validate()?;
        let k = self.latent_dim;
        if self.encoder.output_dim() != k
            || self.decoder.input_dim() != k
            || self.classifier.input_dim() != k
        {
            return Err(Error::Config(format!(
                "latent width mismatch: encoder out {}, decoder in {}, classifier in {}, \
                 declared {k}",
                self.encoder.output_dim(),
                self.decoder.input_dim(),
                self.classifier.input_dim()
            )));
        }
        if self.decoder.output_dim() != self.encoder.input_dim() {
            return Err(Error::Config(format!(
                "decoder reconstructs {} features but the encoder consumes {}",
                self.decoder.output_dim(),
                self.encoder.input_dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    /// Latent codes for a batch of feature rows (encoder forward only).
    pub fn encode(&self, features: &Tensor2) -> Result<Tensor2> {
        Ok(forward(&self.encoder, features)?.0)
    }

    /// Class probabilities for a batch of feature rows.
    pub fn predict_probs(&self, features: &Tensor2) -> Result<Tensor2> {
        let latent = self.encode(features)?;
        Ok(forward(&self.classifier, &latent)?.0)
    }

    /// Hard labels via argmax; ties resolve to the lowest class index.
    pub fn predict_labels(&self, features: &Tensor2) -> Result<Vec<usize>> {
        let probs = self.predict_probs(features)?;
        Ok((0..probs.rows())
            .map(|r| {
                let row = probs.row(r);
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

/// The composite loss split into its terms. Produced per batch by
/// [`composite_loss`] and per epoch (sample-weighted mean over batches) in
/// training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeLossBreakdown {
    /// Mean squared reconstruction error (unscaled).
    pub reconstruction: f64,
    /// Group cross-entropy term, already scaled by `lambda_g`.
    pub group_ce: f64,
    /// Per-subject cross-entropy terms, scaled by each subject's `lambda`;
    /// only subjects present in the batch appear.
    pub per_subject_ce: BTreeMap<String, f64>,
    /// Sum of the per-subject terms.
    pub subject_ce_total: f64,
    /// `recon_weight * reconstruction + group_ce + subject_ce_total`.
    pub total: f64,
}

/// Gradients for the three parameter groups.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub classifier: MlpGrads,
}

/// Evaluates the composite loss and its exact gradients on the batch given
/// by `indices` into `dataset`.
///
/// Every subject appearing in the batch must be present in `weights`
/// (configuration error otherwise). Per-subject means use the subject's
/// count *within this batch*, so full-batch calls reproduce the
/// whole-dataset definition exactly. Weight values must be finite and
/// non-negative, but their sum is not constrained — scaling all of them by
/// `k` scales the classifier term and its gradients by exactly `k`.
pub fn composite_loss(
    model: &AutoencoderClassifier,
    dataset: &LabeledDataset,
    indices: &[usize],
    weights: &SubjectWeights,
    recon_weight: f64,
) -> Result<(CompositeLossBreakdown, ModelGradients)> {
    if indices.is_empty() {
        return Err(Error::Config("composite loss needs a non-empty batch".into()));
    }
    if !recon_weight.is_finite() || recon_weight <= 0.0 {
        return Err(Error::Config(format!(
            "reconstruction weight must be positive and finite, got {recon_weight}"
        )));
    }
    model.validate()?;
    if !weights.lambda_group.is_finite() || weights.lambda_group < 0.0 {
        return Err(Error::Config(format!(
            "group weight must be finite and >= 0, got {}",
            weights.lambda_group
        )));
    }

    let batch = dataset.gather(indices)?;
    let n = batch.len();
    let features = batch.features_tensor();
    let targets = batch.one_hot_labels();

    // Per-subject row groups and their lambdas.
    let subject_rows = batch.subject_indices();
    let mut lambda_of = BTreeMap::new();
    for subject in subject_rows.keys() {
        let lambda = weights.lambda_for(subject).ok_or_else(|| {
            Error::Config(format!(
                "batch contains subject {subject} with no configured weight"
            ))
        })?;
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Config(format!(
                "subject {subject}: weight must be finite and >= 0, got {lambda}"
            )));
        }
        lambda_of.insert(subject.clone(), lambda);
    }

    // Forward through the encoder and both heads.
    let (latent, enc_cache) = forward(&model.encoder, &features)?;
    let (reconstruction_out, dec_cache) = forward(&model.decoder, &latent)?;
    let (probs, clf_cache) = forward(&model.classifier, &latent)?;

    // Reconstruction term and its gradient at the decoder output.
    let (reconstruction, mut d_reconstruction) = mse_loss(&reconstruction_out, &features)?;
    d_reconstruction.scale_in_place(recon_weight);

    // Classifier terms from one set of per-sample cross-entropies.
    let per_sample = cross_entropy_per_sample(&probs, &targets)?;
    let mean_ce = per_sample.iter().sum::<f64>() / n as f64;
    let group_ce = weights.lambda_group * mean_ce;
    let mut per_subject_ce = BTreeMap::new();
    let mut subject_ce_total = 0.0;
    for (subject, rows) in &subject_rows {
        let lambda = lambda_of[subject];
        let sum: f64 = rows.iter().map(|&r| per_sample[r]).sum();
        let term = lambda * sum / rows.len() as f64;
        per_subject_ce.insert(subject.clone(), term);
        subject_ce_total += term;
    }

    // One weighted cross-entropy backward pass covers both classifier terms:
    // row weight = lambda_g + lambda_subject * batch / subject count, since
    // d(group_ce)/dz_r   = lambda_g / n * (p - y)_r and
    // d(subject_ce)/dz_r = lambda_i / n_i * (p - y)_r.
    let mut row_weights = vec![0.0; n];
    for (subject, rows) in &subject_rows {
        let w = weights.lambda_group + lambda_of[subject] * n as f64 / rows.len() as f64;
        for &r in rows {
            row_weights[r] = w;
        }
    }
    let (_, d_logits) = cross_entropy_loss(&probs, &targets, &row_weights)?;

    let (classifier_grads, d_latent_from_classifier) =
        backward(&model.classifier, &clf_cache, &d_logits)?;
    let (decoder_grads, d_latent_from_decoder) =
        backward(&model.decoder, &dec_cache, &d_reconstruction)?;
    let d_latent = d_latent_from_classifier.add(&d_latent_from_decoder)?;
    let (encoder_grads, _) = backward(&model.encoder, &enc_cache, &d_latent)?;

    let total = recon_weight * reconstruction + group_ce + subject_ce_total;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "composite loss is not finite: {total}"
        )));
    }
    Ok((
        CompositeLossBreakdown {
            reconstruction,
            group_ce,
            per_subject_ce,
            subject_ce_total,
            total,
        },
        ModelGradients {
            encoder: encoder_grads,
            decoder: decoder_grads,
            classifier: classifier_grads,
        },
    ))
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the batch breakdowns over this epoch.
    pub loss: CompositeLossBreakdown,
}

/// Result of [`train`]: the fitted model, per-epoch losses, and the subject
/// weights that were in effect at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub model: AutoencoderClassifier,
    pub history: Vec<EpochStats>,
    pub weights: SubjectWeights,
}

/// Trains a fresh model on `dataset` (whose features the caller has already
/// normalised). Deterministic given the config seed.
///
/// Baseline mode uses the degenerate group-only weighting and performs no
/// transport computation; weighted mode estimates subject weights before the
/// first epoch and, when distances live in latent space, refreshes them
/// every `refresh_interval` epochs through the current encoder.
pub fn train(dataset: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutput> {
    train_with_weight_override(dataset, config, None)
}

/// [`train`], but with externally supplied subject weights replacing weight
/// estimation (weighted mode only). Used for experiments with pinned
/// weights; the weights must cover every subject and satisfy the weighting
/// invariants.
pub fn train_with_weight_override(
    dataset: &LabeledDataset,
    config: &TrainConfig,
    weight_override: Option<&SubjectWeights>,
) -> Result<TrainOutput> {
    config.validate(dataset)?;
    let mut model =
        AutoencoderClassifier::build(dataset.dim(), dataset.n_classes(), &config.arch, config.seed)?;

    let weighted = config.loss_mode == LossMode::WassersteinWeighted;
    let mut weights = match (weighted, weight_override) {
        (false, None) => SubjectWeights::group_only(dataset.subjects()),
        (false, Some(_)) => {
            return Err(Error::Config(
                "weight overrides only apply to weighted mode; baseline always uses \
                 group-only weights"
                    .into(),
            ))
        }
        (true, Some(w)) => {
            w.validate()?;
            for subject in dataset.subjects() {
                if w.lambda_for(&subject).is_none() {
                    return Err(Error::Config(format!(
                        "weight override is missing subject {subject}"
                    )));
                }
            }
            w.clone()
        }
        (true, None) => compute_weights(
            dataset,
            &config.weighting,
            Some(&model.encoder),
            config.seed,
        )?,
    };

    let mut opt_encoder =
        OptimizerState::new(&model.encoder, config.optimizer, config.learning_rate)?;
    let mut opt_decoder =
        OptimizerState::new(&model.decoder, config.optimizer, config.learning_rate)?;
    let mut opt_classifier =
        OptimizerState::new(&model.classifier, config.optimizer, config.learning_rate)?;

    let refresh_latent_weights = weighted
        && weight_override.is_none()
        && config.weighting.alpha.space == AlphaSpace::Latent
        && config.weighting.refresh_interval > 0;

    let mut shuffle_rng = stream_rng(config.seed, Stream::Shuffle);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if refresh_latent_weights && epoch > 0 && epoch % config.weighting.refresh_interval == 0 {
            weights = compute_weights(
                dataset,
                &config.weighting,
                Some(&model.encoder),
                config.seed,
            )?;
        }

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_recon = 0.0;
        let mut epoch_group = 0.0;
        let mut epoch_subject: BTreeMap<String, f64> = BTreeMap::new();
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let located = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!(
                    "epoch {epoch}, batch {batch_index}: {msg}"
                )),
                other => other,
            };
            let (breakdown, grads) =
                composite_loss(&model, dataset, chunk, &weights, config.recon_weight)
                    .map_err(located)?;
            opt_encoder
                .step(&mut model.encoder, &grads.encoder)
                .map_err(located)?;
            opt_decoder
                .step(&mut model.decoder, &grads.decoder)
                .map_err(located)?;
            opt_classifier
                .step(&mut model.classifier, &grads.classifier)
                .map_err(located)?;

            let frac = chunk.len() as f64 / dataset.len() as f64;
            epoch_recon += breakdown.reconstruction * frac;
            epoch_group += breakdown.group_ce * frac;
            for (subject, term) in breakdown.per_subject_ce {
                *epoch_subject.entry(subject).or_insert(0.0) += term * frac;
            }
        }
        let epoch_subject_total: f64 = epoch_subject.values().sum();
        history.push(EpochStats {
            epoch,
            loss: CompositeLossBreakdown {
                reconstruction: epoch_recon,
                group_ce: epoch_group,
                per_subject_ce: epoch_subject,
                subject_ce_total: epoch_subject_total,
                total: config.recon_weight * epoch_recon + epoch_group + epoch_subject_total,
            },
        });
    }

    Ok(TrainOutput {
        model,
        history,
        weights,
    })
}

/// Current checkpoint file layout version.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Everything needed to resume encoding (and further evaluation) exactly:
/// the model, the training configuration, the subject weights in effect,
/// and the feature normaliser fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: AutoencoderClassifier,
    pub train_config: TrainConfig,
    pub weights: SubjectWeights,
    pub normalizer: Option<NormalizationStats>,
}

/// Writes a checkpoint as pretty JSON (full float precision).
pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(checkpoint)
        .map_err(|e| Error::Internal(format!("checkpoint serialisation failed: {e}")))?;
    std::fs::write(path, json.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a checkpoint written by [`save_checkpoint`], validating the schema
/// version and model invariants.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let checkpoint: Checkpoint = serde_json::from_str(&raw).map_err(|e| {
        Error::Data(format!(
            "{}: not a valid checkpoint: {e}",
            path.display()
        ))
    })?;
    if checkpoint.schema_version > CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "{}: checkpoint schema version {} is newer than supported {}",
            path.display(),
            checkpoint.schema_version,
            CHECKPOINT_SCHEMA_VERSION
        )));
    }
    checkpoint.model.validate()?;
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, Sample, SyntheticConfig};
    use crate::weighting::{SubjectWeight, WeightMode};

    fn small_dataset() -> LabeledDataset {
        synth_generate(&SyntheticConfig {
            subjects: 3,
            classes: 2,
            dim: 4,
            samples_per_class: 6,
            class_separation: 2.0,
            subject_shift: 0.5,
            noise_sigma: 0.3,
            outlier_multipliers: vec![],
            seed: 21,
        })
        .unwrap()
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            encoder_hidden: vec![6],
            latent_dim: 3,
            classifier_hidden: vec![4],
        }
    }

    fn degenerate_weights(ds: &LabeledDataset) -> SubjectWeights {
        SubjectWeights::group_only(ds.subjects())
    }

    #[test]
    fn build_is_deterministic_and_validates() {
        let a = AutoencoderClassifier::build(4, 2, &small_arch(), 3).unwrap();
        let b = AutoencoderClassifier::build(4, 2, &small_arch(), 3).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.input_dim(), 4);
        assert_eq!(a.n_classes(), 2);
        assert_eq!(a.decoder.output_dim(), 4);
        assert!(AutoencoderClassifier::build(0, 2, &small_arch(), 3).is_err());
        let bad_arch = ArchConfig {
            latent_dim: 0,
            ..small_arch()
        };
        assert!(AutoencoderClassifier::build(4, 2, &bad_arch, 3).is_err());
    }

    #[test]
    fn encode_identity_single_layer() {
        // Hand-built identity encoder: latents must equal inputs.
        let identity = MlpParams {
            layers: vec![crate::nn::DenseLayer {
                weights: Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: vec![0.0, 0.0],
                activation: Activation::Linear,
            }],
            init_seed: 0,
        };
        let model = AutoencoderClassifier {
            encoder: identity.clone(),
            decoder: identity.clone(),
            classifier: MlpParams {
                layers: vec![crate::nn::DenseLayer {
                    weights: Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                    bias: vec![0.0, 0.0],
                    activation: Activation::Softmax,
                }],
                init_seed: 0,
            },
            latent_dim: 2,
        };
        let x = Tensor2::new(2, 2, vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        assert_eq!(model.encode(&x).unwrap(), x);
    }

    #[test]
    fn encoding_has_no_batch_coupling() {
        let ds = small_dataset();
        let model = AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 7)
            .unwrap();
        let features = ds.features_tensor();
        let batched = model.encode(&features).unwrap();
        for r in 0..3 {
            let single = model
                .encode(&features.gather_rows(&[r]).unwrap())
                .unwrap();
            for (a, b) in single.row(0).iter().zip(batched.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composite_loss_with_degenerate_weights_is_plain_mse_plus_ce() {
        let ds = small_dataset();
        let model = AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 1)
            .unwrap();
        let indices: Vec<usize> = (0..ds.len()).collect();
        let (breakdown, _) =
            composite_loss(&model, &ds, &indices, &degenerate_weights(&ds), 1.5).unwrap();

        let features = ds.features_tensor();
        let latent = model.encode(&features).unwrap();
        let (recon, _) = forward(&model.decoder, &latent).unwrap();
        let (expected_mse, _) = mse_loss(&recon, &features).unwrap();
        let probs = model.predict_probs(&features).unwrap();
        let per = cross_entropy_per_sample(&probs, &ds.one_hot_labels()).unwrap();
        let expected_ce = per.iter().sum::<f64>() / ds.len() as f64;

        assert!((breakdown.reconstruction - expected_mse).abs() < 1e-12);
        assert!((breakdown.group_ce - expected_ce).abs() < 1e-12);
        assert_eq!(breakdown.subject_ce_total, 0.0);
        assert!(
            (breakdown.total - (1.5 * expected_mse + expected_ce)).abs() < 1e-9,
            "additivity"
        );
    }

    #[test]
    fn single_subject_batch_with_unit_subject_weight_reproduces_mean_ce() {
        let ds = small_dataset();
        let model = AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 2)
            .unwrap();
        // lambda_g = 0, lambda for one subject = 1.
        let mut weights = degenerate_weights(&ds);
        weights.lambda_group = 0.0;
        weights
            .subjects
            .insert("s000".into(), SubjectWeight { alpha: 0.0, lambda: 1.0 });
        let rows = ds.subject_indices()["s000"].clone();
        let (breakdown, _) = composite_loss(&model, &ds, &rows, &weights, 1.0).unwrap();

        let batch = ds.gather(&rows).unwrap();
        let probs = model.predict_probs(&batch.features_tensor()).unwrap();
        let per = cross_entropy_per_sample(&probs, &batch.one_hot_labels()).unwrap();
        let mean_ce = per.iter().sum::<f64>() / per.len() as f64;
        assert!((breakdown.subject_ce_total - mean_ce).abs() < 1e-12);
        assert_eq!(breakdown.group_ce, 0.0);
    }

    #[test]
    fn composite_loss_is_permutation_invariant_on_full_batches() {
        let ds = small_dataset();
        let model = AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 3)
            .unwrap();
        let weights = crate::weighting::compute_lambdas(
            &[("s000", 2.0), ("s001", 1.0), ("s002", 3.0)]
                .iter()
                .map(|(s, a)| (s.to_string(), *a))
                .collect(),
            WeightMode::Budget,
            Some(0.5),
        )
        .unwrap();
        let forward_order: Vec<usize> = (0..ds.len()).collect();
        let mut reversed = forward_order.clone();
        reversed.reverse();
        let (a, _) = composite_loss(&model, &ds, &forward_order, &weights, 1.0).unwrap();
        let (b, _) = composite_loss(&model, &ds, &reversed, &weights, 1.0).unwrap();
        assert!((a.total - b.total).abs() < 1e-9);
        assert!((a.subject_ce_total - b.subject_ce_total).abs() < 1e-9);
        for (subject, term) in &a.per_subject_ce {
            assert!((term - b.per_subject_ce[subject]).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_loss_rejects_unknown_subjects_and_bad_weights() {
        let ds = small_dataset();
        let model = AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 4)
            .unwrap();
        let mut weights = degenerate_weights(&ds);
        weights.subjects.remove("s001");
        let err =
            composite_loss(&model, &ds, &[0, 1, 20], &weights, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("s001"), "{err}");

        let ok = degenerate_weights(&ds);
        assert!(composite_loss(&model, &ds, &[], &ok, 1.0).is_err());
        assert!(composite_loss(&model, &ds, &[0], &ok, 0.0).is_err());
        assert!(composite_loss(&model, &ds, &[0], &ok, -1.0).is_err());
    }

    #[test]
    fn classifier_term_scales_linearly_in_the_weights() {
        let ds = small_dataset();
        let model = AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 5)
            .unwrap();
        let indices: Vec<usize> = (0..ds.len()).collect();
        let mut weights = degenerate_weights(&ds);
        weights.lambda_group = 0.3;
        for w in weights.subjects.values_mut() {
            w.lambda = 0.1;
        }
        let (one, grads_one) = composite_loss(&model, &ds, &indices, &weights, 1.0).unwrap();

        let mut doubled = weights.clone();
        doubled.lambda_group *= 2.0;
        for w in doubled.subjects.values_mut() {
            w.lambda *= 2.0;
        }
        let (two, grads_two) = composite_loss(&model, &ds, &indices, &doubled, 1.0).unwrap();

        let classifier_one = one.group_ce + one.subject_ce_total;
        let classifier_two = two.group_ce + two.subject_ce_total;
        assert!((classifier_two - 2.0 * classifier_one).abs() < 1e-12);
        // Reconstruction is untouched; classifier gradients double.
        assert_eq!(one.reconstruction, two.reconstruction);
        for (a, b) in grads_one
            .classifier
            .layers
            .iter()
            .zip(&grads_two.classifier.layers)
        {
            for (x, y) in a.d_weights.data().iter().zip(b.d_weights.data()) {
                assert!((y - 2.0 * x).abs() < 1e-12);
            }
        }
    }

    /// Central finite differences over all three parameter groups for the
    /// full weighted composite loss.
    #[test]
    fn composite_gradients_match_finite_differences() {
        let ds = small_dataset();
        let model = AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 6)
            .unwrap();
        let weights = crate::weighting::compute_lambdas(
            &[("s000", 1.0), ("s001", 2.5), ("s002", 0.5)]
                .iter()
                .map(|(s, a)| (s.to_string(), *a))
                .collect(),
            WeightMode::Budget,
            Some(0.6),
        )
        .unwrap();
        let indices: Vec<usize> = (0..ds.len()).collect();
        let w_r = 1.25;

        let loss_of = |m: &AutoencoderClassifier| -> f64 {
            composite_loss(m, &ds, &indices, &weights, w_r).unwrap().0.total
        };
        let (_, grads) = composite_loss(&model, &ds, &indices, &weights, w_r).unwrap();

        let h = 1e-6;
        type NetProbe<'a> = (
            &'a str,
            fn(&AutoencoderClassifier) -> &MlpParams,
            fn(&mut AutoencoderClassifier) -> &mut MlpParams,
            &'a MlpGrads,
        );
        let nets: [NetProbe; 3] = [
            ("encoder", |m| &m.encoder, |m| &mut m.encoder, &grads.encoder),
            ("decoder", |m| &m.decoder, |m| &mut m.decoder, &grads.decoder),
            (
                "classifier",
                |m| &m.classifier,
                |m| &mut m.classifier,
                &grads.classifier,
            ),
        ];
        for (name, get, get_mut, net_grads) in nets {
            for li in 0..get(&model).layers.len() {
                let count = get(&model).layers[li].weights.data().len();
                for wi in (0..count).step_by(5) {
                    let mut plus = model.clone();
                    get_mut(&mut plus).layers[li].weights.data_mut()[wi] += h;
                    let mut minus = model.clone();
                    get_mut(&mut minus).layers[li].weights.data_mut()[wi] -= h;
                    let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let analytic = net_grads.layers[li].d_weights.data()[wi];
                    let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                    assert!(
                        (numeric - analytic).abs() / denom < 1e-4,
                        "{name} layer {li} weight {wi}: analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let ds = small_dataset();
        let config = TrainConfig {
            epochs: 0,
            arch: small_arch(),
            loss_mode: LossMode::MseBaseline,
            seed: 11,
            ..Default::default()
        };
        let out = train(&ds, &config).unwrap();
        let fresh =
            AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 11).unwrap();
        assert_eq!(out.model, fresh);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let ds = small_dataset();
        let config = TrainConfig {
            epochs: 8,
            batch_size: 8,
            learning_rate: 5e-3,
            arch: small_arch(),
            loss_mode: LossMode::MseBaseline,
            seed: 13,
            ..Default::default()
        };
        let a = train(&ds, &config).unwrap();
        let b = train(&ds, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        let first = &a.history[0].loss;
        let last = &a.history[a.history.len() - 1].loss;
        assert!(
            last.total < first.total,
            "loss did not decrease: {} -> {}",
            first.total,
            last.total
        );
    }

    #[test]
    fn baseline_equals_weighted_with_degenerate_weights_bitwise() {
        let ds = small_dataset();
        let base_config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            arch: small_arch(),
            loss_mode: LossMode::MseBaseline,
            seed: 17,
            ..Default::default()
        };
        let weighted_config = TrainConfig {
            loss_mode: LossMode::WassersteinWeighted,
            ..base_config.clone()
        };
        let baseline = train(&ds, &base_config).unwrap();
        let degenerate = degenerate_weights(&ds);
        let weighted =
            train_with_weight_override(&ds, &weighted_config, Some(&degenerate)).unwrap();
        // Bit-identical parameters, not merely close.
        assert_eq!(baseline.model, weighted.model);
    }

    #[test]
    fn weighted_training_gives_outlier_subject_lowest_lambda() {
        let ds = synth_generate(&SyntheticConfig {
            subjects: 4,
            classes: 2,
            dim: 4,
            samples_per_class: 8,
            class_separation: 2.0,
            subject_shift: 0.5,
            noise_sigma: 0.2,
            outlier_multipliers: vec![(1, 8.0)],
            seed: 31,
        })
        .unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 16,
            arch: small_arch(),
            loss_mode: LossMode::WassersteinWeighted,
            seed: 19,
            ..Default::default()
        };
        let out = train(&ds, &config).unwrap();
        let lambdas: Vec<f64> = out.weights.subjects.values().map(|w| w.lambda).collect();
        let outlier = out.weights.subjects["s001"].lambda;
        let mut sorted = lambdas.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(
            outlier < median,
            "outlier lambda {outlier} not below median {median}"
        );
    }

    #[test]
    fn train_validates_config_and_override() {
        let ds = small_dataset();
        let bad_batch = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train(&ds, &bad_batch).is_err());

        let baseline = TrainConfig {
            epochs: 1,
            loss_mode: LossMode::MseBaseline,
            arch: small_arch(),
            ..Default::default()
        };
        let w = degenerate_weights(&ds);
        assert!(train_with_weight_override(&ds, &baseline, Some(&w)).is_err());

        let weighted = TrainConfig {
            epochs: 1,
            loss_mode: LossMode::WassersteinWeighted,
            arch: small_arch(),
            ..Default::default()
        };
        let mut missing = w.clone();
        missing.subjects.remove("s002");
        assert!(train_with_weight_override(&ds, &weighted, Some(&missing)).is_err());

        let single = LabeledDataset::new(vec![Sample {
            subject_id: "only".into(),
            label: 0,
            features: vec![0.0, 0.0, 0.0, 0.0],
        }])
        .unwrap();
        assert!(train(&single, &weighted).is_err());
    }

    #[test]
    fn non_finite_forward_aborts_with_numeric_error() {
        let ds = small_dataset();
        let mut model =
            AutoencoderClassifier::build(ds.dim(), ds.n_classes(), &small_arch(), 8).unwrap();
        for v in model.encoder.layers[0].weights.data_mut() {
            *v = 1e308;
        }
        let err = composite_loss(&model, &ds, &[0, 1], &degenerate_weights(&ds), 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn checkpoint_round_trip_resumes_encoding_exactly() {
        let ds = small_dataset();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            arch: small_arch(),
            loss_mode: LossMode::MseBaseline,
            seed: 23,
            ..Default::default()
        };
        let out = train(&ds, &config).unwrap();
        let stats = crate::data::fit_normalizer(&ds, "train:unit-test");
        let checkpoint = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: out.model.clone(),
            train_config: config,
            weights: out.weights.clone(),
            normalizer: Some(stats),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &checkpoint).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(checkpoint, loaded);
        let features = ds.features_tensor();
        assert_eq!(
            out.model.encode(&features).unwrap(),
            loaded.model.encode(&features).unwrap()
        );

        // Future schema versions are refused.
        let mut future = checkpoint.clone();
        future.schema_version = CHECKPOINT_SCHEMA_VERSION + 1;
        save_checkpoint(&path, &future).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn predict_labels_breaks_ties_toward_lowest_class() {
        // Uniform classifier: every class equally likely -> label 0.
        let model = AutoencoderClassifier {
            encoder: MlpParams {
                layers: vec![crate::nn::DenseLayer {
                    weights: Tensor2::new(2, 2, vec![0.0; 4]).unwrap(),
                    bias: vec![0.0, 0.0],
                    activation: Activation::Linear,
                }],
                init_seed: 0,
            },
            decoder: MlpParams {
                layers: vec![crate::nn::DenseLayer {
                    weights: Tensor2::new(2, 2, vec![0.0; 4]).unwrap(),
                    bias: vec![0.0, 0.0],
                    activation: Activation::Linear,
                }],
                init_seed: 0,
            },
            classifier: MlpParams {
                layers: vec![crate::nn::DenseLayer {
                    weights: Tensor2::new(2, 3, vec![0.0; 6]).unwrap(),
                    bias: vec![0.0; 3],
                    activation: Activation::Softmax,
                }],
                init_seed: 0,
            },
            latent_dim: 2,
        };
        let x = Tensor2::new(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        assert_eq!(model.predict_labels(&x).unwrap(), vec![0, 0]);
    }
}
