//! Labelled multi-subject datasets.
//!
//! A dataset is a flat list of samples, each carrying an opaque subject id,
//! a class label, and a fixed-width feature vector. This module covers CSV
//! ingestion/export, z-score normalisation (fit on training data only),
//! leave-one-subject-out splitting, and a synthetic generator with
//! controllable per-subject distribution shift.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::seeds::{stream_rng, Stream};
use crate::tensor::Tensor2;

/// Standard deviations below this floor are clamped before normalising, so
/// constant features map to zero instead of dividing by ~0.
pub const STD_FLOOR: f64 = 1e-8;

/// One observation: who it came from, its class, and its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub subject_id: String,
    pub label: usize,
    pub features: Vec<f64>,
}

/// An immutable collection of samples with a uniform feature width and a
/// fixed class count. The class count is dataset-level state: a subset (for
/// example one LOSO fold's test split) can lack samples of some class while
/// still being a dataset "over C classes".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    dim: usize,
    n_classes: usize,
}

impl LabeledDataset {
    /// Builds a dataset from samples, inferring the feature width from the
    /// first sample and the class count as `max label + 1`.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let n_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
        Self::from_parts(samples, dim, n_classes)
    }

    /// Builds a dataset with an explicit feature width and class count, used
    /// when deriving subsets that must keep the parent's class space.
    pub fn from_parts(samples: Vec<Sample>, dim: usize, n_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if dim == 0 {
            return Err(Error::Data("dataset has zero feature dimensions".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.subject_id.is_empty() {
                return Err(Error::Data(format!("sample {i} has an empty subject id")));
            }
            if s.features.len() != dim {
                return Err(Error::Data(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label >= n_classes {
                return Err(Error::Data(format!(
                    "sample {i} has label {} outside [0, {n_classes})",
                    s.label
                )));
            }
            ensure_finite(&s.features, &format!("sample {i} features"))?;
        }
        Ok(Self {
            samples,
            dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature width `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Class count `C`; labels lie in `[0, C)`.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Sorted list of distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.samples.iter().map(|s| s.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects().len()
    }

    /// Sample indices per subject, keyed in sorted subject order.
    pub fn subject_indices(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.subject_id.clone()).or_default().push(i);
        }
        map
    }

    /// All feature vectors as an `n x d` tensor, in sample order.
    pub fn features_tensor(&self) -> Tensor2 {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for s in &self.samples {
            data.extend_from_slice(&s.features);
        }
        Tensor2::new(self.len(), self.dim, data)
            .expect("dataset invariants guarantee a valid tensor")
    }

    /// Labels in sample order.
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Labels as one-hot rows (`n x C`).
    pub fn one_hot_labels(&self) -> Tensor2 {
        let mut t = Tensor2::zeros(self.len(), self.n_classes);
        for (i, s) in self.samples.iter().enumerate() {
            t.set(i, s.label, 1.0);
        }
        t
    }

    /// Subject ids in sample order.
    pub fn subject_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.subject_id.as_str()).collect()
    }

    /// New dataset keeping only the rows in `indices` (in order), preserving
    /// the parent's feature width and class count.
    pub fn gather(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.samples.get(i).ok_or_else(|| {
                Error::Data(format!("row index {i} out of bounds for {} samples", self.len()))
            })?;
            samples.push(s.clone());
        }
        Self::from_parts(samples, self.dim, self.n_classes)
    }
}

/// Loads a dataset from a CSV file with header `subject_id,label,f0,...,f{d-1}`.
///
/// Errors carry 1-based line numbers. Labels must be non-negative base-10
/// integers; features must be finite decimal reals; every row must have the
/// header's width.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: display.clone(),
                source,
            },
            other => Error::Data(format!("{display}: {other:?}")),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{display}: cannot read header: {e}")))?
        .clone();
    if headers.len() < 3 || headers.get(0) != Some("subject_id") || headers.get(1) != Some("label")
    {
        return Err(Error::Data(format!(
            "{display}: header must start with `subject_id,label,f0,...`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let dim = headers.len() - 2;
    for (k, name) in headers.iter().skip(2).enumerate() {
        let expected = format!("f{k}");
        if name != expected {
            return Err(Error::Data(format!(
                "{display}: feature column {} is named `{name}`, expected `{expected}`",
                k + 2
            )));
        }
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{display}: {e}")))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(samples.len() as u64 + 2);
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{display}: line {line}: {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let subject_id = record.get(0).unwrap_or("").to_string();
        if subject_id.is_empty() {
            return Err(Error::Data(format!(
                "{display}: line {line}: empty subject_id"
            )));
        }
        let label_raw = record.get(1).unwrap_or("");
        let label: usize = label_raw.parse().map_err(|_| {
            Error::Data(format!(
                "{display}: line {line}: label `{label_raw}` is not a non-negative integer"
            ))
        })?;
        let mut features = Vec::with_capacity(dim);
        for k in 0..dim {
            let raw = record.get(k + 2).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "{display}: line {line}: feature f{k} `{raw}` is not a number"
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{display}: line {line}: feature f{k} is not finite"
                )));
            }
            features.push(v);
        }
        samples.push(Sample {
            subject_id,
            label,
            features,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{display}: no samples (header only)")));
    }
    LabeledDataset::new(samples)
}

/// Writes a dataset in the same CSV schema [`load_csv`] reads. Feature
/// values use the shortest representation that round-trips exactly, so
/// export → load reproduces the dataset bit-for-bit.
pub fn write_csv(path: impl AsRef<Path>, dataset: &LabeledDataset) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: display.clone(),
            source,
        },
        other => Error::Data(format!("{display}: {other:?}")),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["subject_id".to_string(), "label".to_string()];
    header.extend((0..dataset.dim()).map(|k| format!("f{k}")));
    writer.write_record(&header).map_err(io_err)?;
    for s in dataset.samples() {
        let mut record = vec![s.subject_id.clone(), s.label.to_string()];
        record.extend(s.features.iter().map(|v| format!("{v}")));
        writer.write_record(&record).map_err(io_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: display.clone(),
        source,
    })?;
    Ok(())
}

/// Per-feature z-score statistics, tagged with the split they were fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    /// Per-feature standard deviation, clamped below by [`STD_FLOOR`].
    pub std: Vec<f64>,
    /// Identifier of the split these stats were fitted on (e.g.
    /// `"train:s003"`); downstream consumers assert it names training data.
    pub fitted_on: String,
    /// Features whose raw standard deviation fell below the floor.
    pub clamped_features: Vec<usize>,
}

/// Fits per-feature mean/std on `dataset` (population variance). `split_tag`
/// records which split the stats came from, so harnesses can assert the
/// normaliser never saw test data.
pub fn fit_normalizer(dataset: &LabeledDataset, split_tag: &str) -> NormalizationStats {
    let n = dataset.len() as f64;
    let features = dataset.features_tensor();
    let mean = features.column_means();
    let mut var = vec![0.0; dataset.dim()];
    for r in 0..dataset.len() {
        for ((v, &x), &m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let mut clamped = Vec::new();
    let std = var
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let s = (v / n).sqrt();
            if s < STD_FLOOR {
                clamped.push(k);
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    NormalizationStats {
        mean,
        std,
        fitted_on: split_tag.to_string(),
        clamped_features: clamped,
    }
}

/// Applies z-scoring with previously fitted stats, returning a new dataset.
pub fn apply_normalizer(
    stats: &NormalizationStats,
    dataset: &LabeledDataset,
) -> Result<LabeledDataset> {
    if stats.mean.len() != dataset.dim() || stats.std.len() != dataset.dim() {
        return Err(Error::Shape(format!(
            "normalizer fitted on {} features, dataset has {}",
            stats.mean.len(),
            dataset.dim()
        )));
    }
    let samples = dataset
        .samples()
        .iter()
        .map(|s| {
            let features = s
                .features
                .iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((&x, &m), &sd)| (x - m) / sd)
                .collect();
            Sample {
                subject_id: s.subject_id.clone(),
                label: s.label,
                features,
            }
        })
        .collect();
    LabeledDataset::from_parts(samples, dataset.dim(), dataset.n_classes())
}

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoFold {
    pub held_out: String,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Builds leave-one-subject-out folds: one per subject, in sorted subject
/// order. With `fold_cap = Some(k)` and more than `k` subjects, `k` held-out
/// subjects are chosen by a seeded shuffle (then reported in sorted order).
/// Train and test splits of a fold are disjoint by construction and keep the
/// parent's feature width and class count.
pub fn loso_splits(
    dataset: &LabeledDataset,
    fold_cap: Option<usize>,
    seed: u64,
) -> Result<Vec<LosoFold>> {
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-subject-out needs at least 2 subjects, dataset has {}",
            subjects.len()
        )));
    }
    if fold_cap == Some(0) {
        return Err(Error::Config("fold cap must be at least 1".into()));
    }
    let mut held_out: Vec<String> = match fold_cap {
        Some(cap) if cap < subjects.len() => {
            let mut rng = stream_rng(seed, Stream::FoldSelection);
            let mut pool = subjects.clone();
            pool.shuffle(&mut rng);
            pool.truncate(cap);
            pool
        }
        _ => subjects.clone(),
    };
    held_out.sort();

    let by_subject = dataset.subject_indices();
    let mut folds = Vec::with_capacity(held_out.len());
    for subject in held_out {
        let test_idx = &by_subject[&subject];
        let train_idx: Vec<usize> = (0..dataset.len())
            .filter(|i| dataset.sample(*i).subject_id != subject)
            .collect();
        let test = dataset.gather(test_idx)?;
        let train = dataset.gather(&train_idx)?;
        folds.push(LosoFold {
            held_out: subject,
            train,
            test,
        });
    }
    Ok(folds)
}

/// Configuration for the synthetic multi-subject generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub classes: usize,
    pub dim: usize,
    /// Samples generated per subject per class.
    pub samples_per_class: usize,
    /// Distance scale between shared class means.
    pub class_separation: f64,
    /// Base magnitude of each subject's fixed offset from the shared means.
    pub subject_shift: f64,
    /// Per-subject multipliers on the subject shift, keyed by subject index.
    /// Subjects not listed use 1.0. Values above 1 create outlier subjects.
    pub outlier_multipliers: Vec<(usize, f64)>,
    /// Standard deviation of the isotropic Gaussian sample noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subjects: 6,
            classes: 3,
            dim: 12,
            samples_per_class: 30,
            class_separation: 3.0,
            subject_shift: 1.0,
            outlier_multipliers: Vec::new(),
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.classes == 0 || self.dim == 0 || self.samples_per_class == 0
        {
            return Err(Error::Config(
                "synthetic config: subjects, classes, dim, and samples per class must all be >= 1"
                    .into(),
            ));
        }
        for (name, v) in [
            ("class separation", self.class_separation),
            ("subject shift", self.subject_shift),
            ("noise sigma", self.noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "synthetic config: {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for &(idx, mult) in &self.outlier_multipliers {
            if idx >= self.subjects {
                return Err(Error::Config(format!(
                    "synthetic config: outlier multiplier names subject index {idx}, \
                     but there are only {} subjects",
                    self.subjects
                )));
            }
            if !mult.is_finite() || mult < 0.0 {
                return Err(Error::Config(format!(
                    "synthetic config: outlier multiplier must be finite and >= 0, got {mult}"
                )));
            }
        }
        Ok(())
    }

    /// Effective shift multiplier for subject `i` (1.0 unless overridden).
    pub fn multiplier(&self, subject_index: usize) -> f64 {
        self.outlier_multipliers
            .iter()
            .rev()
            .find(|(idx, _)| *idx == subject_index)
            .map(|&(_, m)| m)
            .unwrap_or(1.0)
    }
}

/// Shared mean of class `c`: `class_separation` along axis `c mod d`,
/// displaced by how many times the axis has wrapped so distinct classes
/// never share a mean.
fn class_mean(config: &SyntheticConfig, class: usize) -> Vec<f64> {
    let mut mean = vec![0.0; config.dim];
    let axis = class % config.dim;
    let wrap = (class / config.dim + 1) as f64;
    mean[axis] = config.class_separation * wrap;
    mean
}

/// Generates a synthetic dataset: for subject `i` and class `c`, samples are
/// `class_mean(c) + subject_offset(i) * multiplier(i) + noise`, where each
/// subject's offset is a fixed random unit direction scaled by the subject
/// shift, and noise is isotropic Gaussian. Deterministic in the seed;
/// subjects are named `s000`, `s001`, ...
pub fn synth_generate(config: &SyntheticConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Synthetic);

    // Fixed per-subject offset directions, drawn before any sample noise so
    // they depend only on the subject count.
    let mut offsets = Vec::with_capacity(config.subjects);
    for _ in 0..config.subjects {
        let mut dir = vec![0.0; config.dim];
        let mut norm = 0.0;
        for _ in 0..100 {
            for v in &mut dir {
                *v = StandardNormal.sample(&mut rng);
            }
            norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break;
            }
        }
        if norm <= 1e-12 {
            return Err(Error::Internal(
                "failed to draw a non-zero subject offset direction".into(),
            ));
        }
        for v in &mut dir {
            *v *= config.subject_shift / norm;
        }
        offsets.push(dir);
    }

    let mut samples = Vec::with_capacity(config.subjects * config.classes * config.samples_per_class);
    for (subject, offset) in offsets.iter().enumerate() {
        let subject_id = format!("s{subject:03}");
        let multiplier = config.multiplier(subject);
        for class in 0..config.classes {
            let mean = class_mean(config, class);
            for _ in 0..config.samples_per_class {
                let features: Vec<f64> = (0..config.dim)
                    .map(|k| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        mean[k] + offset[k] * multiplier + config.noise_sigma * noise
                    })
                    .collect();
                samples.push(Sample {
                    subject_id: subject_id.clone(),
                    label: class,
                    features,
                });
            }
        }
    }
    LabeledDataset::from_parts(samples, config.dim, config.classes)
}
