//! Evaluation: latent-space class-separation metrics, PCA projection, the
//! leave-one-subject-out (LOSO) harness, and paired baseline-vs-weighted
//! comparison.
//!
//! Every fold fits its feature normaliser on the training split only, trains
//! a fresh model, and reports accuracy on the held-out subject plus
//! separation metrics on train and test latents. Comparisons run the same
//! folds (asserted via split fingerprints) for both loss modes and express
//! differences as percent change per class pair, both per fold and averaged
//! over folds.

use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_normalizer, fit_normalizer, loso_splits, LabeledDataset, LosoFold, NormalizationStats,
};
use crate::error::{Error, Result};
use crate::model::{
    train_with_weight_override, LossMode, TrainConfig,
};
use crate::ot::euclidean_distance;
use crate::seeds::{stream_rng, Stream};
use crate::tensor::Tensor2;
use crate::weighting::SubjectWeights;

/// Class-separation metrics over one set of latents.
///
/// Distance matrices are `C x C` with `None` marking pairs involving an
/// empty class (undefined, never silently zero). Defined entries are
/// symmetric, non-negative, and zero on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Which split the latents came from ("train" or "test").
    pub split: String,
    pub n_classes: usize,
    pub class_counts: Vec<usize>,
    /// Mean latent per class; `None` for classes with no samples.
    pub centroids: Vec<Option<Vec<f64>>>,
    /// Euclidean distances between class centroids.
    pub centroid_distances: Vec<Vec<Option<f64>>>,
    /// Minimum Euclidean distance over sample pairs drawn from two classes.
    pub min_inter_class_distances: Vec<Vec<Option<f64>>>,
}

impl SeparationReport {
    /// Mean of the defined off-diagonal centroid distances (unordered
    /// pairs); `None` when no pair is defined.
    pub fn mean_centroid_distance(&self) -> Option<f64> {
        mean_upper_triangle(&self.centroid_distances)
    }

    /// Mean of the defined off-diagonal minimum inter-class distances.
    pub fn mean_min_inter_class_distance(&self) -> Option<f64> {
        mean_upper_triangle(&self.min_inter_class_distances)
    }
}

fn mean_upper_triangle(matrix: &[Vec<Option<f64>>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, row) in matrix.iter().enumerate() {
        for value in row.iter().skip(i + 1).flatten() {
            sum += value;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Computes [`SeparationReport`] metrics for `latents` labelled by `labels`.
///
/// Classes absent from `labels` yield `None` centroids and `None` distance
/// entries for every pair that involves them.
pub fn separation_metrics(
    latents: &Tensor2,
    labels: &[usize],
    n_classes: usize,
    split: &str,
) -> Result<SeparationReport> {
    if labels.len() != latents.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} latent rows",
            labels.len(),
            latents.rows()
        )));
    }
    if latents.rows() == 0 {
        return Err(Error::Config("separation metrics need at least one sample".into()));
    }
    if n_classes == 0 {
        return Err(Error::Config("separation metrics need at least one class".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    latents.ensure_finite("latents")?;

    let k = latents.cols();
    let mut rows_of_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (row, &label) in labels.iter().enumerate() {
        rows_of_class[label].push(row);
    }
    let class_counts: Vec<usize> = rows_of_class.iter().map(Vec::len).collect();

    let centroids: Vec<Option<Vec<f64>>> = rows_of_class
        .iter()
        .map(|rows| {
            (!rows.is_empty()).then(|| {
                let mut mean = vec![0.0; k];
                for &r in rows {
                    for (m, x) in mean.iter_mut().zip(latents.row(r)) {
                        *m += x;
                    }
                }
                for m in &mut mean {
                    *m /= rows.len() as f64;
                }
                mean
            })
        })
        .collect();

    let mut centroid_distances = vec![vec![None; n_classes]; n_classes];
    let mut min_distances = vec![vec![None; n_classes]; n_classes];
    for a in 0..n_classes {
        if class_counts[a] == 0 {
            continue;
        }
        centroid_distances[a][a] = Some(0.0);
        min_distances[a][a] = Some(0.0);
        for b in (a + 1)..n_classes {
            if class_counts[b] == 0 {
                continue;
            }
            let d = euclidean_distance(
                centroids[a].as_ref().unwrap(),
                centroids[b].as_ref().unwrap(),
            );
            centroid_distances[a][b] = Some(d);
            centroid_distances[b][a] = Some(d);

            let mut min = f64::INFINITY;
            for &ra in &rows_of_class[a] {
                for &rb in &rows_of_class[b] {
                    let d = euclidean_distance(latents.row(ra), latents.row(rb));
                    if d < min {
                        min = d;
                    }
                }
            }
            min_distances[a][b] = Some(min);
            min_distances[b][a] = Some(min);
        }
    }

    Ok(SeparationReport {
        split: split.to_string(),
        n_classes,
        class_counts,
        centroids,
        centroid_distances,
        min_inter_class_distances: min_distances,
    })
}

/// Principal-component projection of one latent set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// Centered data times basis, `n x components`.
    pub projected: Tensor2,
    /// Principal axes as columns, `k x components`, orthonormal; the first
    /// non-zero entry of each column is positive (deterministic signs).
    pub basis: Tensor2,
    /// Eigenvalues of the sample covariance (denominator `n - 1`) for the
    /// retained axes, non-increasing.
    pub explained_variances: Vec<f64>,
    /// Column means used for centering.
    pub mean: Vec<f64>,
}

/// Projects `data` onto its top `components` principal axes.
pub fn pca_project(data: &Tensor2, components: usize) -> Result<PcaProjection> {
    let (n, k) = data.shape();
    if n < 2 {
        return Err(Error::Config(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    if components == 0 || components > k {
        return Err(Error::Config(format!(
            "cannot keep {components} principal components of {k}-dimensional data"
        )));
    }
    data.ensure_finite("PCA input")?;

    let mean = data.column_means();
    let mut centered = data.clone();
    for r in 0..n {
        for (value, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *value -= m;
        }
    }

    // Sample covariance, k x k symmetric.
    let mut covariance = centered.matmul_transpose_a(&centered)?;
    covariance.scale_in_place(1.0 / (n - 1) as f64);

    let (eigenvalues, eigenvectors) = jacobi_eigen(&covariance)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));

    let mut basis = Tensor2::zeros(k, components);
    let mut explained = Vec::with_capacity(components);
    for (out_col, &src_col) in order.iter().take(components).enumerate() {
        // Covariance eigenvalues are >= 0 up to round-off.
        explained.push(eigenvalues[src_col].max(0.0));
        let mut column: Vec<f64> = (0..k).map(|r| eigenvectors.get(r, src_col)).collect();
        if let Some(first) = column.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                for v in &mut column {
                    *v = -*v;
                }
            }
        }
        for (r, v) in column.iter().enumerate() {
            basis.set(r, out_col, *v);
        }
    }

    let projected = centered.matmul(&basis)?;
    Ok(PcaProjection {
        projected,
        basis,
        explained_variances: explained,
        mean,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and the orthogonal matrix whose columns are eigenvectors
/// (unordered).
fn jacobi_eigen(matrix: &Tensor2) -> Result<(Vec<f64>, Tensor2)> {
    let n = matrix.rows();
    if matrix.cols() != n {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {n}x{}",
            matrix.cols()
        )));
    }
    for r in 0..n {
        for c in (r + 1)..n {
            if (matrix.get(r, c) - matrix.get(c, r)).abs() > 1e-9 * (1.0 + matrix.get(r, c).abs())
            {
                return Err(Error::Numeric(format!(
                    "eigendecomposition input not symmetric at ({r}, {c})"
                )));
            }
        }
    }

    let mut a = matrix.clone();
    let mut v = Tensor2::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }

    let scale: f64 = (0..n).map(|i| a.get(i, i).abs()).fold(1.0, f64::max);
    let tolerance = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= tolerance {
            let eigenvalues = (0..n).map(|i| a.get(i, i)).collect();
            return Ok((eigenvalues, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= tolerance / (n * n) as f64 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q of the working matrix.
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for i in 0..n {
                    let api = a.get(p, i);
                    let aqi = a.get(q, i);
                    a.set(p, i, c * api - s * aqi);
                    a.set(q, i, s * api + c * aqi);
                }
                // Accumulate the rotation into the eigenvector matrix.
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    Err(Error::Numeric(
        "eigendecomposition did not converge in 100 sweeps".into(),
    ))
}

/// Writes projected points for external plotting. Columns are
/// `pc1..pc{components}`, then `label`, `subject_id`, `split`.
pub fn write_projection_csv(
    path: impl AsRef<Path>,
    projected: &Tensor2,
    labels: &[usize],
    subject_ids: &[String],
    splits: &[String],
) -> Result<()> {
    let n = projected.rows();
    if labels.len() != n || subject_ids.len() != n || splits.len() != n {
        return Err(Error::Shape(format!(
            "projection CSV needs equal-length columns: {n} rows, {} labels, {} subjects, \
             {} splits",
            labels.len(),
            subject_ids.len(),
            splits.len()
        )));
    }
    let path = path.as_ref();
    let io_err = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(source),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let mut header: Vec<String> = (1..=projected.cols()).map(|i| format!("pc{i}")).collect();
    header.extend(["label".into(), "subject_id".into(), "split".into()]);
    let write_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(source),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    };
    writer.write_record(&header).map_err(write_err)?;
    for r in 0..n {
        let mut record: Vec<String> = projected.row(r).iter().map(|v| v.to_string()).collect();
        record.push(labels[r].to_string());
        record.push(subject_ids[r].clone());
        record.push(splits[r].clone());
        writer.write_record(&record).map_err(write_err)?;
    }
    writer.flush().map_err(io_err)
}

/// One LOSO fold's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    /// Fraction of the held-out subject's samples classified correctly.
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_separation: SeparationReport,
    pub test_separation: SeparationReport,
    /// Subject weights in effect at the end of training.
    pub weights: SubjectWeights,
    /// Exact configuration this fold trained with (seed is fold-specific).
    pub config: TrainConfig,
    /// Feature normaliser fitted on this fold's training split only.
    pub normalizer: NormalizationStats,
    /// Total composite loss of the last training epoch, if any epochs ran.
    pub final_train_loss: Option<f64>,
}

/// All folds of one LOSO run plus accuracy aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoRun {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation of fold accuracies (0 for a single fold).
    pub accuracy_std: f64,
    /// Hash of the fold membership (held-out subject plus train/test row
    /// indices per fold); two runs with equal fingerprints used identical
    /// splits.
    pub split_fingerprint: String,
}

/// Runs leave-one-subject-out evaluation: one fold per subject (optionally
/// capped to a seeded subset), each with its own derived seed, trained
/// independently and reported in sorted subject order.
pub fn run_loso(
    dataset: &LabeledDataset,
    config: &TrainConfig,
    fold_cap: Option<usize>,
) -> Result<LosoRun> {
    run_loso_with_weight_override(dataset, config, fold_cap, None)
}

/// [`run_loso`] with pinned subject weights for the training runs (weighted
/// mode only); used to compare estimation strategies without re-running the
/// transport step.
pub fn run_loso_with_weight_override(
    dataset: &LabeledDataset,
    config: &TrainConfig,
    fold_cap: Option<usize>,
    weight_override: Option<&SubjectWeights>,
) -> Result<LosoRun> {
    let folds = loso_splits(dataset, fold_cap, config.seed)?;
    let mut seed_rng = stream_rng(config.seed, Stream::FoldSeeds);
    let fold_seeds: Vec<u64> = folds.iter().map(|_| seed_rng.next_u64()).collect();

    let outcomes: Vec<(String, Result<FoldResult>)> = folds
        .par_iter()
        .zip(&fold_seeds)
        .map(|(fold, &fold_seed)| {
            let result = run_fold(dataset, fold, config, fold_seed, weight_override);
            (fold.held_out.clone(), result)
        })
        .collect();

    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    let mut first_error = None;
    for (held_out, outcome) in outcomes {
        match outcome {
            Ok(result) => results.push(result),
            Err(e) => {
                failures.push(format!("fold {held_out}: {e}"));
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(first) = first_error {
        let message = failures.join("; ");
        return Err(if failures.len() == 1 {
            with_message_like(&first, message)
        } else {
            with_message_like(&first, format!("{} folds failed: {message}", failures.len()))
        });
    }

    let accuracies: Vec<f64> = results.iter().map(|f| f.accuracy).collect();
    let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let accuracy_std = if accuracies.len() < 2 {
        0.0
    } else {
        let var = accuracies
            .iter()
            .map(|a| (a - mean_accuracy).powi(2))
            .sum::<f64>()
            / (accuracies.len() - 1) as f64;
        var.sqrt()
    };

    Ok(LosoRun {
        folds: results,
        mean_accuracy,
        accuracy_std,
        split_fingerprint: fingerprint_splits(&folds),
    })
}

/// Rebuilds an error with the same variant but a new message, so fold-level
/// aggregation preserves the caller-visible error category.
fn with_message_like(like: &Error, message: String) -> Error {
    match like {
        Error::Config(_) => Error::Config(message),
        Error::Shape(_) => Error::Shape(message),
        Error::Data(_) | Error::Io { .. } => Error::Data(message),
        Error::Numeric(_) => Error::Numeric(message),
        Error::Capacity(_) => Error::Capacity(message),
        Error::DegenerateDistances(_) => Error::DegenerateDistances(message),
        Error::Internal(_) => Error::Internal(message),
    }
}

/// FNV-1a over the fold membership (subject ids, labels, and feature bits
/// of every train/test row), rendered as 16 hex digits.
fn fingerprint_splits(folds: &[LosoFold]) -> String {
    fn eat(hash: &mut u64, bytes: &[u8]) {
        for &b in bytes {
            *hash ^= b as u64;
            *hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn eat_split(hash: &mut u64, split: &LabeledDataset) {
        for sample in split.samples() {
            eat(hash, sample.subject_id.as_bytes());
            eat(hash, &(sample.label as u64).to_le_bytes());
            for &f in &sample.features {
                eat(hash, &f.to_bits().to_le_bytes());
            }
        }
    }
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for fold in folds {
        eat(&mut hash, fold.held_out.as_bytes());
        eat(&mut hash, &[0xff]);
        eat_split(&mut hash, &fold.train);
        eat(&mut hash, &[0xfe]);
        eat_split(&mut hash, &fold.test);
        eat(&mut hash, &[0xfd]);
    }
    format!("{hash:016x}")
}

fn run_fold(
    dataset: &LabeledDataset,
    fold: &LosoFold,
    config: &TrainConfig,
    fold_seed: u64,
    weight_override: Option<&SubjectWeights>,
) -> Result<FoldResult> {
    let train_raw = &fold.train;
    let test_raw = &fold.test;

    let normalizer = fit_normalizer(train_raw, &format!("train-excluding:{}", fold.held_out));
    let train_ds = apply_normalizer(&normalizer, train_raw)?;
    let test_ds = apply_normalizer(&normalizer, test_raw)?;

    let fold_config = TrainConfig {
        seed: fold_seed,
        ..config.clone()
    };
    let out = train_with_weight_override(&train_ds, &fold_config, weight_override)?;

    let test_features = test_ds.features_tensor();
    let predictions = out.model.predict_labels(&test_features)?;
    let correct = predictions
        .iter()
        .zip(test_ds.labels())
        .filter(|(p, t)| **p == *t)
        .count();
    let accuracy = correct as f64 / test_ds.len() as f64;

    let train_latents = out.model.encode(&train_ds.features_tensor())?;
    let test_latents = out.model.encode(&test_features)?;
    let train_separation =
        separation_metrics(&train_latents, &train_ds.labels(), dataset.n_classes(), "train")?;
    let test_separation =
        separation_metrics(&test_latents, &test_ds.labels(), dataset.n_classes(), "test")?;

    Ok(FoldResult {
        held_out: fold.held_out.clone(),
        accuracy,
        n_train: train_ds.len(),
        n_test: test_ds.len(),
        train_separation,
        test_separation,
        weights: out.weights,
        config: fold_config,
        normalizer,
        final_train_loss: out.history.last().map(|e| e.loss.total),
    })
}

/// Per-fold paired percent changes, weighted versus baseline, per class
/// pair; `None` where either run's metric is undefined or the baseline is
/// not positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedFoldComparison {
    pub held_out: String,
    pub baseline_accuracy: f64,
    pub weighted_accuracy: f64,
    pub test_centroid_pct_change: Vec<Vec<Option<f64>>>,
    pub test_min_distance_pct_change: Vec<Vec<Option<f64>>>,
    pub train_centroid_pct_change: Vec<Vec<Option<f64>>>,
    pub train_min_distance_pct_change: Vec<Vec<Option<f64>>>,
}

/// Percent changes averaged across folds: per class pair, and collapsed to
/// scalars over all defined (fold, unordered pair) combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanComparison {
    pub test_centroid_pct_change: Vec<Vec<Option<f64>>>,
    pub test_min_distance_pct_change: Vec<Vec<Option<f64>>>,
    pub train_centroid_pct_change: Vec<Vec<Option<f64>>>,
    pub train_min_distance_pct_change: Vec<Vec<Option<f64>>>,
    pub mean_test_centroid_pct_change: Option<f64>,
    pub mean_test_min_distance_pct_change: Option<f64>,
    pub mean_train_centroid_pct_change: Option<f64>,
    pub mean_train_min_distance_pct_change: Option<f64>,
}

/// Paired baseline-vs-weighted LOSO comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_config: TrainConfig,
    pub weighted_config: TrainConfig,
    pub baseline: LosoRun,
    pub weighted: LosoRun,
    pub per_fold: Vec<PairedFoldComparison>,
    pub mean_over_folds: MeanComparison,
    /// `100 * (weighted_mean - baseline_mean) / baseline_mean` accuracy,
    /// when the baseline mean is positive.
    pub accuracy_pct_change: Option<f64>,
    /// Shared fold fingerprint (equal for both runs by construction).
    pub split_fingerprint: String,
}

fn pct_change(baseline: Option<f64>, weighted: Option<f64>) -> Option<f64> {
    match (baseline, weighted) {
        (Some(b), Some(w)) if b > 0.0 => Some(100.0 * (w - b) / b),
        _ => None,
    }
}

fn pct_change_matrix(
    baseline: &[Vec<Option<f64>>],
    weighted: &[Vec<Option<f64>>],
) -> Vec<Vec<Option<f64>>> {
    baseline
        .iter()
        .zip(weighted)
        .map(|(brow, wrow)| {
            brow.iter()
                .zip(wrow)
                .map(|(&b, &w)| pct_change(b, w))
                .collect()
        })
        .collect()
}

/// Entry-wise mean over matrices, skipping undefined entries.
fn mean_matrices(matrices: &[&Vec<Vec<Option<f64>>>], n: usize) -> Vec<Vec<Option<f64>>> {
    let mut out = vec![vec![None; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let values: Vec<f64> = matrices
                .iter()
                .filter_map(|m| m.get(i).and_then(|r| r.get(j)).copied().flatten())
                .collect();
            if !values.is_empty() {
                *cell = Some(values.iter().sum::<f64>() / values.len() as f64);
            }
        }
    }
    out
}

/// Mean over all defined upper-triangle entries of all matrices.
fn mean_over_folds_and_pairs(matrices: &[&Vec<Vec<Option<f64>>>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for matrix in matrices {
        for (i, row) in matrix.iter().enumerate() {
            for value in row.iter().skip(i + 1).flatten() {
                sum += value;
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Runs LOSO in baseline mode and in weighted mode over identical folds and
/// seeds, then reports paired percent changes.
pub fn compare_modes(
    dataset: &LabeledDataset,
    config: &TrainConfig,
    fold_cap: Option<usize>,
) -> Result<ComparisonReport> {
    compare_modes_with_weight_override(dataset, config, fold_cap, None)
}

/// [`compare_modes`] with pinned weights for the weighted arm (used to
/// verify the pairing itself: degenerate weights must yield zero change).
pub fn compare_modes_with_weight_override(
    dataset: &LabeledDataset,
    config: &TrainConfig,
    fold_cap: Option<usize>,
    weight_override: Option<&SubjectWeights>,
) -> Result<ComparisonReport> {
    let baseline_config = TrainConfig {
        loss_mode: LossMode::MseBaseline,
        ..config.clone()
    };
    let weighted_config = TrainConfig {
        loss_mode: LossMode::WassersteinWeighted,
        ..config.clone()
    };
    let baseline = run_loso(dataset, &baseline_config, fold_cap)?;
    let weighted =
        run_loso_with_weight_override(dataset, &weighted_config, fold_cap, weight_override)?;
    if baseline.split_fingerprint != weighted.split_fingerprint {
        return Err(Error::Internal(format!(
            "paired runs used different folds: {} vs {}",
            baseline.split_fingerprint, weighted.split_fingerprint
        )));
    }

    let n = dataset.n_classes();
    let mut per_fold = Vec::with_capacity(baseline.folds.len());
    for (b, w) in baseline.folds.iter().zip(&weighted.folds) {
        if b.held_out != w.held_out {
            return Err(Error::Internal(format!(
                "fold order diverged: {} vs {}",
                b.held_out, w.held_out
            )));
        }
        per_fold.push(PairedFoldComparison {
            held_out: b.held_out.clone(),
            baseline_accuracy: b.accuracy,
            weighted_accuracy: w.accuracy,
            test_centroid_pct_change: pct_change_matrix(
                &b.test_separation.centroid_distances,
                &w.test_separation.centroid_distances,
            ),
            test_min_distance_pct_change: pct_change_matrix(
                &b.test_separation.min_inter_class_distances,
                &w.test_separation.min_inter_class_distances,
            ),
            train_centroid_pct_change: pct_change_matrix(
                &b.train_separation.centroid_distances,
                &w.train_separation.centroid_distances,
            ),
            train_min_distance_pct_change: pct_change_matrix(
                &b.train_separation.min_inter_class_distances,
                &w.train_separation.min_inter_class_distances,
            ),
        });
    }

    let collect = |pick: fn(&PairedFoldComparison) -> &Vec<Vec<Option<f64>>>| -> Vec<&Vec<Vec<Option<f64>>>> {
        per_fold.iter().map(pick).collect()
    };
    let test_centroid = collect(|f| &f.test_centroid_pct_change);
    let test_min = collect(|f| &f.test_min_distance_pct_change);
    let train_centroid = collect(|f| &f.train_centroid_pct_change);
    let train_min = collect(|f| &f.train_min_distance_pct_change);

    let mean_over_folds = MeanComparison {
        test_centroid_pct_change: mean_matrices(&test_centroid, n),
        test_min_distance_pct_change: mean_matrices(&test_min, n),
        train_centroid_pct_change: mean_matrices(&train_centroid, n),
        train_min_distance_pct_change: mean_matrices(&train_min, n),
        mean_test_centroid_pct_change: mean_over_folds_and_pairs(&test_centroid),
        mean_test_min_distance_pct_change: mean_over_folds_and_pairs(&test_min),
        mean_train_centroid_pct_change: mean_over_folds_and_pairs(&train_centroid),
        mean_train_min_distance_pct_change: mean_over_folds_and_pairs(&train_min),
    };

    let accuracy_pct_change = pct_change(
        Some(baseline.mean_accuracy),
        Some(weighted.mean_accuracy),
    );
    let split_fingerprint = baseline.split_fingerprint.clone();
    Ok(ComparisonReport {
        baseline_config,
        weighted_config,
        baseline,
        weighted,
        per_fold,
        mean_over_folds,
        accuracy_pct_change,
        split_fingerprint,
    })
}
