//! Subject loss weights from transport distances.
//!
//! Each subject `i` gets a distance `alpha_i` between its sample
//! distribution and the group distribution, then the distances are turned
//! into loss scales: a weight `lambda_i` per subject plus a group weight
//! `lambda_g`, with `lambda_g + sum(lambda_i) = 1`. Subjects far from the
//! group get smaller weights, damping their influence on the classifier.
//!
//! Two conversion modes exist because the literal rule
//! `lambda_i = 1 - alpha_i / sum(alpha)` fixes `sum(lambda_i) = S - 1`,
//! which together with the sum-to-one constraint forces
//! `lambda_g = 2 - S` — negative for more than two subjects and therefore
//! unusable as a loss scale:
//!
//! * [`WeightMode::Paper`] applies the rule literally and errors when the
//!   implied `lambda_g` is negative (it is consistent only for `S = 2`).
//! * [`WeightMode::Budget`] (the default) rescales the same values to sum
//!   to a budget `beta` in `(0, 1)` and sets `lambda_g = 1 - beta`,
//!   preserving the relative ordering exactly.
//!
//! [`WeightMode::GroupOnly`] is the degenerate configuration
//! (`lambda_g = 1`, all subject weights zero) used by baseline training; it
//! involves no transport computation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{forward, MlpParams};
use crate::ot::{emd_exact, sliced_wasserstein, EmpiricalDistribution};
use crate::seeds::{stream_rng, Stream};

/// How subject distances are converted into loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Literal rule `lambda_i = 1 - alpha_i / sum(alpha)` with
    /// `lambda_g = 1 - sum(lambda_i)`; errors when that is negative.
    Paper,
    /// Rescale the same values to sum to `beta`; `lambda_g = 1 - beta`.
    Budget,
    /// `lambda_g = 1`, all subject weights 0 — the unweighted baseline.
    GroupOnly,
}

/// Which feature space the subject distributions live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSpace {
    /// Distances over (normalised) input features, computed once.
    Input,
    /// Distances over encoder outputs, refreshable during training.
    Latent,
}

/// Transport distance estimator used for the subject-to-group distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AlphaEstimator {
    /// Sliced distance over seeded random projections (scales to any size).
    Sliced { projections: usize },
    /// Exact earth mover's distance (bounded support; see
    /// [`crate::ot::EMD_SUPPORT_CAP`]).
    Exact,
}

/// Configuration for [`compute_alphas`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaConfig {
    pub space: AlphaSpace,
    pub estimator: AlphaEstimator,
    /// When true, subject `i` is removed from the group distribution before
    /// measuring its distance. Default: the group pools every subject.
    pub group_excludes_self: bool,
    /// Maximum support points per distribution; larger sets are subsampled
    /// with a seeded draw. The default (256) keeps exact-mode instances
    /// within the solver's combined cap.
    pub max_support: usize,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self {
            space: AlphaSpace::Input,
            estimator: AlphaEstimator::Sliced { projections: 64 },
            group_excludes_self: false,
            max_support: 256,
        }
    }
}

/// Distance and weight for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectWeight {
    pub alpha: f64,
    pub lambda: f64,
}

/// Complete weighting of a training roster: one weight per subject plus the
/// group weight, tagged with how they were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectWeights {
    pub mode: WeightMode,
    /// Subject-weight budget; present in budget mode only.
    pub beta: Option<f64>,
    pub lambda_group: f64,
    pub subjects: BTreeMap<String, SubjectWeight>,
    /// True when every distance was zero and uniform subject weights were
    /// substituted (budget mode's documented fallback).
    pub uniform_fallback: bool,
}

impl SubjectWeights {
    /// The degenerate weighting used by baseline training: all classifier
    /// mass on the group term.
    pub fn group_only(roster: impl IntoIterator<Item = String>) -> Self {
        let subjects = roster
            .into_iter()
            .map(|id| {
                (
                    id,
                    SubjectWeight {
                        alpha: 0.0,
                        lambda: 0.0,
                    },
                )
            })
            .collect();
        Self {
            mode: WeightMode::GroupOnly,
            beta: None,
            lambda_group: 1.0,
            subjects,
            uniform_fallback: false,
        }
    }

    pub fn lambda_for(&self, subject: &str) -> Option<f64> {
        self.subjects.get(subject).map(|w| w.lambda)
    }

    /// `lambda_g + sum(lambda_i)`; 1 within 1e-9 for any valid weighting.
    pub fn weight_sum(&self) -> f64 {
        self.lambda_group + self.subjects.values().map(|w| w.lambda).sum::<f64>()
    }

    /// Checks the structural invariants: finite non-negative values and the
    /// sum-to-one rule.
    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::Config("subject weights cover no subjects".into()));
        }
        if !self.lambda_group.is_finite() || self.lambda_group < 0.0 {
            return Err(Error::Config(format!(
                "group weight must be finite and >= 0, got {}",
                self.lambda_group
            )));
        }
        for (id, w) in &self.subjects {
            if !w.alpha.is_finite() || w.alpha < 0.0 {
                return Err(Error::Config(format!(
                    "subject {id}: alpha must be finite and >= 0, got {}",
                    w.alpha
                )));
            }
            if !w.lambda.is_finite() || w.lambda < 0.0 {
                return Err(Error::Config(format!(
                    "subject {id}: lambda must be finite and >= 0, got {}",
                    w.lambda
                )));
            }
        }
        let sum = self.weight_sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "subject and group weights sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(())
    }
}

/// Computes each subject's transport distance to the group distribution over
/// the training data.
///
/// Subjects are processed in sorted-id order; sliced estimation shares one
/// seeded set of projection directions across subjects so their distances
/// are comparable. When `space` is latent, `encoder` maps features through
/// the current encoder first. Deterministic given `(dataset, config, seed)`.
pub fn compute_alphas(
    dataset: &LabeledDataset,
    config: &AlphaConfig,
    encoder: Option<&MlpParams>,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    if dataset.n_subjects() < 2 {
        return Err(Error::Config(format!(
            "subject weighting needs at least 2 subjects, dataset has {}",
            dataset.n_subjects()
        )));
    }
    if config.max_support == 0 {
        return Err(Error::Config("max support must be at least 1".into()));
    }
    if let AlphaEstimator::Sliced { projections: 0 } = config.estimator {
        return Err(Error::Config(
            "sliced estimator needs at least one projection".into(),
        ));
    }

    let features = match config.space {
        AlphaSpace::Input => dataset.features_tensor(),
        AlphaSpace::Latent => {
            let encoder = encoder.ok_or_else(|| {
                Error::Config(
                    "latent-space distances need an encoder, but none was provided".into(),
                )
            })?;
            let (latents, _) = forward(encoder, &dataset.features_tensor())?;
            latents
        }
    };

    let by_subject = dataset.subject_indices();
    let mut subsample_rng = stream_rng(seed, Stream::Subsample);
    let projection_seed = stream_rng(seed, Stream::Projections).next_u64();

    let subsample = |rng: &mut rand_chacha::ChaCha8Rng, idx: &[usize]| -> Vec<usize> {
        if idx.len() <= config.max_support {
            return idx.to_vec();
        }
        let mut pool = idx.to_vec();
        pool.shuffle(rng);
        pool.truncate(config.max_support);
        pool.sort_unstable();
        pool
    };

    // Shared group distribution for inclusion mode, subsampled once.
    let all_rows: Vec<usize> = (0..dataset.len()).collect();
    let shared_group = if config.group_excludes_self {
        None
    } else {
        let rows = subsample(&mut subsample_rng, &all_rows);
        Some(EmpiricalDistribution::uniform(features.gather_rows(&rows)?)?)
    };

    let mut alphas = BTreeMap::new();
    for (subject, idx) in &by_subject {
        if idx.is_empty() {
            return Err(Error::Data(format!("subject {subject} has no samples")));
        }
        let own_rows = subsample(&mut subsample_rng, idx);
        let own = EmpiricalDistribution::uniform(features.gather_rows(&own_rows)?)?;
        let group = match &shared_group {
            Some(g) => g.clone(),
            None => {
                let rest: Vec<usize> = (0..dataset.len())
                    .filter(|i| dataset.sample(*i).subject_id != *subject)
                    .collect();
                let rows = subsample(&mut subsample_rng, &rest);
                EmpiricalDistribution::uniform(features.gather_rows(&rows)?)?
            }
        };
        let alpha = match config.estimator {
            AlphaEstimator::Sliced { projections } => {
                sliced_wasserstein(&group, &own, projections, 1.0, projection_seed)?
            }
            AlphaEstimator::Exact => emd_exact(&group, &own)?.0,
        };
        alphas.insert(subject.clone(), alpha);
    }
    Ok(alphas)
}

/// Converts per-subject distances into loss weights.
///
/// Paper mode evaluates `lambda_i = 1 - alpha_i / sum(alpha)` and
/// `lambda_g = 1 - sum(lambda_i)` literally, erroring when the group weight
/// comes out negative (which it must for more than two subjects). Budget
/// mode rescales the same values to sum to `beta` (default 0.5) and sets
/// `lambda_g = 1 - beta`. Both are strictly order-reversing in `alpha`:
/// larger distance, smaller weight.
pub fn compute_lambdas(
    alphas: &BTreeMap<String, f64>,
    mode: WeightMode,
    beta: Option<f64>,
) -> Result<SubjectWeights> {
    if alphas.is_empty() {
        return Err(Error::Config("no subject distances provided".into()));
    }
    let values: Vec<f64> = alphas.values().copied().collect();
    ensure_finite(&values, "subject distances")?;
    for (id, a) in alphas {
        if *a < 0.0 {
            return Err(Error::Config(format!(
                "subject {id}: distance must be >= 0, got {a}"
            )));
        }
    }
    let sum: f64 = values.iter().sum();
    if sum == 0.0 {
        return Err(Error::DegenerateDistances(format!(
            "all {} subject distances are zero",
            alphas.len()
        )));
    }

    // The literal per-subject weights before any normalisation choice.
    let raw: Vec<(String, f64, f64)> = alphas
        .iter()
        .map(|(id, &a)| (id.clone(), a, 1.0 - a / sum))
        .collect();

    match mode {
        WeightMode::GroupOnly => Err(Error::Config(
            "group-only weights carry no distances; construct them with \
             SubjectWeights::group_only"
                .into(),
        )),
        WeightMode::Paper => {
            if beta.is_some() {
                return Err(Error::Config(
                    "a budget beta only applies to budget mode".into(),
                ));
            }
            let lambda_sum: f64 = raw.iter().map(|(_, _, l)| l).sum();
            let lambda_group = 1.0 - lambda_sum;
            if lambda_group < -1e-9 {
                return Err(Error::Config(format!(
                    "paper-mode weighting is inconsistent here: the per-subject rule fixes the \
                     weight sum at S - 1 = {lambda_sum:.6}, so the sum-to-one constraint forces \
                     a group weight of {lambda_group:.6} < 0; this mode only balances for 2 \
                     subjects — use budget mode for {} subjects",
                    raw.len()
                )));
            }
            let subjects = raw
                .into_iter()
                .map(|(id, alpha, lambda)| (id, SubjectWeight { alpha, lambda }))
                .collect();
            let weights = SubjectWeights {
                mode,
                beta: None,
                lambda_group: lambda_group.max(0.0),
                subjects,
                uniform_fallback: false,
            };
            weights.validate()?;
            Ok(weights)
        }
        WeightMode::Budget => {
            let beta = beta.unwrap_or(0.5);
            if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
                return Err(Error::Config(format!(
                    "budget beta must lie strictly between 0 and 1, got {beta}"
                )));
            }
            let lambda_sum: f64 = raw.iter().map(|(_, _, l)| l).sum();
            if lambda_sum <= 0.0 {
                // Only possible with a single subject (its raw weight is 0).
                return Err(Error::Config(
                    "budget weighting needs at least 2 subjects".into(),
                ));
            }
            let scale = beta / lambda_sum;
            let subjects = raw
                .into_iter()
                .map(|(id, alpha, lambda)| {
                    (
                        id,
                        SubjectWeight {
                            alpha,
                            lambda: lambda * scale,
                        },
                    )
                })
                .collect();
            let weights = SubjectWeights {
                mode,
                beta: Some(beta),
                lambda_group: 1.0 - beta,
                subjects,
                uniform_fallback: false,
            };
            weights.validate()?;
            Ok(weights)
        }
    }
}

/// Full weighting configuration used by training and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    pub mode: WeightMode,
    /// Subject-weight budget for budget mode; `None` uses 0.5.
    pub beta: Option<f64>,
    pub alpha: AlphaConfig,
    /// Epochs between distance recomputations when `alpha.space` is latent;
    /// 0 disables refreshing after the initial computation.
    pub refresh_interval: usize,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            mode: WeightMode::Budget,
            beta: None,
            alpha: AlphaConfig::default(),
            refresh_interval: 5,
        }
    }
}

/// Computes subject weights for a training split end to end: distances via
/// [`compute_alphas`], conversion via [`compute_lambdas`].
///
/// In budget mode, fully degenerate distances (every subject identical) fall
/// back to uniform subject weights `beta / S` with the fallback recorded on
/// the result; paper mode propagates the degeneracy as an error. GroupOnly
/// mode skips transport entirely.
pub fn compute_weights(
    dataset: &LabeledDataset,
    config: &WeightingConfig,
    encoder: Option<&MlpParams>,
    seed: u64,
) -> Result<SubjectWeights> {
    if config.mode == WeightMode::GroupOnly {
        return Ok(SubjectWeights::group_only(dataset.subjects()));
    }
    let alphas = compute_alphas(dataset, &config.alpha, encoder, seed)?;
    let beta = match config.mode {
        WeightMode::Budget => Some(config.beta.unwrap_or(0.5)),
        _ => config.beta,
    };
    match compute_lambdas(&alphas, config.mode, beta) {
        Ok(weights) => Ok(weights),
        Err(Error::DegenerateDistances(_)) if config.mode == WeightMode::Budget => {
            let beta = beta.expect("budget mode always has a beta here");
            if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
                return Err(Error::Config(format!(
                    "budget beta must lie strictly between 0 and 1, got {beta}"
                )));
            }
            let n = alphas.len() as f64;
            let subjects = alphas
                .keys()
                .map(|id| {
                    (
                        id.clone(),
                        SubjectWeight {
                            alpha: 0.0,
                            lambda: beta / n,
                        },
                    )
                })
                .collect();
            let weights = SubjectWeights {
                mode: WeightMode::Budget,
                beta: Some(beta),
                lambda_group: 1.0 - beta,
                subjects,
                uniform_fallback: true,
            };
            weights.validate()?;
            Ok(weights)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, SyntheticConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alpha_map(values: &[f64]) -> BTreeMap<String, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("s{i:03}"), v))
            .collect()
    }

    #[test]
    fn paper_mode_two_subjects_matches_worked_example() {
        let weights = compute_lambdas(&alpha_map(&[1.0, 3.0]), WeightMode::Paper, None).unwrap();
        assert!((weights.subjects["s000"].lambda - 0.75).abs() < 1e-12);
        assert!((weights.subjects["s001"].lambda - 0.25).abs() < 1e-12);
        assert!(weights.lambda_group.abs() < 1e-12);
        assert!((weights.weight_sum() - 1.0).abs() < 1e-9);

        // Symmetric distances give equal weights.
        let eq = compute_lambdas(&alpha_map(&[2.5, 2.5]), WeightMode::Paper, None).unwrap();
        assert!((eq.subjects["s000"].lambda - 0.5).abs() < 1e-12);
        assert!((eq.subjects["s001"].lambda - 0.5).abs() < 1e-12);
    }

    #[test]
    fn budget_mode_matches_worked_examples() {
        let two =
            compute_lambdas(&alpha_map(&[1.0, 3.0]), WeightMode::Budget, Some(0.5)).unwrap();
        assert!((two.subjects["s000"].lambda - 0.375).abs() < 1e-12);
        assert!((two.subjects["s001"].lambda - 0.125).abs() < 1e-12);
        assert_eq!(two.lambda_group, 0.5);

        let three =
            compute_lambdas(&alpha_map(&[1.0, 1.0, 2.0]), WeightMode::Budget, Some(0.5)).unwrap();
        assert!((three.subjects["s000"].lambda - 0.1875).abs() < 1e-12);
        assert!((three.subjects["s001"].lambda - 0.1875).abs() < 1e-12);
        assert!((three.subjects["s002"].lambda - 0.125).abs() < 1e-12);
        assert_eq!(three.lambda_group, 0.5);
        assert!((three.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn paper_mode_three_subjects_reports_the_negative_group_weight() {
        let err =
            compute_lambdas(&alpha_map(&[1.0, 1.0, 2.0]), WeightMode::Paper, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("-1.0"), "{msg}");
        assert!(msg.contains("budget"), "{msg}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn degenerate_distances_error_in_compute_lambdas() {
        let err = compute_lambdas(&alpha_map(&[0.0, 0.0]), WeightMode::Budget, Some(0.5))
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateDistances(_)));
        let err2 = compute_lambdas(&alpha_map(&[0.0, 0.0]), WeightMode::Paper, None).unwrap_err();
        assert!(matches!(err2, Error::DegenerateDistances(_)));
    }

    #[test]
    fn compute_lambdas_validates_inputs() {
        assert!(compute_lambdas(&BTreeMap::new(), WeightMode::Budget, None).is_err());
        assert!(compute_lambdas(&alpha_map(&[-1.0, 2.0]), WeightMode::Budget, None).is_err());
        assert!(
            compute_lambdas(&alpha_map(&[f64::NAN, 2.0]), WeightMode::Budget, None).is_err()
        );
        assert!(compute_lambdas(&alpha_map(&[1.0, 2.0]), WeightMode::Budget, Some(0.0)).is_err());
        assert!(compute_lambdas(&alpha_map(&[1.0, 2.0]), WeightMode::Budget, Some(1.0)).is_err());
        assert!(compute_lambdas(&alpha_map(&[1.0, 2.0]), WeightMode::Paper, Some(0.5)).is_err());
        assert!(compute_lambdas(&alpha_map(&[1.0, 2.0]), WeightMode::GroupOnly, None).is_err());
    }

    #[test]
    fn monotonicity_and_scale_invariance_hold_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.gen_range(2..12);
            let alphas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            if alphas.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let map = alpha_map(&alphas);
            let budget = compute_lambdas(&map, WeightMode::Budget, Some(0.4)).unwrap();
            let ids: Vec<&String> = map.keys().collect();
            for i in 0..ids.len() {
                for j in 0..ids.len() {
                    if map[ids[i]] < map[ids[j]] {
                        assert!(
                            budget.subjects[ids[i]].lambda > budget.subjects[ids[j]].lambda,
                            "monotonicity violated"
                        );
                    }
                }
            }
            // Budget bounds and exact group weight.
            for w in budget.subjects.values() {
                assert!(w.lambda >= 0.0 && w.lambda <= 0.4 + 1e-12);
            }
            assert_eq!(budget.lambda_group, 0.6);
            assert!((budget.weight_sum() - 1.0).abs() < 1e-9);

            // Scaling all distances leaves the weights unchanged.
            let scaled: Vec<f64> = alphas.iter().map(|a| a * 37.5).collect();
            let scaled_w =
                compute_lambdas(&alpha_map(&scaled), WeightMode::Budget, Some(0.4)).unwrap();
            for (id, w) in &budget.subjects {
                assert!((w.lambda - scaled_w.subjects[id].lambda).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn group_only_weights_are_degenerate_and_valid() {
        let w = SubjectWeights::group_only(vec!["a".into(), "b".into()]);
        assert_eq!(w.lambda_group, 1.0);
        assert_eq!(w.lambda_for("a"), Some(0.0));
        assert_eq!(w.lambda_for("missing"), None);
        w.validate().unwrap();
    }

    fn shifted_pair_dataset(shift: f64) -> LabeledDataset {
        // Subject a on a small grid, subject b the same grid translated.
        let mut samples = Vec::new();
        for k in 0..6 {
            let x = k as f64 * 0.5;
            samples.push(Sample {
                subject_id: "a".into(),
                label: 0,
                features: vec![x, -x],
            });
            samples.push(Sample {
                subject_id: "b".into(),
                label: 0,
                features: vec![x + shift, -x + shift],
            });
        }
        LabeledDataset::new(samples).unwrap()
    }

    #[test]
    fn alphas_grow_with_subject_displacement_in_exclusion_mode() {
        let config = AlphaConfig {
            estimator: AlphaEstimator::Exact,
            group_excludes_self: true,
            ..Default::default()
        };
        let mut previous = 0.0;
        for shift in [1.0, 2.0, 4.0] {
            let ds = shifted_pair_dataset(shift);
            let alphas = compute_alphas(&ds, &config, None, 0).unwrap();
            let b = alphas["b"];
            assert!(
                b > previous,
                "alpha for shift {shift} was {b}, not above {previous}"
            );
            // With the group excluding self, b's group is exactly a's cloud,
            // and a translation by (c, c) costs c * sqrt(2) per unit mass.
            assert!((b - shift * 2f64.sqrt()).abs() < 1e-9);
            previous = b;
        }
    }

    #[test]
    fn identical_subjects_give_zero_alphas_and_uniform_fallback() {
        let mut samples = Vec::new();
        for subject in ["a", "b"] {
            for k in 0..4 {
                samples.push(Sample {
                    subject_id: subject.into(),
                    label: 0,
                    features: vec![k as f64, 2.0 * k as f64],
                });
            }
        }
        let ds = LabeledDataset::new(samples).unwrap();
        let config = AlphaConfig {
            estimator: AlphaEstimator::Exact,
            ..Default::default()
        };
        let alphas = compute_alphas(&ds, &config, None, 1).unwrap();
        assert_eq!(alphas["a"], 0.0);
        assert_eq!(alphas["b"], 0.0);

        // The pipeline substitutes uniform weights in budget mode...
        let wcfg = WeightingConfig {
            alpha: config,
            ..Default::default()
        };
        let weights = compute_weights(&ds, &wcfg, None, 1).unwrap();
        assert!(weights.uniform_fallback);
        assert_eq!(weights.subjects["a"].lambda, 0.25);
        assert_eq!(weights.subjects["b"].lambda, 0.25);
        assert_eq!(weights.lambda_group, 0.5);
        weights.validate().unwrap();

        // ...and propagates the degeneracy in paper mode.
        let paper = WeightingConfig {
            mode: WeightMode::Paper,
            alpha: config,
            ..Default::default()
        };
        assert!(matches!(
            compute_weights(&ds, &paper, None, 1),
            Err(Error::DegenerateDistances(_))
        ));
    }

    #[test]
    fn displaced_subject_has_largest_alpha_and_smallest_lambda() {
        let mut samples = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (subject, center) in [("a", 0.0), ("b", 0.5), ("c", 25.0)] {
            for _ in 0..10 {
                samples.push(Sample {
                    subject_id: subject.into(),
                    label: 0,
                    features: vec![
                        center + rng.gen_range(-0.5..0.5),
                        center + rng.gen_range(-0.5..0.5),
                    ],
                });
            }
        }
        let ds = LabeledDataset::new(samples).unwrap();
        let config = AlphaConfig {
            estimator: AlphaEstimator::Exact,
            ..Default::default()
        };
        let alphas = compute_alphas(&ds, &config, None, 0).unwrap();
        assert!(alphas["c"] > alphas["a"]);
        assert!(alphas["c"] > alphas["b"]);
        let weights = compute_lambdas(&alphas, WeightMode::Budget, None).unwrap();
        assert!(weights.subjects["c"].lambda < weights.subjects["a"].lambda);
        assert!(weights.subjects["c"].lambda < weights.subjects["b"].lambda);
    }

    #[test]
    fn sliced_and_exact_estimators_agree_on_direction() {
        let config_exact = AlphaConfig {
            estimator: AlphaEstimator::Exact,
            ..Default::default()
        };
        let config_sliced = AlphaConfig {
            estimator: AlphaEstimator::Sliced { projections: 128 },
            ..Default::default()
        };
        let ds = synth_outlier_dataset();
        let exact = compute_alphas(&ds, &config_exact, None, 4).unwrap();
        let sliced = compute_alphas(&ds, &config_sliced, None, 4).unwrap();
        let argmax = |m: &BTreeMap<String, f64>| {
            m.iter()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k.clone())
                .unwrap()
        };
        assert_eq!(argmax(&exact), "s002");
        assert_eq!(argmax(&sliced), "s002");
    }

    fn synth_outlier_dataset() -> LabeledDataset {
        crate::data::synth_generate(&SyntheticConfig {
            subjects: 4,
            classes: 2,
            dim: 3,
            samples_per_class: 10,
            class_separation: 2.0,
            subject_shift: 0.5,
            noise_sigma: 0.2,
            outlier_multipliers: vec![(2, 8.0)],
            seed: 12,
        })
        .unwrap()
    }

    #[test]
    fn compute_alphas_is_deterministic_and_subsamples_reproducibly() {
        let ds = synth_outlier_dataset();
        let config = AlphaConfig {
            estimator: AlphaEstimator::Sliced { projections: 16 },
            max_support: 15, // force subsampling (subjects have 20 samples)
            ..Default::default()
        };
        let a = compute_alphas(&ds, &config, None, 5).unwrap();
        let b = compute_alphas(&ds, &config, None, 5).unwrap();
        let c = compute_alphas(&ds, &config, None, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn compute_alphas_validates_preconditions() {
        let single = LabeledDataset::new(vec![Sample {
            subject_id: "only".into(),
            label: 0,
            features: vec![0.0],
        }])
        .unwrap();
        assert!(compute_alphas(&single, &AlphaConfig::default(), None, 0).is_err());

        let ds = synth_outlier_dataset();
        let latent = AlphaConfig {
            space: AlphaSpace::Latent,
            ..Default::default()
        };
        let err = compute_alphas(&ds, &latent, None, 0).unwrap_err();
        assert!(err.to_string().contains("encoder"));

        let zero_proj = AlphaConfig {
            estimator: AlphaEstimator::Sliced { projections: 0 },
            ..Default::default()
        };
        assert!(compute_alphas(&ds, &zero_proj, None, 0).is_err());
    }

    #[test]
    fn latent_space_alphas_use_the_encoder() {
        use crate::nn::{init_params, Activation, LayerSpec};
        let ds = synth_outlier_dataset();
        let encoder = init_params(
            &[
                LayerSpec::new(3, 4, Activation::Relu),
                LayerSpec::new(4, 2, Activation::Linear),
            ],
            0,
        )
        .unwrap();
        let config = AlphaConfig {
            space: AlphaSpace::Latent,
            estimator: AlphaEstimator::Exact,
            ..Default::default()
        };
        let latent = compute_alphas(&ds, &config, Some(&encoder), 0).unwrap();
        let input = compute_alphas(
            &ds,
            &AlphaConfig {
                space: AlphaSpace::Input,
                estimator: AlphaEstimator::Exact,
                ..Default::default()
            },
            None,
            0,
        )
        .unwrap();
        assert_ne!(latent, input);
        for v in latent.values() {
            assert!(v.is_finite() && *v >= 0.0);
        }
    }
}
