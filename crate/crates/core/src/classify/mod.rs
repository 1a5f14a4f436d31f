//! The production classifier: scoring/long-tail split, noise feature,
//! random forest, evaluation and the feature-mode ablation.

pub mod evaluate;
pub mod features;
pub mod forest;
pub mod ranking;

use std::collections::BTreeMap;

pub use evaluate::{evaluate, stratified_split, AblationReport, ConfusionMatrix};
pub use features::{
    build_training_matrix, compute_noise_feature, parse_feature_list, DesignMatrix, FeatureEncoder,
    FeatureMode, FeatureSplit, NoiseFeature, SplitProvenance, NOISE_FEATURE_NAME,
};
pub use forest::{train_forest, ForestModel, ForestParams, DEFAULT_MIN_LEAF, DEFAULT_TREES};
pub use ranking::{rank_event_stability, StabilityRanking};

use crate::error::{Error, Result};
use crate::vectorize::Vocabulary;

pub const TEST_FRACTION: f64 = 1.0 / 3.0;

/// Distinct labels in sorted order; class indices follow this order.
pub fn class_names(labels: &[String]) -> Vec<String> {
    let mut names = labels.to_vec();
    names.sort();
    names.dedup();
    names
}

pub fn label_indices(labels: &[String], classes: &[String]) -> Vec<usize> {
    labels
        .iter()
        .map(|l| classes.binary_search(l).expect("class list built from labels"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub encoder: FeatureEncoder,
    pub forest: ForestModel,
    pub test_confusion: ConfusionMatrix,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Train on a stratified 2/3 and evaluate on the held-out 1/3.
pub fn train_classifier(
    counts: &[BTreeMap<String, u32>],
    labels: &[String],
    vocab: &Vocabulary,
    split: &FeatureSplit,
    mode: FeatureMode,
    params: &ForestParams,
) -> Result<TrainedClassifier> {
    let classes = class_names(labels);
    let y = label_indices(labels, &classes);
    let (train_idx, test_idx) = stratified_split(&y, classes.len(), TEST_FRACTION, params.seed);
    train_on_split(counts, &y, &classes, vocab, split, mode, params, train_idx, test_idx)
}

#[allow(clippy::too_many_arguments)]
fn train_on_split(
    counts: &[BTreeMap<String, u32>],
    y: &[usize],
    classes: &[String],
    vocab: &Vocabulary,
    split: &FeatureSplit,
    mode: FeatureMode,
    params: &ForestParams,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
) -> Result<TrainedClassifier> {
    if counts.len() != y.len() {
        return Err(Error::InvalidInput("counts and labels differ in length".into()));
    }
    let train_counts = gather(counts, &train_idx);
    let design = build_training_matrix(&train_counts, split, vocab, mode)?;
    let forest = train_forest(
        &design.rows,
        &gather(y, &train_idx),
        &design.feature_names,
        classes,
        params,
    )?;
    let test_rows: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| design.encoder.encode(&counts[i], vocab))
        .collect();
    let test_confusion = evaluate(&forest, &test_rows, &gather(y, &test_idx));
    Ok(TrainedClassifier {
        encoder: design.encoder,
        forest,
        test_confusion,
        train_idx,
        test_idx,
    })
}

/// Train one model per feature mode on the same train/test split.
pub fn run_ablation(
    counts: &[BTreeMap<String, u32>],
    labels: &[String],
    vocab: &Vocabulary,
    split: &FeatureSplit,
    params: &ForestParams,
) -> Result<(AblationReport, Vec<(FeatureMode, TrainedClassifier)>)> {
    let classes = class_names(labels);
    let y = label_indices(labels, &classes);
    let (train_idx, test_idx) = stratified_split(&y, classes.len(), TEST_FRACTION, params.seed);
    let mut models = Vec::new();
    for mode in FeatureMode::ALL {
        let m = train_on_split(
            counts,
            &y,
            &classes,
            vocab,
            split,
            mode,
            params,
            train_idx.clone(),
            test_idx.clone(),
        )?;
        models.push((mode, m));
    }
    let report = AblationReport {
        results: models
            .iter()
            .map(|(m, t)| (*m, t.test_confusion.clone()))
            .collect(),
    };
    Ok((report, models))
}

/// Grow the scoring set along a stability ranking until test accuracy of the
/// scoring+noise model reaches `target_accuracy` (or `max_features` is hit).
#[allow(clippy::too_many_arguments)]
pub fn select_scoring_by_ranking(
    ranking: &StabilityRanking,
    counts: &[BTreeMap<String, u32>],
    labels: &[String],
    vocab: &Vocabulary,
    params: &ForestParams,
    target_accuracy: f64,
    min_features: usize,
    max_features: usize,
) -> Result<(FeatureSplit, f64)> {
    let candidates: Vec<String> = ranking
        .events()
        .filter(|e| vocab.get(e).is_some())
        .map(str::to_string)
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no ranked event is in the vocabulary".into()));
    }
    let upper = max_features.min(candidates.len());
    let mut n = min_features.clamp(1, upper);
    loop {
        let (split, _) = FeatureSplit::new(
            candidates[..n].iter().cloned(),
            vocab,
            SplitProvenance::VarianceRanked,
        )?;
        let acc = match train_classifier(counts, labels, vocab, &split, FeatureMode::ScoringWithNoise, params) {
            Ok(m) => m.test_confusion.accuracy(),
            // e.g. no training session has scoring weight yet
            Err(Error::InvalidInput(_)) if n < upper => 0.0,
            Err(e) => return Err(e),
        };
        if acc >= target_accuracy || n >= upper {
            return Ok((split, acc));
        }
        n += 1;
    }
}
