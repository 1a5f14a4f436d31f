//! Scoring vs long-tail features, the noise feature and the design matrix.
//!
//! The noise feature of a session is the share of its (unnormalized) TF-IDF
//! weight carried by scoring features:
//!
//! ```text
//! eta = sum_{f in scoring} w(f) / sum_{f in vocabulary} w(f)
//! ```
//!
//! It is divided by its mean over the training sessions, and that mean is
//! frozen with the model so a shift in long-tail event rates cannot move the
//! normalizer at scoring time.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectorize::{tfidf_weights, Vocabulary};

pub const NOISE_FEATURE_NAME: &str = "NOISE_FEATURE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitProvenance {
    ManualList,
    VarianceRanked,
}

impl SplitProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitProvenance::ManualList => "manual_list",
            SplitProvenance::VarianceRanked => "variance_ranked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "manual_list" => Some(SplitProvenance::ManualList),
            "variance_ranked" => Some(SplitProvenance::VarianceRanked),
            _ => None,
        }
    }
}

/// Partition of the vocabulary into scoring and long-tail events.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSplit {
    scoring: Vec<String>,
    long_tail: Vec<String>,
    pub provenance: SplitProvenance,
}

impl FeatureSplit {
    /// Build a split from a scoring list. Scoring names absent from the
    /// vocabulary are dropped and returned; an empty result is an error.
    pub fn new(
        scoring: impl IntoIterator<Item = String>,
        vocab: &Vocabulary,
        provenance: SplitProvenance,
    ) -> Result<(Self, Vec<String>)> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for name in scoring {
            if !seen.insert(name.clone()) {
                continue;
            }
            if vocab.get(&name).is_some() {
                kept.push(name);
            } else {
                dropped.push(name);
            }
        }
        if kept.is_empty() {
            return Err(Error::InvalidInput(
                "no scoring feature is part of the vocabulary".into(),
            ));
        }
        let in_scoring: HashSet<&str> = kept.iter().map(String::as_str).collect();
        let long_tail = vocab
            .names()
            .iter()
            .filter(|n| !in_scoring.contains(n.as_str()))
            .cloned()
            .collect();
        Ok((
            FeatureSplit {
                scoring: kept,
                long_tail,
                provenance,
            },
            dropped,
        ))
    }

    pub fn scoring(&self) -> &[String] {
        &self.scoring
    }

    pub fn long_tail(&self) -> &[String] {
        &self.long_tail
    }

    pub fn is_scoring(&self, name: &str) -> bool {
        self.scoring.iter().any(|s| s == name)
    }
}

/// Parse a scoring-feature list: one event per line, `#` comments.
pub fn parse_feature_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFeature {
    pub eta_raw: f64,
    pub eta_normalized: f64,
}

/// Raw noise feature from unnormalized weights; 0 when the session carries
/// no vocabulary weight.
pub fn eta_raw(weights: &[(usize, f64)], scoring_mask: &[bool]) -> f64 {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let scoring: f64 = weights
        .iter()
        .filter(|(i, _)| scoring_mask[*i])
        .map(|(_, w)| w)
        .sum();
    (scoring / total).clamp(0.0, 1.0)
}

pub fn compute_noise_feature(
    raw_counts: &BTreeMap<String, u32>,
    split: &FeatureSplit,
    vocab: &Vocabulary,
    eta_mean: f64,
) -> NoiseFeature {
    let mask = scoring_mask(split, vocab);
    let raw = eta_raw(&tfidf_weights(raw_counts, vocab), &mask);
    NoiseFeature {
        eta_raw: raw,
        eta_normalized: raw / eta_mean,
    }
}

pub fn scoring_mask(split: &FeatureSplit, vocab: &Vocabulary) -> Vec<bool> {
    let mut mask = vec![false; vocab.len()];
    for name in split.scoring() {
        if let Some(i) = vocab.index_of(name) {
            mask[i] = true;
        }
    }
    mask
}

/// Which columns the classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Scoring features only, unit-normalized over the scoring set.
    ScoringOnly,
    /// Scoring features plus the normalized noise feature.
    ScoringWithNoise,
    /// Every vocabulary event, unit-normalized over the vocabulary.
    AllFeatures,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [
        FeatureMode::ScoringOnly,
        FeatureMode::ScoringWithNoise,
        FeatureMode::AllFeatures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::ScoringOnly => "scoring_only",
            FeatureMode::ScoringWithNoise => "scoring_with_noise",
            FeatureMode::AllFeatures => "all_features",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        FeatureMode::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Turns raw event counts into a classifier row using only frozen
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    pub mode: FeatureMode,
    /// Vocabulary index of each scoring feature, in split order.
    scoring_idx: Vec<usize>,
    scoring_mask: Vec<bool>,
    pub eta_mean: f64,
}

impl FeatureEncoder {
    pub fn new(mode: FeatureMode, split: &FeatureSplit, vocab: &Vocabulary, eta_mean: f64) -> Self {
        FeatureEncoder {
            mode,
            scoring_idx: split
                .scoring()
                .iter()
                .map(|n| vocab.index_of(n).expect("split built from vocabulary"))
                .collect(),
            scoring_mask: scoring_mask(split, vocab),
            eta_mean,
        }
    }

    pub fn feature_names(&self, vocab: &Vocabulary) -> Vec<String> {
        match self.mode {
            FeatureMode::AllFeatures => vocab.names().to_vec(),
            _ => {
                let mut names: Vec<String> = self
                    .scoring_idx
                    .iter()
                    .map(|&i| vocab.name(i).to_string())
                    .collect();
                if self.mode == FeatureMode::ScoringWithNoise {
                    names.push(NOISE_FEATURE_NAME.to_string());
                }
                names
            }
        }
    }

    pub fn n_features(&self, vocab: &Vocabulary) -> usize {
        match self.mode {
            FeatureMode::AllFeatures => vocab.len(),
            FeatureMode::ScoringOnly => self.scoring_idx.len(),
            FeatureMode::ScoringWithNoise => self.scoring_idx.len() + 1,
        }
    }

    pub fn encode(&self, raw_counts: &BTreeMap<String, u32>, vocab: &Vocabulary) -> Vec<f64> {
        let weights = tfidf_weights(raw_counts, vocab);
        match self.mode {
            FeatureMode::AllFeatures => {
                let mut row = vec![0.0; vocab.len()];
                let norm = crate::vectorize::l2_norm(&weights);
                if norm > 0.0 {
                    for &(i, w) in &weights {
                        row[i] = w / norm;
                    }
                }
                row
            }
            FeatureMode::ScoringOnly | FeatureMode::ScoringWithNoise => {
                let mut dense = vec![0.0; vocab.len()];
                for &(i, w) in &weights {
                    dense[i] = w;
                }
                let mut row: Vec<f64> = self.scoring_idx.iter().map(|&i| dense[i]).collect();
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
                if self.mode == FeatureMode::ScoringWithNoise {
                    row.push(eta_raw(&weights, &self.scoring_mask) / self.eta_mean);
                }
                row
            }
        }
    }
}

/// Mean raw noise feature over a corpus.
pub fn eta_mean<'a>(
    counts: impl IntoIterator<Item = &'a BTreeMap<String, u32>>,
    split: &FeatureSplit,
    vocab: &Vocabulary,
) -> Result<f64> {
    let mask = scoring_mask(split, vocab);
    let (mut sum, mut n) = (0.0, 0usize);
    for c in counts {
        sum += eta_raw(&tfidf_weights(c, vocab), &mask);
        n += 1;
    }
    let mean = if n == 0 { 0.0 } else { sum / n as f64 };
    if mean > 0.0 {
        Ok(mean)
    } else {
        Err(Error::InvalidInput(
            "noise feature mean is zero: no training session carries scoring weight".into(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub encoder: FeatureEncoder,
}

/// Build classifier rows for labeled sessions; the noise-feature mean is
/// taken over these same sessions and frozen into the encoder.
pub fn build_training_matrix(
    counts: &[BTreeMap<String, u32>],
    split: &FeatureSplit,
    vocab: &Vocabulary,
    mode: FeatureMode,
) -> Result<DesignMatrix> {
    let mean = eta_mean(counts, split, vocab)?;
    let encoder = FeatureEncoder::new(mode, split, vocab, mean);
    let rows = counts.iter().map(|c| encoder.encode(c, vocab)).collect();
    Ok(DesignMatrix {
        rows,
        feature_names: encoder.feature_names(vocab),
        encoder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_parts(
            [("A", 1.0), ("B", 1.0), ("C", 2.0)]
                .iter()
                .map(|&(n, idf)| (n.to_string(), 1, idf)),
            10,
            0.05,
        )
        .unwrap()
    }

    fn counts(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|&(n, c)| (n.to_string(), c)).collect()
    }

    fn split_a() -> FeatureSplit {
        FeatureSplit::new(["A".to_string()], &vocab(), SplitProvenance::ManualList)
            .unwrap()
            .0
    }

    #[test]
    fn split_partitions_vocabulary() {
        let v = vocab();
        let (s, dropped) = FeatureSplit::new(
            ["C", "A", "C", "ZZZ"].map(String::from),
            &v,
            SplitProvenance::ManualList,
        )
        .unwrap();
        assert_eq!(s.scoring(), ["C", "A"]);
        assert_eq!(s.long_tail(), ["B"]);
        assert_eq!(dropped, ["ZZZ"]);
        assert!(FeatureSplit::new(["Q".to_string()], &v, SplitProvenance::ManualList).is_err());
    }

    #[test]
    fn eta_extremes() {
        let v = vocab();
        let s = split_a();
        assert_eq!(compute_noise_feature(&counts(&[("A", 5)]), &s, &v, 1.0).eta_raw, 1.0);
        assert_eq!(compute_noise_feature(&counts(&[("B", 2)]), &s, &v, 1.0).eta_raw, 0.0);
        // out-of-vocabulary only: no weight at all
        assert_eq!(compute_noise_feature(&counts(&[("Z", 2)]), &s, &v, 1.0).eta_raw, 0.0);
    }

    #[test]
    fn eta_three_to_one() {
        // weights A:3 (scoring), B:1 (long tail), both idf 1
        let nf = compute_noise_feature(&counts(&[("A", 3), ("B", 1)]), &split_a(), &vocab(), 0.9);
        assert_eq!(nf.eta_raw, 0.75);
        assert!((nf.eta_normalized - 0.833_333_333_333_333_4).abs() < 1e-15);
    }

    #[test]
    fn scoring_only_session_row() {
        let v = vocab();
        let (s, _) =
            FeatureSplit::new(["A", "C"].map(String::from), &v, SplitProvenance::ManualList).unwrap();
        let m = build_training_matrix(
            &[counts(&[("A", 2), ("C", 1)]), counts(&[("A", 1), ("B", 3)])],
            &s,
            &v,
            FeatureMode::ScoringWithNoise,
        )
        .unwrap();
        assert_eq!(m.feature_names, ["A", "C", NOISE_FEATURE_NAME]);
        // first row: weights A=2, C=2 -> unit block (1/sqrt2, 1/sqrt2); eta = 1
        let r = &m.rows[0];
        let h = 0.5f64.sqrt();
        assert!((r[0] - h).abs() < 1e-15 && (r[1] - h).abs() < 1e-15);
        // eta_mean = (1 + 0.25) / 2
        assert!((r[2] - 1.0 / 0.625).abs() < 1e-15);
    }

    #[test]
    fn half_scoring_half_long_tail_row() {
        let v = vocab();
        let (s, _) =
            FeatureSplit::new(["A", "C"].map(String::from), &v, SplitProvenance::ManualList).unwrap();
        let enc = FeatureEncoder::new(FeatureMode::ScoringWithNoise, &s, &v, 0.5);
        // A:3 (w 3), C:2 (w 4), B:7 (w 7): block = (3,4)/5, eta = 7/14
        let row = enc.encode(&counts(&[("A", 3), ("C", 2), ("B", 7)]), &v);
        assert_eq!(row, vec![0.6, 0.8, 1.0]);
    }

    #[test]
    fn zero_scoring_session_row() {
        let v = vocab();
        let enc = FeatureEncoder::new(FeatureMode::ScoringWithNoise, &split_a(), &v, 0.5);
        assert_eq!(enc.encode(&counts(&[("B", 4)]), &v), vec![0.0, 0.0]);
    }

    #[test]
    fn all_features_row_is_unit_vector() {
        let v = vocab();
        let enc = FeatureEncoder::new(FeatureMode::AllFeatures, &split_a(), &v, 0.5);
        let row = enc.encode(&counts(&[("A", 3), ("C", 2)]), &v);
        assert_eq!(row, vec![0.6, 0.0, 0.8]);
    }

    #[test]
    fn zero_eta_mean_is_an_error() {
        let r = build_training_matrix(&[counts(&[("B", 1)])], &split_a(), &vocab(), FeatureMode::ScoringOnly);
        assert!(r.is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FeatureMode::ALL {
            assert_eq!(FeatureMode::parse(m.as_str()), Some(m));
        }
    }
}
