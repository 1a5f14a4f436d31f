//! TF-IDF session vectors.
//!
//! A session is a document and each event a word. Term frequency is the raw
//! in-session count, `idf(f) = 1 + ln(N / df(f))`, and the resulting weight
//! vector is L2-normalized so sessions are compared irrespective of length.
//! Events present in fewer than `min_session_frac` of the fitting sessions are
//! left out of the vocabulary.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Session;

pub const DEFAULT_MIN_SESSION_FRAC: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub index: usize,
    pub doc_freq: usize,
    pub idf: f64,
}

/// Retained events with their document frequencies and frozen IDF values.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    entries: BTreeMap<String, VocabEntry>,
    names: Vec<String>,
    pub num_sessions: usize,
    pub min_session_frac: f64,
}

impl Vocabulary {
    /// Assemble a vocabulary from `(name, doc_freq, idf)` triples; indices
    /// follow name order.
    pub fn from_parts(
        parts: impl IntoIterator<Item = (String, usize, f64)>,
        num_sessions: usize,
        min_session_frac: f64,
    ) -> Result<Self> {
        let mut sorted: Vec<_> = parts.into_iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate vocabulary entry".into()));
        }
        let mut entries = BTreeMap::new();
        let mut names = Vec::with_capacity(sorted.len());
        for (index, (name, doc_freq, idf)) in sorted.into_iter().enumerate() {
            if !(idf > 0.0 && idf.is_finite()) {
                return Err(Error::InvalidInput(format!("non-positive idf for {name}")));
            }
            names.push(name.clone());
            entries.insert(
                name,
                VocabEntry {
                    index,
                    doc_freq,
                    idf,
                },
            );
        }
        if names.is_empty() {
            return Err(Error::EmptyVocabulary {
                min_frac: min_session_frac,
                n_sessions: num_sessions,
            });
        }
        Ok(Vocabulary {
            entries,
            names,
            num_sessions,
            min_session_frac,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&VocabEntry> {
        self.entries.get(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get(name).map(|e| e.index)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.entries[&self.names[index]].idf
    }

    /// Entries in index order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &VocabEntry)> {
        self.names
            .iter()
            .map(move |n| (n.as_str(), &self.entries[n]))
    }
}

pub fn idf(num_sessions: usize, doc_freq: usize) -> f64 {
    1.0 + (num_sessions as f64 / doc_freq as f64).ln()
}

/// Fit the vocabulary on a corpus of sessions.
pub fn fit_vocabulary(sessions: &[Session], min_session_frac: f64) -> Result<Vocabulary> {
    if sessions.is_empty() {
        return Err(Error::InvalidInput("cannot fit a vocabulary on zero sessions".into()));
    }
    let doc_freq: HashMap<&str, usize> = sessions
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<&str, usize>, s| {
            let distinct: HashSet<&str> = s.events.iter().map(String::as_str).collect();
            for e in distinct {
                *acc.entry(e).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let n = sessions.len();
    let kept = doc_freq
        .into_iter()
        .filter(|&(_, df)| df as f64 / n as f64 >= min_session_frac)
        .map(|(name, df)| (name.to_string(), df, idf(n, df)));
    Vocabulary::from_parts(kept, n, min_session_frac)
}

/// In-session event counts, including events outside the vocabulary.
pub fn event_counts(events: &[String]) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for e in events {
        *counts.entry(e.clone()).or_default() += 1;
    }
    counts
}

/// Unnormalized TF-IDF weights `count(f) * idf(f)` for vocabulary events,
/// sorted by vocabulary index.
pub fn tfidf_weights(counts: &BTreeMap<String, u32>, vocab: &Vocabulary) -> Vec<(usize, f64)> {
    let mut w: Vec<(usize, f64)> = counts
        .iter()
        .filter_map(|(name, &c)| vocab.get(name).map(|e| (e.index, f64::from(c) * e.idf)))
        .collect();
    w.sort_by_key(|&(i, _)| i);
    w
}

pub fn l2_norm(weights: &[(usize, f64)]) -> f64 {
    weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionVector {
    pub session_id: String,
    /// L2-normalized TF-IDF weights, sparse and sorted by vocabulary index.
    pub weights: Vec<(usize, f64)>,
    pub raw_counts: BTreeMap<String, u32>,
    /// Set when the session has no vocabulary event; such sessions are
    /// routed to the Noise category downstream.
    pub zero: bool,
}

impl SessionVector {
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut d = vec![0.0; dim];
        for &(i, w) in &self.weights {
            d[i] = w;
        }
        d
    }
}

pub fn vectorize_counts(
    session_id: &str,
    raw_counts: BTreeMap<String, u32>,
    vocab: &Vocabulary,
) -> SessionVector {
    let mut weights = tfidf_weights(&raw_counts, vocab);
    let norm = l2_norm(&weights);
    let zero = norm == 0.0;
    if zero {
        weights.clear();
    } else {
        for (_, w) in &mut weights {
            *w /= norm;
        }
    }
    SessionVector {
        session_id: session_id.to_string(),
        weights,
        raw_counts,
        zero,
    }
}

pub fn vectorize_session(session: &Session, vocab: &Vocabulary) -> SessionVector {
    vectorize_counts(&session.session_id, event_counts(&session.events), vocab)
}

pub fn vectorize_all(sessions: &[Session], vocab: &Vocabulary) -> Vec<SessionVector> {
    sessions
        .par_iter()
        .map(|s| vectorize_session(s, vocab))
        .collect()
}

/// File form of a session vector, keyed by event name rather than index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub session_id: String,
    pub weights: BTreeMap<String, f64>,
    pub raw_counts: BTreeMap<String, u32>,
    pub zero: bool,
}

impl VectorRecord {
    pub fn from_vector(v: &SessionVector, vocab: &Vocabulary) -> Self {
        VectorRecord {
            session_id: v.session_id.clone(),
            weights: v
                .weights
                .iter()
                .map(|&(i, w)| (vocab.name(i).to_string(), w))
                .collect(),
            raw_counts: v.raw_counts.clone(),
            zero: v.zero,
        }
    }

    /// Rebuild the indexed vector. Names missing from `vocab` are an error,
    /// since they indicate the record came from a different vocabulary.
    pub fn to_vector(&self, vocab: &Vocabulary) -> Result<SessionVector> {
        let mut weights = Vec::with_capacity(self.weights.len());
        for (name, &w) in &self.weights {
            let i = vocab.index_of(name).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "vector {} uses event {name} missing from the vocabulary",
                    self.session_id
                ))
            })?;
            weights.push((i, w));
        }
        weights.sort_by_key(|&(i, _)| i);
        Ok(SessionVector {
            session_id: self.session_id.clone(),
            weights,
            raw_counts: self.raw_counts.clone(),
            zero: self.zero,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: &str, events: &[&str]) -> Session {
        Session {
            session_id: id.into(),
            user_id: id.into(),
            platform: "iphone".into(),
            start: 0,
            end: 1,
            events: events.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn single_document_corpus_has_unit_idf() {
        let v = fit_vocabulary(&[session("s", &["A", "A", "B"])], 0.05).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.get("A").unwrap().idf, 1.0);
        assert_eq!(v.get("B").unwrap().idf, 1.0);
        assert_eq!(v.index_of("A"), Some(0));
        assert_eq!(v.index_of("B"), Some(1));
    }

    #[test]
    fn threshold_boundary_excludes_four_percent_events() {
        let mut sessions: Vec<_> = (0..100).map(|i| session(&i.to_string(), &["C"])).collect();
        for s in sessions.iter_mut().take(4) {
            s.events.push("X".into());
        }
        for s in sessions.iter_mut().skip(10).take(5) {
            s.events.push("Y".into());
        }
        let v = fit_vocabulary(&sessions, 0.05).unwrap();
        assert!(v.get("X").is_none());
        // exactly 5% is retained
        assert_eq!(v.get("Y").unwrap().doc_freq, 5);
    }

    #[test]
    fn all_filtered_is_an_error() {
        let mut sessions: Vec<_> = (0..100).map(|i| session(&i.to_string(), &[])).collect();
        sessions[0].events.push("RARE".into());
        assert!(matches!(
            fit_vocabulary(&sessions, 0.05),
            Err(Error::EmptyVocabulary { .. })
        ));
        assert!(fit_vocabulary(&[], 0.05).is_err());
    }

    fn vocab(parts: &[(&str, f64)]) -> Vocabulary {
        Vocabulary::from_parts(
            parts.iter().map(|&(n, idf)| (n.to_string(), 1, idf)),
            10,
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn single_event_session_is_one_hot() {
        let v = vocab(&[("A", 1.7), ("B", 1.2)]);
        let sv = vectorize_session(&session("s", &["A", "A", "A"]), &v);
        assert_eq!(sv.weights, vec![(0, 1.0)]);
        assert!(!sv.zero);
    }

    #[test]
    fn search_click_normalization() {
        let v = vocab(&[("CLICK", 1.0), ("SEARCH", 2.0)]);
        let mut events = vec!["SEARCH"; 4];
        events.extend(["CLICK"; 2]);
        let sv = vectorize_session(&session("s", &events), &v);
        let d = sv.to_dense(2);
        let norm = 68f64.sqrt();
        assert!((d[1] - 8.0 / norm).abs() < 1e-15);
        assert!((d[0] - 2.0 / norm).abs() < 1e-15);
        assert!((d[1] - 0.9701).abs() < 1e-4 && (d[0] - 0.2425).abs() < 1e-4);
    }

    #[test]
    fn out_of_vocabulary_session_is_flagged_zero() {
        let v = vocab(&[("A", 1.0)]);
        let sv = vectorize_session(&session("s", &["Q", "R", "Q"]), &v);
        assert!(sv.zero);
        assert!(sv.weights.is_empty());
        assert_eq!(sv.raw_counts["Q"], 2);
    }

    #[test]
    fn record_round_trip() {
        let v = vocab(&[("A", 1.5), ("B", 1.0)]);
        let sv = vectorize_session(&session("s", &["A", "B", "Z"]), &v);
        let rec = VectorRecord::from_vector(&sv, &v);
        assert_eq!(rec.to_vector(&v).unwrap(), sv);
        let other = vocab(&[("C", 1.0)]);
        assert!(rec.to_vector(&other).is_err());
    }
}
