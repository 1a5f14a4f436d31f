//! Cluster → category mapping and session labeling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_NOISE_CATEGORY: &str = "Noise";

/// Maps every cluster index to a category name, with one designated Noise
/// category.
///
/// Text form, one entry per line (`#` comments allowed):
///
/// ```text
/// noise = Noise
/// 0 -> Search
/// 1 -> Noise
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    pub clusters: BTreeMap<usize, String>,
    pub noise: String,
}

impl CategoryMap {
    pub fn new(clusters: BTreeMap<usize, String>, noise: impl Into<String>) -> Self {
        CategoryMap {
            clusters,
            noise: noise.into(),
        }
    }

    pub fn identity(k: usize, noise_cluster: usize) -> Self {
        let clusters = (0..k)
            .map(|c| {
                let name = if c == noise_cluster {
                    DEFAULT_NOISE_CATEGORY.to_string()
                } else {
                    format!("C{c}")
                };
                (c, name)
            })
            .collect();
        CategoryMap::new(clusters, DEFAULT_NOISE_CATEGORY)
    }

    /// Check the map covers clusters `0..k` and routes at least one cluster to
    /// the Noise category.
    pub fn validate(&self, k: usize) -> Result<()> {
        if let Some(c) = (0..k).find(|c| !self.clusters.contains_key(c)) {
            return Err(Error::UnmappedCluster(c));
        }
        if !self.clusters.values().any(|n| *n == self.noise) {
            return Err(Error::InvalidInput(format!(
                "no cluster maps to the noise category {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn category(&self, cluster: usize) -> Result<&str> {
        self.clusters
            .get(&cluster)
            .map(String::as_str)
            .ok_or(Error::UnmappedCluster(cluster))
    }

    /// Sorted, distinct category names.
    pub fn categories(&self) -> Vec<String> {
        let mut names: Vec<String> = self.clusters.values().cloned().collect();
        names.push(self.noise.clone());
        names.sort();
        names.dedup();
        names
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut clusters = BTreeMap::new();
        let mut noise = DEFAULT_NOISE_CATEGORY.to_string();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::InvalidInput(format!("category map line {}: {raw:?}", lineno + 1));
            if let Some(rest) = line.strip_prefix("noise") {
                let name = rest.trim_start().strip_prefix('=').ok_or_else(bad)?.trim();
                if name.is_empty() {
                    return Err(bad());
                }
                noise = name.to_string();
                continue;
            }
            let (idx, name) = line.split_once("->").ok_or_else(bad)?;
            let idx: usize = idx.trim().parse().map_err(|_| bad())?;
            let name = name.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(bad());
            }
            if clusters.insert(idx, name.to_string()).is_some() {
                return Err(Error::InvalidInput(format!("cluster {idx} mapped twice")));
            }
        }
        Ok(CategoryMap { clusters, noise })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("noise = {}\n", self.noise);
        for (c, name) in &self.clusters {
            let _ = writeln!(out, "{c} -> {name}");
        }
        out
    }

    /// Map each cluster to the most frequent reference label among its
    /// members (ties go to the lexicographically smallest label). Stands in
    /// for the human naming step when ground truth is available.
    ///
    /// If no cluster ends up as Noise, `fallback_noise` is remapped to it.
    pub fn from_majority(
        assignments: &[usize],
        reference: &[String],
        k: usize,
        noise: &str,
        fallback_noise: usize,
    ) -> Self {
        let mut votes: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); k];
        for (&c, label) in assignments.iter().zip(reference) {
            *votes[c].entry(label.as_str()).or_default() += 1;
        }
        let mut clusters: BTreeMap<usize, String> = votes
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let name = v
                    .iter()
                    .fold(None::<(&str, usize)>, |best, (&l, &n)| match best {
                        Some((_, bn)) if bn >= n => best,
                        _ => Some((l, n)),
                    })
                    .map_or(noise, |(l, _)| l);
                (c, name.to_string())
            })
            .collect();
        if !clusters.values().any(|n| n == noise) {
            clusters.insert(fallback_noise, noise.to_string());
        }
        CategoryMap::new(clusters, noise)
    }
}

/// Category of every session. Zero-vector sessions go to Noise whatever
/// their cluster.
pub fn label_clusters(
    assignments: &[usize],
    zero_vector: &[bool],
    map: &CategoryMap,
) -> Result<Vec<String>> {
    assignments
        .iter()
        .zip(zero_vector)
        .map(|(&c, &zero)| {
            let name = map.category(c)?;
            Ok(if zero { map.noise.clone() } else { name.to_string() })
        })
        .collect()
}
