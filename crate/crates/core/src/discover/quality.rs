//! Cluster validation: silhouette width and subsample Jaccard stability.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmedoids::{kmedoids, Clustering};
use crate::error::{Error, Result};
use crate::linalg::euclidean;
use crate::rng;

pub const DEFAULT_SUBSAMPLES: usize = 50;
/// A cluster is stable when its mean Jaccard similarity exceeds this.
pub const STABLE_JACCARD: f64 = 0.7;
const MAX_RESAMPLES: usize = 100;

/// Mean silhouette width. Points in singleton clusters contribute 0.
pub fn silhouette(clustering: &Clustering, points: &[Vec<f64>]) -> Result<f64> {
    if clustering.k < 2 {
        return Err(Error::SilhouetteNeedsTwoClusters(clustering.k));
    }
    let n = points.len();
    if n != clustering.assignments.len() {
        return Err(Error::InvalidInput("assignment count differs from point count".into()));
    }
    let sizes = clustering.cluster_sizes();
    let total: f64 = (0..n)
        .map(|i| {
            let own = clustering.assignments[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; clustering.k];
            for j in 0..n {
                if j != i {
                    sums[clustering.assignments[j]] += euclidean(&points[i], &points[j]);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..clustering.k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// Jaccard similarity of two sorted index sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Mean best-match Jaccard similarity of each original cluster.
    pub per_cluster: Vec<f64>,
    pub avg_stability: f64,
    /// Fraction of clusters whose stability exceeds 0.7.
    pub pct_stable_070: f64,
}

fn distinct_count(points: &[Vec<f64>], idx: &[usize]) -> usize {
    let mut keys: Vec<Vec<u64>> = idx
        .iter()
        .map(|&i| points[i].iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Best Jaccard match of every original cluster within one subsample.
///
/// `subsample` holds sorted point indices and `sub_assign` their cluster in
/// the subsample clustering. Original clusters with no point in the
/// subsample yield `None`.
pub fn match_subsample(
    original: &[usize],
    k: usize,
    subsample: &[usize],
    sub_assign: &[usize],
    sub_k: usize,
) -> Vec<Option<f64>> {
    let mut orig_sets = vec![Vec::new(); k];
    let mut sub_sets = vec![Vec::new(); sub_k];
    for (pos, &i) in subsample.iter().enumerate() {
        orig_sets[original[i]].push(i);
        sub_sets[sub_assign[pos]].push(i);
    }
    orig_sets
        .iter()
        .map(|o| {
            if o.is_empty() {
                return None;
            }
            Some(
                sub_sets
                    .iter()
                    .map(|d| jaccard(o, d))
                    .fold(0.0, f64::max),
            )
        })
        .collect()
}

/// Re-cluster `n_subsamples` random halves of the data and measure how well
/// each original cluster is reproduced.
pub fn stability(
    points: &[Vec<f64>],
    original: &Clustering,
    n_subsamples: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let n = points.len();
    let k = original.k;
    let half = n / 2;
    if half < k {
        return Err(Error::InvalidInput(format!(
            "half-subsamples of {n} points cannot hold {k} clusters"
        )));
    }
    let per_sub: Vec<Vec<Option<f64>>> = (0..n_subsamples)
        .into_par_iter()
        .map(|s| -> Result<Vec<Option<f64>>> {
            let mut r = rng::rng(seed, s as u64);
            for _ in 0..MAX_RESAMPLES {
                let mut idx = sample(&mut r, n, half).into_vec();
                idx.sort_unstable();
                if distinct_count(points, &idx) < k {
                    continue;
                }
                let sub_points: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
                let sub = kmedoids(&sub_points, k)?;
                return Ok(match_subsample(
                    &original.assignments,
                    k,
                    &idx,
                    &sub.assignments,
                    k,
                ));
            }
            Err(Error::InvalidInput(format!(
                "could not draw a subsample with {k} distinct points"
            )))
        })
        .collect::<Result<_>>()?;

    let per_cluster: Vec<f64> = (0..k)
        .map(|c| {
            let vals: Vec<f64> = per_sub.iter().filter_map(|v| v[c]).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    let avg_stability = per_cluster.iter().sum::<f64>() / k as f64;
    let pct_stable_070 =
        per_cluster.iter().filter(|&&s| s > STABLE_JACCARD).count() as f64 / k as f64;
    Ok(StabilityReport {
        per_cluster,
        avg_stability,
        pct_stable_070,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clustering(assignments: Vec<usize>, k: usize) -> Clustering {
        Clustering {
            k,
            medoids: vec![0; k],
            assignments,
            total_cost: 0.0,
            swaps: 0,
        }
    }

    #[test]
    fn jaccard_set_arithmetic() {
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[1, 2], &[1, 2]), 1.0);
        assert_eq!(jaccard(&[1], &[2]), 0.0);
    }

    #[test]
    fn subsample_match_uses_shared_points() {
        // original cluster 0 = {1,2,3}; subsample {1,2,3,4}; subsample cluster
        // {2,3,4} is the best match
        let original = vec![1, 0, 0, 0, 1];
        let m = match_subsample(&original, 2, &[1, 2, 3, 4], &[1, 0, 0, 0], 2);
        assert_eq!(m[0], Some(0.5));
        // original cluster 1 = {0,4}; only 4 is in the subsample, matched by {2,3,4}
        assert_eq!(m[1], Some(1.0 / 3.0));
    }

    #[test]
    fn two_singletons_give_zero() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert_eq!(silhouette(&clustering(vec![0, 1], 2), &pts).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_needs_two_clusters() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            silhouette(&clustering(vec![0, 0], 1), &pts),
            Err(Error::SilhouetteNeedsTwoClusters(1))
        ));
    }

    #[test]
    fn separated_pairs_approach_one() {
        let score = |sep: f64| {
            let pts = vec![vec![0.0], vec![1.0], vec![sep], vec![sep + 1.0]];
            silhouette(&clustering(vec![0, 0, 1, 1], 2), &pts).unwrap()
        };
        assert!(score(10.0) < score(100.0));
        assert!(score(1e6) > 0.999_99);
    }
}
