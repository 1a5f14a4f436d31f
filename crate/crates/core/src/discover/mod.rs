//! Cluster discovery: PCA projection, PAM K-Medoids, quality metrics and the
//! cluster → category mapping.

pub mod kmedoids;
pub mod labels;
pub mod pca;
pub mod quality;

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

pub use kmedoids::{assign_to_medoids, kmedoids, pam, Clustering, DistMatrix};
pub use labels::{label_clusters, CategoryMap, DEFAULT_NOISE_CATEGORY};
pub use pca::{fit_pca, PcaBasis, DEFAULT_PVE_THRESHOLD};
pub use quality::{jaccard, silhouette, stability, StabilityReport, DEFAULT_SUBSAMPLES};

use crate::error::Result;
use crate::linalg::euclidean;
use crate::rng;
use crate::vectorize::SessionVector;

/// Quality summary for one candidate number of clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub k: usize,
    pub avg_silhouette: f64,
    pub per_cluster_stability: Vec<f64>,
    pub avg_stability: f64,
    pub pct_stable_070: f64,
    pub noise_share: f64,
}

/// How the Noise cluster is identified when scoring candidate k values.
#[derive(Debug, Clone, Copy)]
pub enum NoiseRule<'a> {
    /// The cluster with the largest mean distance to its medoid.
    MostDispersed,
    /// Clusters whose majority reference label is the noise name.
    Reference { labels: &'a [String], noise: &'a str },
}

/// Cluster with the largest mean member-to-medoid distance (lowest index on
/// ties). Long-tail sessions share no dominant event, so their cluster is the
/// most spread out.
pub fn most_dispersed_cluster(clustering: &Clustering, points: &[Vec<f64>]) -> usize {
    let mut sum = vec![0.0; clustering.k];
    let mut cnt = vec![0usize; clustering.k];
    for (i, &c) in clustering.assignments.iter().enumerate() {
        sum[c] += euclidean(&points[i], &points[clustering.medoids[c]]);
        cnt[c] += 1;
    }
    (0..clustering.k)
        .map(|c| (c, if cnt[c] > 0 { sum[c] / cnt[c] as f64 } else { 0.0 }))
        .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b })
        .0
}

pub fn noise_share(clustering: &Clustering, points: &[Vec<f64>], rule: NoiseRule<'_>) -> f64 {
    let n = clustering.assignments.len() as f64;
    match rule {
        NoiseRule::MostDispersed => {
            let c = most_dispersed_cluster(clustering, points);
            clustering.cluster_sizes()[c] as f64 / n
        }
        NoiseRule::Reference { labels, noise } => {
            let fallback = most_dispersed_cluster(clustering, points);
            let map = CategoryMap::from_majority(
                &clustering.assignments,
                labels,
                clustering.k,
                noise,
                fallback,
            );
            clustering
                .assignments
                .iter()
                .filter(|&&c| map.clusters[&c] == noise)
                .count() as f64
                / n
        }
    }
}

/// Cluster, then score silhouette, stability and Noise share.
pub fn evaluate_k(
    points: &[Vec<f64>],
    k: usize,
    n_subsamples: usize,
    seed: u64,
    rule: NoiseRule<'_>,
) -> Result<(Clustering, ClusterQuality)> {
    let clustering = kmedoids(points, k)?;
    let avg_silhouette = silhouette(&clustering, points)?;
    let stab = stability(points, &clustering, n_subsamples, rng::derive(seed, k as u64))?;
    let quality = ClusterQuality {
        k,
        avg_silhouette,
        per_cluster_stability: stab.per_cluster,
        avg_stability: stab.avg_stability,
        pct_stable_070: stab.pct_stable_070,
        noise_share: noise_share(&clustering, points, rule),
    };
    Ok((clustering, quality))
}

/// Render candidate qualities as a metric × k table (tab separated).
pub fn quality_table(rows: &[ClusterQuality]) -> String {
    let mut out = String::from("metric");
    for q in rows {
        let _ = write!(out, "\t{}", q.k);
    }
    out.push('\n');
    type Row = (&'static str, fn(&ClusterQuality) -> String);
    let lines: [Row; 4] = [
        ("pct_in_noise_cluster", |q| format!("{:.1}%", 100.0 * q.noise_share)),
        ("avg_stability_jaccard", |q| format!("{:.3}", q.avg_stability)),
        ("avg_silhouette", |q| format!("{:.3}", q.avg_silhouette)),
        ("pct_stable_above_0.7", |q| format!("{:.1}%", 100.0 * q.pct_stable_070)),
    ];
    for (name, f) in lines {
        out.push_str(name);
        for q in rows {
            out.push('\t');
            out.push_str(&f(q));
        }
        out.push('\n');
    }
    out
}

/// Seeded sample of `size` indices out of `n` (all of them when `size >= n`),
/// in ascending order.
pub fn sample_indices(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut idx = sample(&mut rng::rng(seed, 0x5A3F), n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Frozen output of discovery: projection, medoids and category names.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub pca: PcaBasis,
    pub medoid_coords: Vec<Vec<f64>>,
    pub medoid_ids: Vec<String>,
    pub map: CategoryMap,
}

impl ClusterModel {
    pub fn project(&self, vectors: &[SessionVector]) -> Vec<Vec<f64>> {
        let dim = self.pca.dim();
        vectors
            .iter()
            .map(|v| self.pca.project(&v.to_dense(dim)))
            .collect()
    }

    pub fn assign(&self, vectors: &[SessionVector]) -> Vec<usize> {
        assign_to_medoids(&self.medoid_coords, &self.project(vectors))
            .into_iter()
            .map(|(c, _)| c)
            .collect()
    }

    pub fn label(&self, vectors: &[SessionVector]) -> Result<Vec<String>> {
        let zero: Vec<bool> = vectors.iter().map(|v| v.zero).collect();
        label_clusters(&self.assign(vectors), &zero, &self.map)
    }
}

/// Where cluster names come from.
#[derive(Debug, Clone)]
pub enum MapSource<'a> {
    /// A hand-written cluster -> category mapping.
    Supplied(CategoryMap),
    /// Majority reference label per cluster (one label per row).
    Reference { labels: &'a [String], noise: String },
    /// `C0..C{k-1}`, with the most dispersed cluster as Noise.
    Identity,
}

#[derive(Debug, Clone)]
pub struct DiscoverParams {
    /// Candidate numbers of clusters to score.
    pub k_list: Vec<usize>,
    pub final_k: usize,
    pub pve_threshold: f64,
    pub n_subsamples: usize,
    /// Rows clustered directly; the rest join their nearest medoid.
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for DiscoverParams {
    fn default() -> Self {
        DiscoverParams {
            k_list: Vec::new(),
            final_k: 13,
            pve_threshold: DEFAULT_PVE_THRESHOLD,
            n_subsamples: DEFAULT_SUBSAMPLES,
            sample_size: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub pca: PcaBasis,
    pub quality: Vec<ClusterQuality>,
    pub sample: Vec<usize>,
    pub clustering: Clustering,
    /// Cluster of every input row.
    pub assignments: Vec<usize>,
    pub map: CategoryMap,
    /// Category of every input row.
    pub labels: Vec<String>,
}

/// Fit PCA on all rows, cluster a seeded sample for each candidate k and for
/// the final k, assign every row to its nearest final medoid and name the
/// clusters.
pub fn discover_categories(
    rows: &[Vec<f64>],
    zero: &[bool],
    params: &DiscoverParams,
    source: MapSource<'_>,
) -> Result<Discovery> {
    if rows.len() != zero.len() {
        return Err(crate::Error::InvalidInput("rows and zero flags differ in length".into()));
    }
    let pca = fit_pca(rows, params.pve_threshold)?;
    let projected: Vec<Vec<f64>> = rows.iter().map(|r| pca.project(r)).collect();
    let sample = sample_indices(rows.len(), params.sample_size, params.seed);
    let points: Vec<Vec<f64>> = sample.iter().map(|&i| projected[i].clone()).collect();
    let sample_ref: Option<Vec<String>> = match &source {
        MapSource::Reference { labels, .. } => Some(sample.iter().map(|&i| labels[i].clone()).collect()),
        _ => None,
    };
    let rule = match (&source, &sample_ref) {
        (MapSource::Reference { noise, .. }, Some(l)) => NoiseRule::Reference { labels: l, noise },
        _ => NoiseRule::MostDispersed,
    };
    let mut quality = Vec::new();
    let mut final_clustering = None;
    for &k in &params.k_list {
        let (c, q) = evaluate_k(&points, k, params.n_subsamples, params.seed, rule)?;
        if k == params.final_k {
            final_clustering = Some(c);
        }
        quality.push(q);
    }
    let clustering = match final_clustering {
        Some(c) => c,
        None => kmedoids(&points, params.final_k)?,
    };
    let medoids: Vec<Vec<f64>> = clustering.medoids.iter().map(|&m| points[m].clone()).collect();
    let assignments: Vec<usize> = assign_to_medoids(&medoids, &projected)
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let k = params.final_k;
    let map = match source {
        MapSource::Supplied(m) => m,
        MapSource::Reference { labels, noise } => {
            let fallback = most_dispersed_cluster(&clustering, &points);
            CategoryMap::from_majority(&assignments, labels, k, &noise, fallback)
        }
        MapSource::Identity => CategoryMap::identity(k, most_dispersed_cluster(&clustering, &points)),
    };
    map.validate(k)?;
    let labels = label_clusters(&assignments, zero, &map)?;
    Ok(Discovery {
        pca,
        quality,
        sample,
        clustering,
        assignments,
        map,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_is_sorted_and_seeded() {
        let a = sample_indices(100, 10, 3);
        assert_eq!(a, sample_indices(100, 10, 3));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_indices(5, 10, 3), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn dispersed_cluster_is_found() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.01, 0.0],
            vec![10.0, 0.0],
            vec![12.0, 1.0],
            vec![8.0, -1.0],
        ];
        let c = kmedoids(&pts, 2).unwrap();
        let d = most_dispersed_cluster(&c, &pts);
        assert_eq!(c.assignments[2], d);
        assert!((noise_share(&c, &pts, NoiseRule::MostDispersed) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn quality_table_layout() {
        let q = ClusterQuality {
            k: 13,
            avg_silhouette: 0.33,
            per_cluster_stability: vec![0.89],
            avg_stability: 0.89,
            pct_stable_070: 1.0,
            noise_share: 0.15,
        };
        let t = quality_table(&[q]);
        assert!(t.starts_with("metric\t13\n"));
        assert!(t.contains("pct_in_noise_cluster\t15.0%"));
        assert!(t.contains("pct_stable_above_0.7\t100.0%"));
    }
}
