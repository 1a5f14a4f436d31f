//! PAM K-Medoids: greedy BUILD followed by best-improvement SWAP.
//!
//! Each SWAP round evaluates every (medoid, non-medoid) exchange and applies
//! the one with the largest cost reduction, so the result is exactly what
//! classic PAM produces. The per-round cost is O(n²) rather than O(k·n²)
//! because the change in cost for all medoids is accumulated in one pass over
//! the points for each candidate, using each point's nearest and second
//! nearest medoid distances.
//!
//! Ties are broken by lowest point index (BUILD) and by lowest candidate index
//! then lowest medoid slot (SWAP); the algorithm has no random component.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_MAX_ITER: usize = 500;

/// Row-major pairwise dissimilarities.
pub struct DistMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistMatrix {
    pub fn euclidean(points: &[Vec<f64>]) -> Self {
        DistMatrix {
            n: points.len(),
            d: linalg::distance_matrix(points),
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = f(i, j);
            }
        }
        DistMatrix { n, d }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Point index of each medoid; position is the cluster index.
    pub medoids: Vec<usize>,
    /// Cluster index of every point.
    pub assignments: Vec<usize>,
    pub total_cost: f64,
    pub swaps: usize,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy)]
struct Near {
    slot: usize,
    near: f64,
    second: f64,
}

fn nearest_two(dist: &DistMatrix, medoids: &[usize], j: usize) -> Near {
    let mut best = Near {
        slot: 0,
        near: f64::INFINITY,
        second: f64::INFINITY,
    };
    if let Some(own) = medoids.iter().position(|&m| m == j) {
        best.slot = own;
        best.near = 0.0;
        for (s, &m) in medoids.iter().enumerate() {
            if s != own {
                best.second = best.second.min(dist.get(j, m));
            }
        }
        return best;
    }
    for (s, &m) in medoids.iter().enumerate() {
        let d = dist.get(j, m);
        if d < best.near {
            best.second = best.near;
            best.near = d;
            best.slot = s;
        } else if d < best.second {
            best.second = d;
        }
    }
    best
}

fn build(dist: &DistMatrix, k: usize) -> Vec<usize> {
    let n = dist.len();
    let first = (0..n)
        .map(|i| (i, dist.row(i).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |best, (i, s)| if s < best.1 { (i, s) } else { best })
        .0;
    let mut medoids = vec![first];
    let mut is_medoid = vec![false; n];
    is_medoid[first] = true;
    let mut nearest: Vec<f64> = dist.row(first).to_vec();
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            let gain: f64 = dist
                .row(c)
                .iter()
                .zip(&nearest)
                .map(|(dc, dn)| (dn - dc).max(0.0))
                .sum();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        let c = best.0;
        medoids.push(c);
        is_medoid[c] = true;
        for (dn, dc) in nearest.iter_mut().zip(dist.row(c)) {
            *dn = dn.min(*dc);
        }
    }
    medoids
}

/// Run PAM on a precomputed dissimilarity matrix.
pub fn pam(dist: &DistMatrix, k: usize, max_iter: usize) -> Result<Clustering> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let mut medoids = build(dist, k);
    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }
    let mut near: Vec<Near> = (0..n).map(|j| nearest_two(dist, &medoids, j)).collect();
    let mut cost: f64 = near.iter().map(|x| x.near).sum();
    let mut swaps = 0;
    let mut delta = vec![0.0; k];

    while swaps < max_iter {
        let mut best = (0usize, 0usize, 0.0f64);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            delta.iter_mut().for_each(|d| *d = 0.0);
            let mut shared = 0.0;
            for (j, nj) in near.iter().enumerate() {
                let djc = dist.get(j, c);
                if djc < nj.near {
                    shared += djc - nj.near;
                } else {
                    delta[nj.slot] += djc.min(nj.second) - nj.near;
                }
            }
            for (slot, d) in delta.iter().enumerate() {
                let total = shared + d;
                if total < best.2 {
                    best = (c, slot, total);
                }
            }
        }
        if best.2 >= -1e-10 * (1.0 + cost) {
            break;
        }
        let (c, slot, _) = best;
        is_medoid[medoids[slot]] = false;
        medoids[slot] = c;
        is_medoid[c] = true;
        near = (0..n).map(|j| nearest_two(dist, &medoids, j)).collect();
        let new_cost: f64 = near.iter().map(|x| x.near).sum();
        debug_assert!(new_cost <= cost + 1e-9 * (1.0 + cost));
        cost = new_cost;
        swaps += 1;
    }

    Ok(Clustering {
        k,
        assignments: near.iter().map(|x| x.slot).collect(),
        medoids,
        total_cost: cost,
        swaps,
    })
}

/// PAM on points under Euclidean distance.
pub fn kmedoids(points: &[Vec<f64>], k: usize) -> Result<Clustering> {
    if k > points.len() {
        return Err(Error::TooManyClusters { k, n: points.len() });
    }
    pam(&DistMatrix::euclidean(points), k, DEFAULT_MAX_ITER)
}

/// Total cost of a given medoid set.
pub fn medoid_cost(dist: &DistMatrix, medoids: &[usize]) -> f64 {
    (0..dist.len())
        .map(|j| {
            medoids
                .iter()
                .map(|&m| dist.get(j, m))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Assign arbitrary points to the nearest of the given medoid coordinates
/// (lowest cluster index on ties). Returns `(cluster, distance)` per point.
pub fn assign_to_medoids(medoids: &[Vec<f64>], points: &[Vec<f64>]) -> Vec<(usize, f64)> {
    points
        .iter()
        .map(|p| {
            medoids
                .iter()
                .enumerate()
                .map(|(c, m)| (c, linalg::euclidean(p, m)))
                .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n_makes_every_point_a_medoid() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let c = kmedoids(&pts, 5).unwrap();
        assert_eq!(c.total_cost, 0.0);
        let mut m = c.medoids.clone();
        m.sort();
        assert_eq!(m, vec![0, 1, 2, 3, 4]);
        for (slot, &m) in c.medoids.iter().enumerate() {
            assert_eq!(c.assignments[m], slot);
        }
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(kmedoids(&pts, 3), Err(Error::TooManyClusters { k: 3, n: 2 })));
        assert!(kmedoids(&pts, 0).is_err());
    }

    #[test]
    fn duplicate_points_are_allowed() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0]];
        let c = kmedoids(&pts, 3).unwrap();
        assert_eq!(c.total_cost, 0.0);
        for (slot, &m) in c.medoids.iter().enumerate() {
            assert_eq!(c.assignments[m], slot);
        }
    }

    #[test]
    fn two_triads_split_cleanly() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![10.0, 10.0],
            vec![10.1, 10.0],
            vec![10.0, 10.1],
        ];
        let c = kmedoids(&pts, 2).unwrap();
        assert_eq!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.assignments[0], c.assignments[2]);
        assert_eq!(c.assignments[3], c.assignments[5]);
        assert_ne!(c.assignments[0], c.assignments[3]);
    }

    #[test]
    fn assignment_prefers_lowest_cluster_on_ties() {
        let a = assign_to_medoids(&[vec![-1.0], vec![1.0]], &[vec![0.0], vec![0.9]]);
        assert_eq!(a[0].0, 0);
        assert_eq!(a[1].0, 1);
    }
}
