use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

pub const DEFAULT_PVE_THRESHOLD: f64 = 0.80;

/// Principal axes of a set of session vectors.
///
/// All `dim` components are kept so data can be reconstructed exactly;
/// projection uses the leading `k_selected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Cumulative proportion of variance explained by the first `i + 1`
    /// components.
    pub pve: Vec<f64>,
    pub k_selected: usize,
}

pub fn fit_pca(rows: &[Vec<f64>], pve_threshold: f64) -> Result<PcaBasis> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 2 vectors, got {}",
            rows.len()
        )));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidInput("PCA rows must share a positive dimension".into()));
    }
    if !(pve_threshold > 0.0 && pve_threshold <= 1.0) {
        return Err(Error::InvalidInput(format!("pve threshold {pve_threshold} not in (0, 1]")));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = SymMatrix::zeros(dim);
    let mut centered = vec![0.0; dim];
    for r in rows {
        for (c, (x, m)) in centered.iter_mut().zip(r.iter().zip(&mean)) {
            *c = x - m;
        }
        for i in 0..dim {
            if centered[i] == 0.0 {
                continue;
            }
            let ci = centered[i];
            for (j, cj) in centered.iter().enumerate().skip(i) {
                cov.data[i * dim + j] += ci * cj;
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov.get(i, j) / (n - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }

    let eig = linalg::symmetric_eigen(&cov);
    // rank-deficient data leaves tiny negative rounding residue
    let eigenvalues: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let pve: Vec<f64> = if total > 0.0 {
        let mut acc = 0.0;
        let mut p: Vec<f64> = eigenvalues
            .iter()
            .map(|v| {
                acc += v;
                acc / total
            })
            .collect();
        *p.last_mut().expect("dim > 0") = 1.0;
        p
    } else {
        vec![1.0; dim]
    };
    let k_selected = select_components(&pve, pve_threshold);
    Ok(PcaBasis {
        mean,
        components: eig.vectors,
        eigenvalues,
        pve,
        k_selected,
    })
}

/// Smallest k whose cumulative PVE reaches the threshold.
pub fn select_components(pve: &[f64], threshold: f64) -> usize {
    pve.iter()
        .position(|&p| p >= threshold - 1e-12)
        .map_or(pve.len(), |i| i + 1)
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project_k(&self, x: &[f64], k: usize) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components[..k]
            .iter()
            .map(|c| linalg::dot(c, &centered))
            .collect()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.project_k(x, self.k_selected)
    }

    /// Map projected coordinates back into the original space (centered).
    pub fn back_project(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (c, comp) in coords.iter().zip(&self.components) {
            for (o, v) in out.iter_mut().zip(comp) {
                *o += c * v;
            }
        }
        out
    }
}
