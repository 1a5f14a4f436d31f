use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::features::FeatureMode;
use super::forest::ForestModel;
use crate::rng;

/// True-class × predicted-class counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(classes: &[String], truth: &[usize], predicted: &[usize]) -> Self {
        let k = classes.len();
        let mut counts = vec![vec![0; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[t][p] += 1;
        }
        ConfusionMatrix {
            classes: classes.to_vec(),
            counts,
        }
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    /// Row-stochastic rates; `None` for classes absent from the test set.
    pub fn rates(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row.iter().map(|&c| c as f64 / n as f64).collect())
            })
            .collect()
    }

    pub fn class_error(&self, class: usize) -> Option<f64> {
        let n = self.support(class);
        (n > 0).then(|| 1.0 - self.counts[class][class] as f64 / n as f64)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    pub fn total_error(&self) -> f64 {
        1.0 - self.accuracy()
    }

    /// Classes with no test rows; their rows are left out of the table.
    pub fn empty_classes(&self) -> Vec<&str> {
        (0..self.classes.len())
            .filter(|&c| self.support(c) == 0)
            .map(|c| self.classes[c].as_str())
            .collect()
    }

    /// Percent table, one row per true class.
    pub fn to_table(&self) -> String {
        let mut out = String::from("category");
        for c in &self.classes {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(self.rates()) {
            let Some(row) = row else { continue };
            out.push_str(name);
            for r in row {
                let _ = write!(out, "\t{:.1}%", 100.0 * r);
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate(model: &ForestModel, rows: &[Vec<f64>], labels: &[usize]) -> ConfusionMatrix {
    let predicted: Vec<usize> = rows.iter().map(|r| model.predict(r)).collect();
    ConfusionMatrix::from_predictions(&model.class_names, labels, &predicted)
}

/// Seeded split holding out `test_frac` of each class. Classes with at least
/// two rows keep at least one row on each side.
pub fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    test_frac: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng::rng(seed, c as u64));
        let n = idx.len();
        let mut n_test = (n as f64 * test_frac).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        } else {
            n_test = 0;
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Per-class test error under each feature mode.
#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub results: Vec<(FeatureMode, ConfusionMatrix)>,
}

impl AblationReport {
    pub fn get(&self, mode: FeatureMode) -> Option<&ConfusionMatrix> {
        self.results.iter().find(|(m, _)| *m == mode).map(|(_, c)| c)
    }

    pub fn class_error(&self, mode: FeatureMode, class: &str) -> Option<f64> {
        let cm = self.get(mode)?;
        cm.class_error(cm.class_index(class)?)
    }

    /// Class × mode error table with a trailing total row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("category");
        for (m, _) in &self.results {
            let _ = write!(out, "\t{}", m.as_str());
        }
        out.push('\n');
        let Some((_, first)) = self.results.first() else {
            return out;
        };
        for (ci, name) in first.classes.iter().enumerate() {
            out.push_str(name);
            for (_, cm) in &self.results {
                match cm.class_error(ci) {
                    Some(e) => {
                        let _ = write!(out, "\t{:.1}%", 100.0 * e);
                    }
                    None => out.push_str("\tn/a"),
                }
            }
            out.push('\n');
        }
        out.push_str("total");
        for (_, cm) in &self.results {
            let _ = write!(out, "\t{:.1}%", 100.0 * cm.total_error());
        }
        out.push('\n');
        out
    }
}
