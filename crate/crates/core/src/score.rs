//! Batch scoring of session logs against a frozen model, plus the
//! append-only run log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::day_of;
use crate::classify::forest::argmax;
use crate::classify::FeatureEncoder;
use crate::error::{Error, Result};
use crate::ingest::Session;
use crate::io;
use crate::modelstore::ModelArtifact;
use crate::vectorize::event_counts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSession {
    pub session_id: String,
    pub user_id: String,
    pub platform: String,
    pub start: u64,
    pub end: u64,
    pub n_events: usize,
    pub category: String,
    /// Class name -> probability, in class order.
    pub probabilities: BTreeMap<String, f64>,
    pub model_version: String,
}

impl ScoredSession {
    pub fn duration_ms(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }
}

/// A model ready to score: artifact, its encoder and its version string.
pub struct Scorer<'a> {
    model: &'a ModelArtifact,
    encoder: FeatureEncoder,
    version: String,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a ModelArtifact) -> Self {
        Scorer {
            encoder: model.encoder(),
            version: model.version(),
            model,
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn score(&self, session: &Session) -> ScoredSession {
        let counts = event_counts(&session.events);
        let x = self.encoder.encode(&counts, &self.model.vocab);
        let probs = self.model.forest.predict_proba(&x);
        let classes = self.model.class_names();
        ScoredSession {
            session_id: session.session_id.clone(),
            user_id: session.user_id.clone(),
            platform: session.platform.clone(),
            start: session.start,
            end: session.end,
            n_events: session.events.len(),
            category: classes[argmax(&probs)].clone(),
            probabilities: classes.iter().cloned().zip(probs).collect(),
            model_version: self.version.clone(),
        }
    }
}

/// Score every session; output order follows input order for any
/// `parallelism` (0 means the current rayon pool).
pub fn score_batch(
    sessions: &[Session],
    model: &ModelArtifact,
    parallelism: usize,
) -> Result<Vec<ScoredSession>> {
    let scorer = Scorer::new(model);
    let run = || sessions.par_iter().map(|s| scorer.score(s)).collect();
    if parallelism == 0 {
        return Ok(run());
    }
    Ok(crate::thread_pool(parallelism)?.install(run))
}

/// Sessions from a JSON-lines stream. Lines that fail to parse or violate
/// `start <= end` are skipped and counted.
pub fn read_sessions_lenient<R: BufRead>(reader: R) -> Result<(Vec<Session>, usize)> {
    let mut sessions = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Session>(&line) {
            Ok(s) if s.start <= s.end => sessions.push(s),
            _ => skipped += 1,
        }
    }
    Ok((sessions, skipped))
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRun {
    pub run_id: u64,
    pub model_version: String,
    pub input_digest: String,
    pub n_scored: usize,
    pub n_skipped: usize,
    pub counts: BTreeMap<String, usize>,
    pub output: PathBuf,
}

const RUN_LOG_HEADER: &str = "run_id\tmodel_version\tinput_digest\tscored\tskipped\tcounts\toutput";

impl ScoreRun {
    fn to_line(&self) -> String {
        let counts: Vec<String> = self.counts.iter().map(|(c, n)| format!("{c}={n}")).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.run_id,
            self.model_version,
            self.input_digest,
            self.n_scored,
            self.n_skipped,
            counts.join(";"),
            self.output.display()
        )
    }

    fn from_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return None;
        }
        let mut counts = BTreeMap::new();
        for kv in f[5].split(';').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=')?;
            counts.insert(k.to_string(), v.parse().ok()?);
        }
        Some(ScoreRun {
            run_id: f[0].parse().ok()?,
            model_version: f[1].to_string(),
            input_digest: f[2].to_string(),
            n_scored: f[3].parse().ok()?,
            n_skipped: f[4].parse().ok()?,
            counts,
            output: PathBuf::from(f[6]),
        })
    }
}

pub fn read_run_log(path: &Path) -> Result<Vec<ScoreRun>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && *l != RUN_LOG_HEADER)
        .map(|(i, l)| {
            ScoreRun::from_line(l).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "malformed run log row".into(),
            })
        })
        .collect()
}

/// Append `run` to the log, numbering it after the existing rows.
pub fn append_run(path: &Path, mut run: ScoreRun) -> Result<ScoreRun> {
    let previous = read_run_log(path)?;
    run.run_id = previous.last().map_or(1, |r| r.run_id + 1);
    let fresh = previous.is_empty() && !path.exists();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(RUN_LOG_HEADER);
        text.push('\n');
    }
    text.push_str(&run.to_line());
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(run)
}

pub fn category_counts(scored: &[ScoredSession]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in scored {
        *counts.entry(s.category.clone()).or_insert(0) += 1;
    }
    counts
}

/// Score a sessions file into `output` and record the run in `run_log`.
pub fn score_file(
    model: &ModelArtifact,
    sessions_path: &Path,
    output: &Path,
    run_log: Option<&Path>,
    parallelism: usize,
) -> Result<ScoreRun> {
    let bytes = std::fs::read(sessions_path).map_err(|e| Error::io(sessions_path, e))?;
    let (sessions, n_skipped) = read_sessions_lenient(bytes.as_slice())?;
    let scored = score_batch(&sessions, model, parallelism)?;
    io::write_jsonl(output, &scored)?;
    let run = ScoreRun {
        run_id: 0,
        model_version: model.version(),
        input_digest: io::sha256_hex(&bytes),
        n_scored: scored.len(),
        n_skipped,
        counts: category_counts(&scored),
        output: output.to_path_buf(),
    };
    match run_log {
        Some(log) => append_run(log, run),
        None => Ok(run),
    }
}

/// Per-day (UTC, by session start) category counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DailyCategories {
    pub categories: Vec<String>,
    pub days: BTreeMap<i64, BTreeMap<String, usize>>,
}

impl DailyCategories {
    pub fn from_scored(scored: &[ScoredSession]) -> Self {
        let mut days: BTreeMap<i64, BTreeMap<String, usize>> = BTreeMap::new();
        for s in scored {
            *days
                .entry(day_of(s.start))
                .or_default()
                .entry(s.category.clone())
                .or_insert(0) += 1;
        }
        let mut categories: Vec<String> = days.values().flat_map(|m| m.keys().cloned()).collect();
        categories.sort();
        categories.dedup();
        DailyCategories { categories, days }
    }

    pub fn count(&self, day: i64, category: &str) -> usize {
        self.days
            .get(&day)
            .and_then(|m| m.get(category))
            .copied()
            .unwrap_or(0)
    }

    /// Proportions per day; each day sums to 1.
    pub fn proportions(&self) -> BTreeMap<i64, BTreeMap<String, f64>> {
        self.days
            .iter()
            .map(|(&day, m)| {
                let total: usize = m.values().sum();
                let props = self
                    .categories
                    .iter()
                    .map(|c| (c.clone(), self.count(day, c) as f64 / total as f64))
                    .collect();
                (day, props)
            })
            .collect()
    }

    /// `date, category, count, proportion` rows.
    pub fn to_table(&self) -> String {
        let mut out = String::from("date\tcategory\tcount\tproportion\n");
        for (day, props) in self.proportions() {
            let date = crate::analytics::day_to_date(day);
            for (c, p) in props {
                let _ = writeln!(out, "{date}\t{c}\t{}\t{p:.6}", self.count(day, &c));
            }
        }
        out
    }
}

/// Daily counts and proportions for a completed run.
pub fn run_report(run: &ScoreRun) -> Result<DailyCategories> {
    let scored: Vec<ScoredSession> = io::read_jsonl(&run.output)?;
    Ok(DailyCategories::from_scored(&scored))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(day: u64, cat: &str) -> ScoredSession {
        ScoredSession {
            session_id: format!("u:{day}"),
            user_id: "u".into(),
            platform: "web".into(),
            start: day * 86_400_000 + 5,
            end: day * 86_400_000 + 10,
            n_events: 2,
            category: cat.into(),
            probabilities: BTreeMap::new(),
            model_version: "v".into(),
        }
    }

    #[test]
    fn single_category_day_has_proportion_one() {
        let d = DailyCategories::from_scored(&[scored(3, "A"), scored(3, "A")]);
        assert_eq!(d.proportions()[&3]["A"], 1.0);
    }

    #[test]
    fn daily_proportions_sum_to_one() {
        let s: Vec<_> = (0..20)
            .map(|i| scored(i % 2, ["A", "B", "C"][(i % 3) as usize]))
            .collect();
        for (_, props) in DailyCategories::from_scored(&s).proportions() {
            assert!((props.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_lines_are_skipped_and_counted() {
        let good = serde_json::to_string(&Session {
            session_id: "a:1".into(),
            user_id: "a".into(),
            platform: "web".into(),
            start: 1,
            end: 2,
            events: vec!["X".into()],
        })
        .unwrap();
        let text = format!("{good}\n{{oops\n\n{good}\n{{\"session_id\":1}}\n");
        let (s, skipped) = read_sessions_lenient(text.as_bytes()).unwrap();
        assert_eq!((s.len(), skipped), (2, 2));
    }

    #[test]
    fn run_log_is_append_only_and_numbered() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("runs.tsv");
        let run = ScoreRun {
            run_id: 0,
            model_version: "abc".into(),
            input_digest: "d".into(),
            n_scored: 3,
            n_skipped: 0,
            counts: [("A".to_string(), 2), ("B".to_string(), 1)].into_iter().collect(),
            output: dir.path().join("out.jsonl"),
        };
        let first = append_run(&log, run.clone()).unwrap();
        let before = std::fs::read_to_string(&log).unwrap();
        let second = append_run(&log, run).unwrap();
        assert_eq!((first.run_id, second.run_id), (1, 2));
        let after = std::fs::read_to_string(&log).unwrap();
        assert!(after.starts_with(&before));
        assert_eq!(read_run_log(&log).unwrap(), vec![first, second]);
    }
}
