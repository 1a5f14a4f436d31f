//! File-level stages shared by the command line and the one-shot pipeline,
//! and the pipeline itself with its manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytics::{self, ReportOptions};
use crate::classify::{
    self, parse_feature_list, ranking, AblationReport, ConfusionMatrix, FeatureMode, FeatureSplit,
    ForestParams, SplitProvenance,
};
use crate::discover::{self, CategoryMap, ClusterQuality, DiscoverParams, Discovery, MapSource};
use crate::error::{Error, Result};
use crate::ingest::{self, GapEstimate, GapPolicy, Session};
use crate::io;
use crate::modelstore::{self, ModelArtifact, FORMAT_VERSION};
use crate::rng;
use crate::score::{self, ScoreRun, ScoredSession};
use crate::synthgen::{self, SynthConfig, TruthRecord};
use crate::vectorize::{self, VectorRecord, Vocabulary};

// ---------------------------------------------------------------- sessionize

#[derive(Debug, Clone)]
pub struct SessionizeArgs {
    pub input: PathBuf,
    pub gap: GapPolicy,
    pub min_events: usize,
    pub denylist: Option<PathBuf>,
    pub output: PathBuf,
    pub daily_counts_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionizeSummary {
    pub sessions: usize,
    pub dropped_sessions: usize,
    pub dropped_events: usize,
    pub report: ingest::RejectReport,
    pub gaps: BTreeMap<String, GapEstimate>,
}

pub fn sessionize_stage(args: &SessionizeArgs) -> Result<SessionizeSummary> {
    let denylist = match &args.denylist {
        Some(p) => ingest::parse_denylist(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => HashSet::new(),
    };
    let parsed = ingest::parse_events(io::open(&args.input)?, &denylist)?;
    let (out, gaps) = ingest::sessionize_all(&parsed, args.gap, args.min_events);
    io::write_jsonl(&args.output, &out.sessions)?;
    if let Some(p) = &args.daily_counts_out {
        let csv = ranking::daily_counts_csv(&ingest::daily_event_counts(&parsed));
        std::fs::write(p, csv).map_err(|e| Error::io(p, e))?;
    }
    Ok(SessionizeSummary {
        sessions: out.sessions.len(),
        dropped_sessions: out.dropped_sessions,
        dropped_events: out.dropped_events,
        report: parsed.report,
        gaps,
    })
}

// --------------------------------------------------------------------- vocab

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    modelstore::decode_vocabulary(&text)
}

/// Fit the vocabulary on a sessions file; optionally write every session's
/// vector as well.
pub fn vocab_stage(
    sessions_path: &Path,
    min_frac: f64,
    output: &Path,
    vectors_out: Option<&Path>,
) -> Result<Vocabulary> {
    let sessions: Vec<Session> = io::read_jsonl(sessions_path)?;
    let vocab = vectorize::fit_vocabulary(&sessions, min_frac)?;
    std::fs::write(output, modelstore::encode_vocabulary(&vocab)).map_err(|e| Error::io(output, e))?;
    if let Some(p) = vectors_out {
        let records: Vec<VectorRecord> = vectorize::vectorize_all(&sessions, &vocab)
            .iter()
            .map(|v| VectorRecord::from_vector(v, &vocab))
            .collect();
        io::write_jsonl(p, &records)?;
    }
    Ok(vocab)
}

// ------------------------------------------------------------------- cluster

/// A session with its discovered cluster and category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSession {
    pub session_id: String,
    pub cluster: usize,
    pub category: String,
    pub raw_counts: BTreeMap<String, u32>,
}

/// Dense rows over the sorted union of event names found in the records
/// (the vocabulary order when the records come from one vocabulary).
pub fn dense_rows(records: &[VectorRecord]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut names: Vec<String> = records
        .iter()
        .flat_map(|r| r.weights.keys().cloned())
        .collect();
    names.sort();
    names.dedup();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let rows = records
        .iter()
        .map(|r| {
            let mut d = vec![0.0; names.len()];
            for (n, w) in &r.weights {
                d[index[n.as_str()]] = *w;
            }
            d
        })
        .collect();
    (names, rows)
}

pub fn read_truth(path: &Path) -> Result<HashMap<String, String>> {
    let truth: Vec<TruthRecord> = io::read_jsonl(path)?;
    Ok(truth.into_iter().map(|t| (t.session_id, t.archetype)).collect())
}

#[derive(Debug, Clone)]
pub enum MapSpec {
    File(PathBuf),
    Truth(PathBuf),
    Identity,
}

#[derive(Debug, Clone)]
pub struct ClusterArgs {
    pub vectors: PathBuf,
    pub params: DiscoverParams,
    pub mapping: MapSpec,
    pub report: Option<PathBuf>,
    pub labeled_out: Option<PathBuf>,
    pub map_out: Option<PathBuf>,
}

pub fn cluster_records(
    records: &[VectorRecord],
    params: &DiscoverParams,
    mapping: &MapSpec,
) -> Result<Discovery> {
    let (_, rows) = dense_rows(records);
    let zero: Vec<bool> = records.iter().map(|r| r.zero).collect();
    match mapping {
        MapSpec::File(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            discover::discover_categories(&rows, &zero, params, MapSource::Supplied(CategoryMap::parse(&text)?))
        }
        MapSpec::Truth(p) => {
            let truth = read_truth(p)?;
            let labels = records
                .iter()
                .map(|r| {
                    truth.get(&r.session_id).cloned().ok_or_else(|| {
                        Error::InvalidInput(format!("session {} missing from truth file", r.session_id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            discover::discover_categories(
                &rows,
                &zero,
                params,
                MapSource::Reference {
                    labels: &labels,
                    noise: discover::DEFAULT_NOISE_CATEGORY.to_string(),
                },
            )
        }
        MapSpec::Identity => discover::discover_categories(&rows, &zero, params, MapSource::Identity),
    }
}

pub fn cluster_stage(args: &ClusterArgs) -> Result<(Discovery, Vec<LabeledSession>)> {
    let records: Vec<VectorRecord> = io::read_jsonl(&args.vectors)?;
    let d = cluster_records(&records, &args.params, &args.mapping)?;
    if let Some(p) = &args.report {
        let text = cluster_report(&d.quality, &d);
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    if let Some(p) = &args.map_out {
        std::fs::write(p, d.map.to_text()).map_err(|e| Error::io(p, e))?;
    }
    let labeled: Vec<LabeledSession> = records
        .into_iter()
        .zip(d.assignments.iter().zip(&d.labels))
        .map(|(r, (&cluster, category))| LabeledSession {
            session_id: r.session_id,
            cluster,
            category: category.clone(),
            raw_counts: r.raw_counts,
        })
        .collect();
    if let Some(p) = &args.labeled_out {
        io::write_jsonl(p, &labeled)?;
    }
    Ok((d, labeled))
}

fn cluster_report(quality: &[ClusterQuality], d: &Discovery) -> String {
    let mut out = discover::quality_table(quality);
    let sizes = {
        let mut s = vec![0usize; d.map.clusters.len()];
        for &c in &d.assignments {
            s[c] += 1;
        }
        s
    };
    out.push_str(&format!(
        "\n# final k = {}, pca components = {} (pve {:.3})\ncluster\tcategory\tsessions\n",
        d.clustering.k,
        d.pca.k_selected,
        d.pca.pve[d.pca.k_selected - 1]
    ));
    for (c, name) in &d.map.clusters {
        out.push_str(&format!("{c}\t{name}\t{}\n", sizes[*c]));
    }
    out
}

// --------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub enum ScoringSource {
    List(Vec<String>),
    File(PathBuf),
    /// Grow the scoring set along a stability ranking of daily counts.
    Ranked {
        daily_counts: PathBuf,
        invert: bool,
        target_accuracy: f64,
        max_features: usize,
    },
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub scoring: ScoringSource,
    pub mode: FeatureMode,
    pub forest: ForestParams,
    pub ablation: bool,
    pub platform: String,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelArtifact,
    pub confusion: ConfusionMatrix,
    pub ablation: Option<AblationReport>,
    pub dropped_scoring: Vec<String>,
}

pub fn resolve_split(
    source: &ScoringSource,
    labeled: &[LabeledSession],
    vocab: &Vocabulary,
    forest: &ForestParams,
) -> Result<(FeatureSplit, Vec<String>)> {
    match source {
        ScoringSource::List(names) => FeatureSplit::new(names.iter().cloned(), vocab, SplitProvenance::ManualList),
        ScoringSource::File(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            FeatureSplit::new(parse_feature_list(&text), vocab, SplitProvenance::ManualList)
        }
        ScoringSource::Ranked {
            daily_counts,
            invert,
            target_accuracy,
            max_features,
        } => {
            let text = std::fs::read_to_string(daily_counts).map_err(|e| Error::io(daily_counts, e))?;
            let mut rank = classify::rank_event_stability(&ranking::parse_daily_counts_csv(&text)?)?;
            if *invert {
                rank = rank.inverted();
            }
            let counts: Vec<_> = labeled.iter().map(|l| l.raw_counts.clone()).collect();
            let labels: Vec<_> = labeled.iter().map(|l| l.category.clone()).collect();
            let (split, _) = classify::select_scoring_by_ranking(
                &rank,
                &counts,
                &labels,
                vocab,
                forest,
                *target_accuracy,
                1,
                *max_features,
            )?;
            Ok((split, Vec::new()))
        }
    }
}

pub fn train_model(labeled: &[LabeledSession], vocab: &Vocabulary, args: &TrainArgs) -> Result<TrainOutcome> {
    if labeled.is_empty() {
        return Err(Error::InvalidInput("no labeled sessions to train on".into()));
    }
    let (split, dropped_scoring) = resolve_split(&args.scoring, labeled, vocab, &args.forest)?;
    let counts: Vec<_> = labeled.iter().map(|l| l.raw_counts.clone()).collect();
    let labels: Vec<_> = labeled.iter().map(|l| l.category.clone()).collect();
    let (trained, ablation) = if args.ablation {
        let (report, models) = classify::run_ablation(&counts, &labels, vocab, &split, &args.forest)?;
        let chosen = models
            .into_iter()
            .find(|(m, _)| *m == args.mode)
            .map(|(_, t)| t)
            .expect("ablation trains every mode");
        (chosen, Some(report))
    } else {
        (
            classify::train_classifier(&counts, &labels, vocab, &split, args.mode, &args.forest)?,
            None,
        )
    };
    let mut metrics = BTreeMap::new();
    metrics.insert("test_accuracy".to_string(), trained.test_confusion.accuracy());
    metrics.insert("train_sessions".to_string(), trained.train_idx.len() as f64);
    metrics.insert("test_sessions".to_string(), trained.test_idx.len() as f64);
    if let Some(report) = &ablation {
        for (mode, cm) in &report.results {
            metrics.insert(format!("test_accuracy_{}", mode.as_str()), cm.accuracy());
        }
    }
    let model = ModelArtifact {
        format_version: FORMAT_VERSION,
        created_at_ms: args.created_at_ms,
        platform: args.platform.clone(),
        mode: args.mode,
        vocab: vocab.clone(),
        split,
        eta_mean: trained.encoder.eta_mean,
        forest: trained.forest,
        metrics,
    };
    Ok(TrainOutcome {
        model,
        confusion: trained.test_confusion,
        ablation,
        dropped_scoring,
    })
}

/// Confusion table followed by the ablation table when present.
pub fn train_report(outcome: &TrainOutcome) -> String {
    let mut out = format!(
        "# test confusion ({}), accuracy {:.4}\n{}",
        outcome.model.mode.as_str(),
        outcome.confusion.accuracy(),
        outcome.confusion.to_table()
    );
    if let Some(a) = &outcome.ablation {
        out.push_str("\n# per-class test error by feature mode\n");
        out.push_str(&a.to_table());
    }
    out
}

// ------------------------------------------------------------------ pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Synthetic config; the bundled default when absent.
    pub config: Option<PathBuf>,
    pub sessions: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            config: None,
            sessions: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionizeSection {
    /// `"auto"` or a threshold in milliseconds.
    pub gap_ms: String,
    pub min_events: usize,
    pub denylist: Option<PathBuf>,
}

impl Default for SessionizeSection {
    fn default() -> Self {
        SessionizeSection {
            gap_ms: "auto".into(),
            min_events: ingest::DEFAULT_MIN_EVENTS,
            denylist: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub min_frac: f64,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            min_frac: vectorize::DEFAULT_MIN_SESSION_FRAC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: Vec<usize>,
    pub final_k: usize,
    pub pve: f64,
    pub subsamples: usize,
    pub sample_size: usize,
    /// Hand-written cluster map; otherwise clusters are named by the
    /// majority synthetic archetype.
    pub category_map: Option<PathBuf>,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            k: vec![8, 13, 18],
            final_k: 13,
            pve: discover::DEFAULT_PVE_THRESHOLD,
            subsamples: discover::DEFAULT_SUBSAMPLES,
            sample_size: 2000,
            category_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub trees: usize,
    pub min_leaf: usize,
    /// Scoring feature list file; otherwise the synthetic config's list.
    pub scoring_features: Option<PathBuf>,
    pub feature_mode: String,
    pub ablation: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            trees: classify::DEFAULT_TREES,
            min_leaf: classify::DEFAULT_MIN_LEAF,
            scoring_features: None,
            feature_mode: FeatureMode::ScoringWithNoise.as_str().into(),
            ablation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub transitions: bool,
    pub prune: f64,
    pub top_features: usize,
    /// `START:END` dates; the whole span when absent.
    pub window: Option<String>,
    pub svg: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            transitions: true,
            prune: analytics::DEFAULT_PRUNE,
            top_features: analytics::DEFAULT_TOP_FEATURES,
            window: None,
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub parallelism: usize,
    pub synth: SynthSection,
    pub sessionize: SessionizeSection,
    pub vocab: VocabSection,
    pub cluster: ClusterSection,
    pub train: TrainSection,
    pub report: ReportSection,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.synth.config,
            &mut cfg.sessionize.denylist,
            &mut cfg.cluster.category_map,
            &mut cfg.train.scoring_features,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn gap_policy(&self) -> Result<GapPolicy> {
        match self.sessionize.gap_ms.trim() {
            "auto" => Ok(GapPolicy::Auto),
            s => {
                let ms: u64 = s
                    .parse()
                    .map_err(|_| Error::Config(format!("sessionize.gap_ms: {s:?} is neither auto nor an integer")))?;
                GapEstimate::manual(ms)
                    .map(GapPolicy::Fixed)
                    .map_err(|e| Error::Config(format!("sessionize.gap_ms: {e}")))
            }
        }
    }

    pub fn feature_mode(&self) -> Result<FeatureMode> {
        FeatureMode::parse(&self.train.feature_mode).ok_or_else(|| {
            Error::Config(format!("train.feature_mode: unknown mode {:?}", self.train.feature_mode))
        })
    }

    /// Check every field before any stage runs; errors name the field.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Config(format!("{name}: {msg}")));
        for (name, p) in [
            ("synth.config", &self.synth.config),
            ("sessionize.denylist", &self.sessionize.denylist),
            ("cluster.category_map", &self.cluster.category_map),
            ("train.scoring_features", &self.train.scoring_features),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return field(name, &format!("{} does not exist", p.display()));
                }
            }
        }
        if self.synth.sessions == 0 {
            return field("synth.sessions", "must be positive");
        }
        if self.sessionize.min_events == 0 {
            return field("sessionize.min_events", "must be at least 1");
        }
        self.gap_policy()?;
        if !(self.vocab.min_frac > 0.0 && self.vocab.min_frac <= 1.0) {
            return field("vocab.min_frac", "must be in (0, 1]");
        }
        if self.cluster.final_k < 2 || self.cluster.k.iter().any(|&k| k < 2) {
            return field("cluster.k", "every k must be at least 2");
        }
        if !(self.cluster.pve > 0.0 && self.cluster.pve <= 1.0) {
            return field("cluster.pve", "must be in (0, 1]");
        }
        if self.cluster.sample_size < self.cluster.final_k {
            return field("cluster.sample_size", "must be at least final_k");
        }
        if self.train.trees == 0 || self.train.min_leaf == 0 {
            return field("train.trees", "trees and min_leaf must be positive");
        }
        self.feature_mode()?;
        if !(0.0..=1.0).contains(&self.report.prune) {
            return field("report.prune", "must be in [0, 1]");
        }
        if let Some(w) = &self.report.window {
            analytics::parse_window(w).map_err(|e| Error::Config(format!("report.window: {e}")))?;
        }
        if let Some(p) = &self.synth.config {
            SynthConfig::load(p).map_err(|e| Error::Config(format!("synth.config: {e}")))?;
        }
        if let Some(p) = &self.cluster.category_map {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            CategoryMap::parse(&text)
                .and_then(|m| m.validate(self.cluster.final_k))
                .map_err(|e| Error::Config(format!("cluster.category_map: {e}")))?;
        }
        Ok(())
    }
}

pub const STAGES: [&str; 7] = ["synth", "sessionize", "vocab", "cluster", "train", "score", "report"];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Validation(Error),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seed: u64,
    /// Output file (relative to the output directory) -> SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub model_format_version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub stages: Vec<StageRecord>,
}

fn digests(dir: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), io::file_digest(&dir.join(n))?)))
        .collect()
}

fn stage_seed(seed: u64, stage: &str) -> u64 {
    rng::derive_str(seed, stage)
}

/// Digest of the config with the thread count left out, since it never
/// changes outputs.
fn config_digest(cfg: &PipelineConfig) -> String {
    let cfg = PipelineConfig {
        parallelism: 0,
        ..cfg.clone()
    };
    io::sha256_hex(toml::to_string(&cfg).unwrap_or_default().as_bytes())
}

/// Run all seven stages into `out_dir` and write `manifest.json` there.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> std::result::Result<Manifest, PipelineError> {
    cfg.validate().map_err(PipelineError::Validation)?;
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Validation(Error::io(out_dir, e)))?;
    let pool = crate::thread_pool(cfg.parallelism).map_err(PipelineError::Validation)?;
    pool.install(|| run_stages(cfg, out_dir))
}

fn run_stages(cfg: &PipelineConfig, dir: &Path) -> std::result::Result<Manifest, PipelineError> {
    let mut stages = Vec::new();
    let fail = |stage: &'static str| move |source: Error| PipelineError::Stage { stage, source };

    // synth
    let seed = stage_seed(cfg.seed, "synth");
    let synth_cfg = match &cfg.synth.config {
        Some(p) => SynthConfig::load(p).map_err(fail("synth"))?,
        None => SynthConfig::default_config(),
    };
    let log = synthgen::generate(&synth_cfg, cfg.synth.sessions, seed).map_err(fail("synth"))?;
    log.write(&dir.join("events.jsonl"), Some(&dir.join("truth.jsonl")))
        .map_err(fail("synth"))?;
    stages.push(StageRecord {
        name: "synth".into(),
        seed,
        outputs: digests(dir, &["events.jsonl", "truth.jsonl"]).map_err(fail("synth"))?,
        details: json!({ "sessions": log.sessions.len(), "archetypes": synth_cfg.archetypes.len() }),
    });

    // sessionize
    let summary = sessionize_stage(&SessionizeArgs {
        input: dir.join("events.jsonl"),
        gap: cfg.gap_policy().map_err(fail("sessionize"))?,
        min_events: cfg.sessionize.min_events,
        denylist: cfg.sessionize.denylist.clone(),
        output: dir.join("sessions.jsonl"),
        daily_counts_out: Some(dir.join("daily_counts.csv")),
    })
    .map_err(fail("sessionize"))?;
    stages.push(StageRecord {
        name: "sessionize".into(),
        seed: 0,
        outputs: digests(dir, &["sessions.jsonl", "daily_counts.csv"]).map_err(fail("sessionize"))?,
        details: serde_json::to_value(&summary).unwrap_or(Value::Null),
    });

    // vocab
    let vocab = vocab_stage(
        &dir.join("sessions.jsonl"),
        cfg.vocab.min_frac,
        &dir.join("vocab.txt"),
        Some(&dir.join("vectors.jsonl")),
    )
    .map_err(fail("vocab"))?;
    stages.push(StageRecord {
        name: "vocab".into(),
        seed: 0,
        outputs: digests(dir, &["vocab.txt", "vectors.jsonl"]).map_err(fail("vocab"))?,
        details: json!({ "events": vocab.len(), "sessions": vocab.num_sessions }),
    });

    // cluster
    let seed = stage_seed(cfg.seed, "cluster");
    let mapping = match &cfg.cluster.category_map {
        Some(p) => MapSpec::File(p.clone()),
        None => MapSpec::Truth(dir.join("truth.jsonl")),
    };
    let (discovery, labeled) = cluster_stage(&ClusterArgs {
        vectors: dir.join("vectors.jsonl"),
        params: DiscoverParams {
            k_list: cfg.cluster.k.clone(),
            final_k: cfg.cluster.final_k,
            pve_threshold: cfg.cluster.pve,
            n_subsamples: cfg.cluster.subsamples,
            sample_size: cfg.cluster.sample_size,
            seed,
        },
        mapping,
        report: Some(dir.join("cluster_quality.tsv")),
        labeled_out: Some(dir.join("labeled.jsonl")),
        map_out: Some(dir.join("category_map.txt")),
    })
    .map_err(fail("cluster"))?;
    stages.push(StageRecord {
        name: "cluster".into(),
        seed,
        outputs: digests(dir, &["cluster_quality.tsv", "labeled.jsonl", "category_map.txt"])
            .map_err(fail("cluster"))?,
        details: json!({
            "final_k": discovery.clustering.k,
            "pca_components": discovery.pca.k_selected,
            "categories": discovery.map.categories(),
        }),
    });

    // train
    let seed = stage_seed(cfg.seed, "train");
    let sessions: Vec<Session> = io::read_jsonl(&dir.join("sessions.jsonl")).map_err(fail("train"))?;
    let scoring = match &cfg.train.scoring_features {
        Some(p) => ScoringSource::File(p.clone()),
        None => ScoringSource::List(synth_cfg.scoring_features.clone()),
    };
    let outcome = train_model(
        &labeled,
        &vocab,
        &TrainArgs {
            scoring,
            mode: cfg.feature_mode().map_err(fail("train"))?,
            forest: ForestParams {
                n_trees: cfg.train.trees,
                min_leaf: cfg.train.min_leaf,
                seed,
                ..ForestParams::default()
            },
            ablation: cfg.train.ablation,
            platform: synth_cfg.platform.clone(),
            created_at_ms: sessions.iter().map(|s| s.end).max().unwrap_or(0),
        },
    )
    .map_err(fail("train"))?;
    modelstore::save_model(&outcome.model, &dir.join("model.txt")).map_err(fail("train"))?;
    std::fs::write(dir.join("train_report.tsv"), train_report(&outcome))
        .map_err(|e| fail("train")(Error::io(dir.join("train_report.tsv"), e)))?;
    stages.push(StageRecord {
        name: "train".into(),
        seed,
        outputs: digests(dir, &["model.txt", "train_report.tsv"]).map_err(fail("train"))?,
        details: json!({
            "model_version": outcome.model.version(),
            "test_accuracy": outcome.confusion.accuracy(),
            "scoring_features": outcome.model.split.scoring(),
        }),
    });

    // score
    let run: ScoreRun = score::score_file(
        &outcome.model,
        &dir.join("sessions.jsonl"),
        &dir.join("scored.jsonl"),
        Some(&dir.join("runs.tsv")),
        0,
    )
    .map_err(fail("score"))?;
    stages.push(StageRecord {
        name: "score".into(),
        seed: 0,
        outputs: digests(dir, &["scored.jsonl"]).map_err(fail("score"))?,
        details: json!({
            "model_version": run.model_version,
            "input_digest": run.input_digest,
            "scored": run.n_scored,
            "skipped": run.n_skipped,
            "counts": run.counts,
        }),
    });

    // report
    let scored: Vec<ScoredSession> = io::read_jsonl(&dir.join("scored.jsonl")).map_err(fail("report"))?;
    let vectors: Vec<VectorRecord> = io::read_jsonl(&dir.join("vectors.jsonl")).map_err(fail("report"))?;
    let opts = ReportOptions {
        transitions: cfg.report.transitions,
        prune: cfg.report.prune,
        max_gap_ms: None,
        window: cfg
            .report
            .window
            .as_deref()
            .map(analytics::parse_window)
            .transpose()
            .map_err(fail("report"))?,
        top_features: cfg.report.top_features,
        svg: cfg.report.svg,
    };
    let report_dir = dir.join("report");
    let files = analytics::write_report(&report_dir, &scored, Some(&vectors), &opts).map_err(fail("report"))?;
    let mut outputs = BTreeMap::new();
    for f in &files {
        let digest = io::file_digest(&report_dir.join(f)).map_err(fail("report"))?;
        outputs.insert(format!("report/{f}"), digest);
    }
    stages.push(StageRecord {
        name: "report".into(),
        seed: 0,
        outputs,
        details: json!({ "files": files.len() }),
    });

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        model_format_version: FORMAT_VERSION,
        seed: cfg.seed,
        config_digest: config_digest(cfg),
        stages,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| fail("report")(Error::io(&path, e)))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_fields_are_named() {
        let cfg = PipelineConfig::parse("[sessionize]\ngap_ms = \"soon\"\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("sessionize.gap_ms"));
        let cfg = PipelineConfig::parse("[train]\nscoring_features = \"/no/such/file\"\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("train.scoring_features"));
        assert!(PipelineConfig::parse("[cluster]\nbogus = 1\n").is_err());
    }

    #[test]
    fn dense_rows_use_sorted_names() {
        let r = |w: &[(&str, f64)]| VectorRecord {
            session_id: "s".into(),
            weights: w.iter().map(|(n, x)| (n.to_string(), *x)).collect(),
            raw_counts: BTreeMap::new(),
            zero: false,
        };
        let (names, rows) = dense_rows(&[r(&[("B", 1.0)]), r(&[("A", 0.6), ("B", 0.8)])]);
        assert_eq!(names, ["A", "B"]);
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![0.6, 0.8]]);
    }
}
