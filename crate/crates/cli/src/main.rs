//! `sessionminer`: one binary for every stage plus the chained pipeline.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 a stage
//! failed while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use sessionminer::classify::{FeatureMode, ForestParams};
use sessionminer::discover::DiscoverParams;
use sessionminer::ingest::{GapEstimate, GapPolicy};
use sessionminer::pipeline::{
    self, ClusterArgs, MapSpec, PipelineConfig, PipelineError, ScoringSource, SessionizeArgs, TrainArgs,
};
use sessionminer::score::ScoredSession;
use sessionminer::synthgen::{self, SynthConfig};
use sessionminer::vectorize::VectorRecord;
use sessionminer::{analytics, io, modelstore, score};

#[derive(Parser)]
#[command(name = "sessionminer", version, about = "Discover, classify and score user session categories")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "SESSIONMINER_PARALLELISM", default_value_t = 0)]
    parallelism: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log with planted session archetypes.
    Synth(SynthCmd),
    /// Split raw events into sessions.
    Sessionize(SessionizeCmd),
    /// Fit the event vocabulary and IDF; optionally write session vectors.
    Vocab(VocabCmd),
    /// Cluster session vectors, score candidate k values and label sessions.
    Cluster(ClusterCmd),
    /// Train the session classifier and write a model file.
    Train(TrainCmd),
    /// Score sessions with a frozen model.
    Score(ScoreCmd),
    /// Write analysis tables and charts for scored sessions.
    Report(ReportCmd),
    /// Run synth → sessionize → vocab → cluster → train → score → report.
    Pipeline(PipelineCmd),
}

#[derive(Args)]
struct SynthCmd {
    /// Synthetic config (TOML); the bundled default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    sessions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Event log output (JSON lines).
    #[arg(long, required_unless_present = "print_default_config")]
    out: Option<PathBuf>,
    /// Hidden archetype of every session (JSON lines).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Print the bundled config and exit.
    #[arg(long)]
    print_default_config: bool,
}

#[derive(Args)]
struct SessionizeCmd {
    #[arg(long)]
    input: PathBuf,
    /// Inactivity threshold in milliseconds, or `auto`.
    #[arg(long, default_value = "auto")]
    gap_ms: String,
    #[arg(long, default_value_t = sessionminer::ingest::DEFAULT_MIN_EVENTS)]
    min_events: usize,
    /// Event names to drop, one per line.
    #[arg(long)]
    denylist: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Also write `date,event,count` rows for stability ranking.
    #[arg(long)]
    daily_counts_out: Option<PathBuf>,
}

#[derive(Args)]
struct VocabCmd {
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long, default_value_t = sessionminer::vectorize::DEFAULT_MIN_SESSION_FRAC)]
    min_frac: f64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    vectors_out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterCmd {
    #[arg(long)]
    vectors: PathBuf,
    /// Candidate numbers of clusters to score.
    #[arg(long, value_delimiter = ',', default_value = "8,13,18")]
    k: Vec<usize>,
    /// Number of clusters used for labeling.
    #[arg(long, default_value_t = 13)]
    final_k: usize,
    #[arg(long, default_value_t = sessionminer::discover::DEFAULT_PVE_THRESHOLD)]
    pve: f64,
    #[arg(long, default_value_t = sessionminer::discover::DEFAULT_SUBSAMPLES)]
    subsamples: usize,
    /// Sessions clustered directly; the rest join the nearest medoid.
    #[arg(long, default_value_t = 2000)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Quality table output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Cluster → category mapping file.
    #[arg(long, conflicts_with = "truth")]
    category_map: Option<PathBuf>,
    /// Name clusters by the majority label in a truth file instead.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    labeled_out: Option<PathBuf>,
    /// Write the mapping that was used.
    #[arg(long)]
    map_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmd {
    /// Labeled sessions from `cluster --labeled-out`.
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Scoring feature list, one event per line.
    #[arg(long, required_unless_present = "auto_rank", conflicts_with = "auto_rank")]
    scoring_features: Option<PathBuf>,
    /// Pick scoring features by stability of these daily counts.
    #[arg(long)]
    auto_rank: Option<PathBuf>,
    /// Walk the stability ranking from least stable first.
    #[arg(long, requires = "auto_rank")]
    invert_rank: bool,
    #[arg(long, default_value_t = 0.85, requires = "auto_rank")]
    target_accuracy: f64,
    #[arg(long, default_value_t = 30, requires = "auto_rank")]
    max_features: usize,
    #[arg(long, default_value_t = sessionminer::classify::DEFAULT_TREES)]
    trees: usize,
    #[arg(long, default_value_t = sessionminer::classify::DEFAULT_MIN_LEAF)]
    min_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "scoring_with_noise")]
    feature_mode: String,
    /// Also train and report every feature mode on the same split.
    #[arg(long)]
    ablation: bool,
    #[arg(long)]
    model_out: PathBuf,
    /// Confusion/ablation tables; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "unknown")]
    platform: String,
    /// Recorded creation time; fixed so retraining is reproducible.
    #[arg(long, default_value_t = 0)]
    created_at_ms: u64,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    run_log: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCmd {
    #[arg(long)]
    scored: PathBuf,
    /// Session vectors, for top-weighted events per category.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Include the transition matrix and graph.
    #[arg(long)]
    transitions: bool,
    #[arg(long, default_value_t = analytics::DEFAULT_PRUNE)]
    prune: f64,
    /// Ignore session pairs further apart than this.
    #[arg(long)]
    max_gap_ms: Option<u64>,
    /// `START:END` dates (inclusive) for the windowed index.
    #[arg(long)]
    window: Option<String>,
    #[arg(long, default_value_t = analytics::DEFAULT_TOP_FEATURES)]
    top_features: usize,
    #[arg(long)]
    no_svg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineCmd {
    /// Pipeline config (TOML); defaults for every field when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sessions: Option<usize>,
}

/// Failure class, mapped to the exit code.
enum Failure {
    Invalid(anyhow::Error),
    Stage(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn stage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Stage(e.into())
}

fn require_file(flag: &str, p: &Path) -> Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(invalid(anyhow!("--{flag}: {} does not exist", p.display())))
    }
}

fn require_opt(flag: &str, p: &Option<PathBuf>) -> Result<(), Failure> {
    p.as_deref().map_or(Ok(()), |p| require_file(flag, p))
}

fn parse_gap(text: &str) -> Result<GapPolicy, Failure> {
    if text == "auto" {
        return Ok(GapPolicy::Auto);
    }
    let ms: u64 = text
        .parse()
        .map_err(|_| invalid(anyhow!("--gap-ms: expected `auto` or milliseconds, got {text:?}")))?;
    GapEstimate::manual(ms).map(GapPolicy::Fixed).map_err(invalid)
}

fn parse_mode(text: &str) -> Result<FeatureMode, Failure> {
    FeatureMode::parse(text).ok_or_else(|| {
        invalid(anyhow!(
            "--feature-mode: expected scoring_only, scoring_with_noise or all_features, got {text:?}"
        ))
    })
}

fn synth(cmd: SynthCmd) -> Outcome {
    if cmd.print_default_config {
        print!("{}", synthgen::DEFAULT_CONFIG);
        return Ok(());
    }
    require_opt("config", &cmd.config)?;
    let cfg = match &cmd.config {
        Some(p) => SynthConfig::load(p).map_err(invalid)?,
        None => SynthConfig::default_config(),
    };
    let out = cmd.out.expect("required by clap");
    let log = synthgen::generate(&cfg, cmd.sessions, cmd.seed).map_err(stage)?;
    log.write(&out, cmd.truth.as_deref()).map_err(stage)?;
    eprintln!("wrote {} sessions to {}", log.sessions.len(), out.display());
    Ok(())
}

fn sessionize(cmd: SessionizeCmd) -> Outcome {
    require_file("input", &cmd.input)?;
    require_opt("denylist", &cmd.denylist)?;
    if cmd.min_events == 0 {
        return Err(invalid(anyhow!("--min-events must be at least 1")));
    }
    let summary = pipeline::sessionize_stage(&SessionizeArgs {
        input: cmd.input,
        gap: parse_gap(&cmd.gap_ms)?,
        min_events: cmd.min_events,
        denylist: cmd.denylist,
        output: cmd.output,
        daily_counts_out: cmd.daily_counts_out,
    })
    .map_err(stage)?;
    eprintln!("{}", serde_json::to_string_pretty(&summary).map_err(stage)?);
    Ok(())
}

fn vocab(cmd: VocabCmd) -> Outcome {
    require_file("sessions", &cmd.sessions)?;
    if !(cmd.min_frac > 0.0 && cmd.min_frac <= 1.0) {
        return Err(invalid(anyhow!("--min-frac must be in (0, 1]")));
    }
    let v = pipeline::vocab_stage(&cmd.sessions, cmd.min_frac, &cmd.output, cmd.vectors_out.as_deref())
        .map_err(stage)?;
    eprintln!("vocabulary: {} events over {} sessions", v.len(), v.num_sessions);
    Ok(())
}

fn cluster(cmd: ClusterCmd) -> Outcome {
    require_file("vectors", &cmd.vectors)?;
    require_opt("category-map", &cmd.category_map)?;
    require_opt("truth", &cmd.truth)?;
    if cmd.final_k < 2 || cmd.k.iter().any(|&k| k < 2) {
        return Err(invalid(anyhow!("--k and --final-k values must be at least 2")));
    }
    let mapping = match (cmd.category_map, cmd.truth) {
        (Some(p), _) => MapSpec::File(p),
        (None, Some(p)) => MapSpec::Truth(p),
        (None, None) => MapSpec::Identity,
    };
    let (d, labeled) = pipeline::cluster_stage(&ClusterArgs {
        vectors: cmd.vectors,
        params: DiscoverParams {
            k_list: cmd.k,
            final_k: cmd.final_k,
            pve_threshold: cmd.pve,
            n_subsamples: cmd.subsamples,
            sample_size: cmd.sample,
            seed: cmd.seed,
        },
        mapping,
        report: cmd.report.clone(),
        labeled_out: cmd.labeled_out,
        map_out: cmd.map_out,
    })
    .map_err(stage)?;
    if cmd.report.is_none() {
        print!("{}", sessionminer::discover::quality_table(&d.quality));
    }
    eprintln!(
        "labeled {} sessions into {} categories",
        labeled.len(),
        d.map.categories().len()
    );
    Ok(())
}

fn train(cmd: TrainCmd) -> Outcome {
    require_file("labeled", &cmd.labeled)?;
    require_file("vocab", &cmd.vocab)?;
    require_opt("scoring-features", &cmd.scoring_features)?;
    require_opt("auto-rank", &cmd.auto_rank)?;
    let mode = parse_mode(&cmd.feature_mode)?;
    let scoring = match (cmd.scoring_features, cmd.auto_rank) {
        (Some(p), _) => ScoringSource::File(p),
        (None, Some(p)) => ScoringSource::Ranked {
            daily_counts: p,
            invert: cmd.invert_rank,
            target_accuracy: cmd.target_accuracy,
            max_features: cmd.max_features,
        },
        (None, None) => unreachable!("clap requires one of them"),
    };
    let vocab = pipeline::load_vocabulary(&cmd.vocab).map_err(invalid)?;
    let labeled = io::read_jsonl(&cmd.labeled).map_err(invalid)?;
    let outcome = pipeline::train_model(
        &labeled,
        &vocab,
        &TrainArgs {
            scoring,
            mode,
            forest: ForestParams {
                n_trees: cmd.trees,
                min_leaf: cmd.min_leaf,
                seed: cmd.seed,
                ..ForestParams::default()
            },
            ablation: cmd.ablation,
            platform: cmd.platform,
            created_at_ms: cmd.created_at_ms,
        },
    )
    .map_err(stage)?;
    if !outcome.dropped_scoring.is_empty() {
        eprintln!(
            "warning: scoring features not in the vocabulary were dropped: {}",
            outcome.dropped_scoring.join(", ")
        );
    }
    modelstore::save_model(&outcome.model, &cmd.model_out).map_err(stage)?;
    let text = pipeline::train_report(&outcome);
    match &cmd.report {
        Some(p) => std::fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(stage)?,
        None => print!("{text}"),
    }
    eprintln!("model {} written to {}", outcome.model.version(), cmd.model_out.display());
    Ok(())
}

fn score_cmd(cmd: ScoreCmd, parallelism: usize) -> Outcome {
    require_file("model", &cmd.model)?;
    require_file("sessions", &cmd.sessions)?;
    let model = modelstore::load_model(&cmd.model).map_err(invalid)?;
    let run = score::score_file(&model, &cmd.sessions, &cmd.output, cmd.run_log.as_deref(), parallelism)
        .map_err(stage)?;
    eprintln!(
        "run {}: {} sessions scored, {} skipped, model {}",
        run.run_id, run.n_scored, run.n_skipped, run.model_version
    );
    Ok(())
}

fn report(cmd: ReportCmd) -> Outcome {
    require_file("scored", &cmd.scored)?;
    require_opt("vectors", &cmd.vectors)?;
    if !(0.0..=1.0).contains(&cmd.prune) {
        return Err(invalid(anyhow!("--prune must be in [0, 1]")));
    }
    let window = cmd
        .window
        .as_deref()
        .map(analytics::parse_window)
        .transpose()
        .map_err(invalid)?;
    let scored: Vec<ScoredSession> = io::read_jsonl(&cmd.scored).map_err(invalid)?;
    let vectors: Option<Vec<VectorRecord>> = cmd
        .vectors
        .as_deref()
        .map(io::read_jsonl)
        .transpose()
        .map_err(invalid)?;
    let opts = analytics::ReportOptions {
        transitions: cmd.transitions,
        prune: cmd.prune,
        max_gap_ms: cmd.max_gap_ms,
        window,
        top_features: cmd.top_features,
        svg: !cmd.no_svg,
    };
    let files = analytics::write_report(&cmd.out, &scored, vectors.as_deref(), &opts).map_err(stage)?;
    eprintln!("wrote {} files to {}", files.len(), cmd.out.display());
    Ok(())
}

fn run_pipeline(cmd: PipelineCmd, parallelism: usize) -> Outcome {
    let mut cfg = match &cmd.config {
        Some(p) => {
            require_file("config", p)?;
            PipelineConfig::load(p).map_err(invalid)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cmd.seed {
        cfg.seed = s;
    }
    if let Some(n) = cmd.sessions {
        cfg.synth.sessions = n;
    }
    if parallelism > 0 {
        cfg.parallelism = parallelism;
    }
    match pipeline::run_pipeline(&cfg, &cmd.out) {
        Ok(m) => {
            for s in &m.stages {
                eprintln!("stage {:<10} ok ({} outputs)", s.name, s.outputs.len());
            }
            eprintln!("manifest: {}", cmd.out.join("manifest.json").display());
            Ok(())
        }
        Err(e @ PipelineError::Validation(_)) => Err(invalid(e)),
        Err(e @ PipelineError::Stage { .. }) => Err(stage(e)),
    }
}

fn run(cli: Cli) -> Outcome {
    let parallelism = cli.parallelism;
    let command = cli.command;
    let body = move || match command {
        Command::Synth(c) => synth(c),
        Command::Sessionize(c) => sessionize(c),
        Command::Vocab(c) => vocab(c),
        Command::Cluster(c) => cluster(c),
        Command::Train(c) => train(c),
        Command::Score(c) => score_cmd(c, parallelism),
        Command::Report(c) => report(c),
        Command::Pipeline(c) => run_pipeline(c, parallelism),
    };
    let pool = rayon_pool(parallelism).map_err(invalid)?;
    pool.install(body)
}

fn rayon_pool(threads: usize) -> anyhow::Result<sessionminer::ThreadPool> {
    sessionminer::thread_pool(threads).context("--parallelism")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
