use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use sessionminer::ingest::{parse_events, sessionize_all, GapPolicy, Session};
use sessionminer::io::read_jsonl;
use sessionminer::modelstore::load_model;
use sessionminer::pipeline::{run_pipeline, PipelineConfig, PipelineError, STAGES};
use sessionminer::score::{score_batch, DailyCategories, ScoredSession};
use sessionminer::synthgen::{generate, perturb_sessions, Perturbation, SynthConfig, Targets, DEFAULT_CONFIG};

/// The bundled mixture over fewer users, so that small corpora still give
/// every user several sessions to estimate the gap from.
fn few_users(users: usize) -> SynthConfig {
    let mut cfg = SynthConfig::default_config();
    cfg.users = users;
    cfg
}

fn tiny_config(seed: u64, dir: &Path) -> PipelineConfig {
    let synth = dir.join("synth.toml");
    std::fs::write(&synth, DEFAULT_CONFIG.replace("users = 2000", "users = 40")).unwrap();
    let mut cfg = PipelineConfig::parse(
        r#"
        [synth]
        sessions = 800
        [cluster]
        k = [5]
        final_k = 8
        subsamples = 3
        sample_size = 300
        [train]
        trees = 10
        [report]
        svg = false
        "#,
    )
    .unwrap();
    cfg.seed = seed;
    cfg.synth.config = Some(synth);
    cfg
}

#[test]
fn sessionizer_recovers_generated_sessions() {
    let log = generate(&few_users(100), 2_000, 11).unwrap();
    let mut text = String::new();
    for e in log.events() {
        text.push_str(&serde_json::to_string(&e).unwrap());
        text.push('\n');
    }
    let parsed = parse_events(text.as_bytes(), &HashSet::new()).unwrap();
    let (got, _) = sessionize_all(&parsed, GapPolicy::Auto, 1);
    let key = |s: &Session| s.session_id.clone();
    let mut want = log.to_sessions();
    let mut got = got.sessions;
    want.sort_by_key(key);
    got.sort_by_key(key);
    assert_eq!(got, want);
}

#[test]
fn archetype_shares_match_the_mixture() {
    let cfg = SynthConfig::default_config();
    let n = 20_000;
    let log = generate(&cfg, n, 5).unwrap();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &log.sessions {
        *counts.entry(s.archetype.as_str()).or_default() += 1;
    }
    for a in &cfg.archetypes {
        let sd = (a.share * (1.0 - a.share) / n as f64).sqrt();
        let got = counts[a.name.as_str()] as f64 / n as f64;
        assert!((got - a.share).abs() <= 3.0 * sd, "{}: {got} vs {}", a.name, a.share);
    }
}

#[test]
fn doubling_an_event_in_a_fifth_of_sessions_adds_a_fifth() {
    let cfg = SynthConfig::default_config();
    let sessions = generate(&cfg, 5_000, 3).unwrap().to_sessions();
    let target = "FEED_VIEW";
    let p = Perturbation::new(Targets::Events(BTreeSet::from([target.to_string()])), 2.0, 0.2).unwrap();
    let out = perturb_sessions(&sessions, &p, 9);
    let count = |ss: &[Session]| ss.iter().flat_map(|s| &s.events).filter(|e| *e == target).count() as f64;
    let ratio = count(&out) / count(&sessions);
    assert!((ratio - 1.2).abs() < 0.03, "ratio {ratio}");
    for (a, b) in sessions.iter().zip(&out) {
        assert_eq!((&a.session_id, a.start, a.end), (&b.session_id, b.start, b.end));
        let others = |s: &Session| s.events.iter().filter(|e| *e != target).cloned().collect::<Vec<_>>();
        assert_eq!(others(a), others(b));
    }
}

#[test]
fn pipeline_reruns_are_identical_and_models_score_alone() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_pipeline(&tiny_config(4, a.path()), &a.path().join("out")).unwrap();
    let mb = run_pipeline(&tiny_config(4, b.path()), &b.path().join("out")).unwrap();
    // the config digest covers the (differing) synth config path
    assert_eq!(ma.stages, mb.stages);
    let names: Vec<&str> = ma.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, STAGES);

    let out = a.path().join("out");
    let model = load_model(&out.join("model.txt")).unwrap();
    let scored: Vec<ScoredSession> = read_jsonl(&out.join("scored.jsonl")).unwrap();
    let sessions: Vec<Session> = read_jsonl(&out.join("sessions.jsonl")).unwrap();
    assert_eq!(score_batch(&sessions, &model, 2).unwrap(), scored);

    // a session's record does not depend on the rest of the batch
    let mut reversed = sessions.clone();
    reversed.reverse();
    let alone = score_batch(&sessions[..1], &model, 1).unwrap();
    assert_eq!(score_batch(&reversed, &model, 3).unwrap().last(), alone.first());

    let other = tempfile::tempdir().unwrap();
    let mc = run_pipeline(&tiny_config(5, other.path()), &other.path().join("out")).unwrap();
    assert_ne!(ma.stages[0].outputs, mc.stages[0].outputs);
}

#[test]
fn invalid_config_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(1, dir.path());
    cfg.cluster.pve = 1.5;
    match run_pipeline(&cfg, &dir.path().join("out")) {
        Err(PipelineError::Validation(e)) => assert!(e.to_string().contains("cluster.pve")),
        other => panic!("expected validation error, got {other:?}"),
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn planted_daily_split_is_reported() {
    let day = 86_400_000u64;
    let scored: Vec<ScoredSession> = (0..200)
        .map(|i| ScoredSession {
            session_id: format!("u{i}:{}", i),
            user_id: format!("u{i}"),
            platform: "web".into(),
            start: (i % 2) * day + i,
            end: (i % 2) * day + i + 10,
            n_events: 2,
            category: if (i / 2) % 5 < 3 { "A" } else { "B" }.into(),
            probabilities: BTreeMap::new(),
            model_version: "v".into(),
        })
        .collect();
    let props = DailyCategories::from_scored(&scored).proportions();
    assert_eq!(props.len(), 2);
    for p in props.values() {
        assert!((p["A"] - 0.6).abs() < 1e-12 && (p["B"] - 0.4).abs() < 1e-12);
    }
}
