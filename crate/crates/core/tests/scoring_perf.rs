use std::collections::BTreeMap;
use std::time::Instant;

use sessionminer::classify::{train_classifier, FeatureMode, FeatureSplit, ForestParams, SplitProvenance};
use sessionminer::modelstore::{ModelArtifact, FORMAT_VERSION};
use sessionminer::score::score_batch;
use sessionminer::synthgen::{generate, SynthConfig};
use sessionminer::vectorize::{event_counts, fit_vocabulary};

/// Allowed slack over perfect linear scaling: time(P) <= time(1) / P * (1 + OVERHEAD).
const OVERHEAD: f64 = 1.0;

#[test]
fn scoring_scales_with_parallelism() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < 2 {
        eprintln!("scoring_scales_with_parallelism: skipped, {cores} core available");
        return;
    }
    let p = cores.min(4);
    let cfg = SynthConfig::default_config();
    let train = generate(&cfg, 3_000, 1).unwrap();
    let sessions = train.to_sessions();
    let labels: Vec<String> = train.sessions.iter().map(|s| s.archetype.clone()).collect();
    let vocab = fit_vocabulary(&sessions, 0.05).unwrap();
    let counts: Vec<BTreeMap<String, u32>> = sessions.iter().map(|s| event_counts(&s.events)).collect();
    let (split, _) = FeatureSplit::new(cfg.scoring_features.clone(), &vocab, SplitProvenance::ManualList).unwrap();
    let params = ForestParams::default();
    let t = train_classifier(&counts, &labels, &vocab, &split, FeatureMode::ScoringWithNoise, &params).unwrap();
    let model = ModelArtifact {
        format_version: FORMAT_VERSION,
        created_at_ms: 0,
        platform: cfg.platform.clone(),
        mode: FeatureMode::ScoringWithNoise,
        vocab,
        split,
        eta_mean: t.encoder.eta_mean,
        forest: t.forest,
        metrics: BTreeMap::new(),
    };
    let batch = generate(&cfg, 40_000, 2).unwrap().to_sessions();

    let time = |threads| {
        score_batch(&batch[..1000], &model, threads).unwrap();
        let t0 = Instant::now();
        let out = score_batch(&batch, &model, threads).unwrap();
        (t0.elapsed().as_secs_f64(), out)
    };
    let (t1, out1) = time(1);
    let (tp, outp) = time(p);
    assert_eq!(out1, outp);
    eprintln!("scoring 40000 sessions: {t1:.3}s at 1 thread, {tp:.3}s at {p}");
    assert!(tp <= t1 / p as f64 * (1.0 + OVERHEAD), "{tp:.3}s at {p} threads vs {t1:.3}s at 1");
}
