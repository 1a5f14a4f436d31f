//! Canonical, byte-stable model files.
//!
//! A model file is line-oriented UTF-8 text. Fields appear in a fixed order,
//! tokens are separated by one space, and every real number is written in
//! scientific notation with 17 significant digits, which round-trips any
//! `f64` exactly. The model version is the leading 16 hex digits of the
//! SHA-256 of the file contents.
//!
//! ```text
//! sessionminer-model
//! format_version 1
//! created_at_ms <u64>
//! platform <name>
//! feature_mode scoring_only|scoring_with_noise|all_features
//! vocabulary <num_sessions> <min_session_frac> <V>
//! event <name> <doc_freq> <idf>            (V lines, index order)
//! split <provenance> <S>
//! scoring <name>                           (S lines)
//! eta_mean <real>
//! classes <C>
//! class <name>                             (C lines)
//! features <P>
//! feature <name>                           (P lines)
//! forest <n_trees> <min_leaf>
//! tree <n_nodes>                           (then n_nodes node lines, preorder)
//! split <feature> <threshold> <left> <right>
//! leaf <p_0> ... <p_{C-1}>
//! metrics <M>
//! metric <name> <real>                     (M lines)
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::classify::forest::{ForestModel, Node, Tree};
use crate::classify::{FeatureEncoder, FeatureMode, FeatureSplit, SplitProvenance};
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::vectorize::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &str = "sessionminer-model";
const VOCAB_MAGIC: &str = "sessionminer-vocabulary";

/// Everything scoring needs, frozen at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub created_at_ms: u64,
    pub platform: String,
    pub mode: FeatureMode,
    pub vocab: Vocabulary,
    pub split: FeatureSplit,
    pub eta_mean: f64,
    pub forest: ForestModel,
    pub metrics: BTreeMap<String, f64>,
}

impl ModelArtifact {
    pub fn encoder(&self) -> FeatureEncoder {
        FeatureEncoder::new(self.mode, &self.split, &self.vocab, self.eta_mean)
    }

    pub fn class_names(&self) -> &[String] {
        &self.forest.class_names
    }

    pub fn version(&self) -> String {
        sha256_hex(self.encode().as_bytes())[..16].to_string()
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "{MODEL_MAGIC}");
        let _ = writeln!(w, "format_version {}", self.format_version);
        let _ = writeln!(w, "created_at_ms {}", self.created_at_ms);
        let _ = writeln!(w, "platform {}", self.platform);
        let _ = writeln!(w, "feature_mode {}", self.mode.as_str());
        write_vocabulary(w, &self.vocab);
        let _ = writeln!(
            w,
            "split {} {}",
            self.split.provenance.as_str(),
            self.split.scoring().len()
        );
        for s in self.split.scoring() {
            let _ = writeln!(w, "scoring {s}");
        }
        let _ = writeln!(w, "eta_mean {}", real(self.eta_mean));
        let _ = writeln!(w, "classes {}", self.forest.class_names.len());
        for c in &self.forest.class_names {
            let _ = writeln!(w, "class {c}");
        }
        let _ = writeln!(w, "features {}", self.forest.feature_names.len());
        for f in &self.forest.feature_names {
            let _ = writeln!(w, "feature {f}");
        }
        let _ = writeln!(w, "forest {} {}", self.forest.trees.len(), self.forest.min_leaf);
        for tree in &self.forest.trees {
            let _ = writeln!(w, "tree {}", tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let _ = writeln!(w, "split {feature} {} {left} {right}", real(*threshold));
                    }
                    Node::Leaf { probs } => {
                        w.push_str("leaf");
                        for p in probs {
                            let _ = write!(w, " {}", real(*p));
                        }
                        w.push('\n');
                    }
                }
            }
        }
        let _ = writeln!(w, "metrics {}", self.metrics.len());
        for (k, v) in &self.metrics {
            let _ = writeln!(w, "metric {k} {}", real(*v));
        }
        w.push_str("end\n");
        out
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        r.expect_exact(MODEL_MAGIC)?;
        let format_version = read_version(&mut r)?;
        let created_at_ms = r.field("created_at_ms", 1)?.parse_at(0, &r)?;
        let platform = r.field("platform", 1)?.text(0);
        let mode_tok = r.field("feature_mode", 1)?.text(0);
        let mode = FeatureMode::parse(&mode_tok).ok_or_else(|| r.err(format!("unknown feature mode {mode_tok}")))?;
        let vocab = read_vocabulary(&mut r)?;

        let split_line = r.field("split", 2)?;
        let provenance = SplitProvenance::parse(&split_line.text(0))
            .ok_or_else(|| r.err("unknown split provenance"))?;
        let n_scoring: usize = split_line.parse_at(1, &r)?;
        let scoring: Vec<String> = (0..n_scoring)
            .map(|_| r.field("scoring", 1).map(|l| l.text(0)))
            .collect::<Result<_>>()?;
        let (split, dropped) = FeatureSplit::new(scoring, &vocab, provenance)?;
        if !dropped.is_empty() || split.scoring().len() != n_scoring {
            return Err(r.err("scoring features must be distinct vocabulary events"));
        }
        let eta_mean: f64 = r.field("eta_mean", 1)?.parse_at(0, &r)?;

        let n_classes: usize = r.field("classes", 1)?.parse_at(0, &r)?;
        let class_names: Vec<String> = (0..n_classes)
            .map(|_| r.field("class", 1).map(|l| l.text(0)))
            .collect::<Result<_>>()?;
        let n_features: usize = r.field("features", 1)?.parse_at(0, &r)?;
        let feature_names: Vec<String> = (0..n_features)
            .map(|_| r.field("feature", 1).map(|l| l.text(0)))
            .collect::<Result<_>>()?;

        let forest_line = r.field("forest", 2)?;
        let n_trees: usize = forest_line.parse_at(0, &r)?;
        let min_leaf: usize = forest_line.parse_at(1, &r)?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes: usize = r.field("tree", 1)?.parse_at(0, &r)?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let line = r.line()?;
                let node = match line.key {
                    "split" if line.toks.len() == 4 => {
                        let node = Node::Split {
                            feature: line.parse_at(0, &r)?,
                            threshold: line.parse_at(1, &r)?,
                            left: line.parse_at(2, &r)?,
                            right: line.parse_at(3, &r)?,
                        };
                        if let Node::Split { feature, left, right, .. } = node {
                            if feature >= n_features || left >= n_nodes || right >= n_nodes {
                                return Err(r.err("split references out of range"));
                            }
                        }
                        node
                    }
                    "leaf" if line.toks.len() == n_classes => Node::Leaf {
                        probs: (0..n_classes)
                            .map(|i| line.parse_at(i, &r))
                            .collect::<Result<_>>()?,
                    },
                    _ => return Err(r.err(format!("expected tree node, found {:?}", line.key))),
                };
                nodes.push(node);
            }
            trees.push(Tree { nodes });
        }
        let n_metrics: usize = r.field("metrics", 1)?.parse_at(0, &r)?;
        let mut metrics = BTreeMap::new();
        for _ in 0..n_metrics {
            let l = r.field("metric", 2)?;
            metrics.insert(l.text(0), l.parse_at(1, &r)?);
        }
        r.expect_exact("end")?;

        let artifact = ModelArtifact {
            format_version,
            created_at_ms,
            platform,
            mode,
            vocab,
            split,
            eta_mean,
            forest: ForestModel {
                trees,
                min_leaf,
                feature_names,
                class_names,
            },
            metrics,
        };
        if artifact.encoder().feature_names(&artifact.vocab) != artifact.forest.feature_names {
            return Err(r.err("forest features do not match the feature mode and split"));
        }
        Ok(artifact)
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    std::fs::write(path, artifact.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::decode(&text)
}

/// Standalone vocabulary file (same section layout as inside a model).
pub fn encode_vocabulary(vocab: &Vocabulary) -> String {
    let mut out = format!("{VOCAB_MAGIC}\nformat_version {FORMAT_VERSION}\n");
    write_vocabulary(&mut out, vocab);
    out.push_str("end\n");
    out
}

pub fn decode_vocabulary(text: &str) -> Result<Vocabulary> {
    let mut r = Reader::new(text);
    r.expect_exact(VOCAB_MAGIC)?;
    read_version(&mut r)?;
    let v = read_vocabulary(&mut r)?;
    r.expect_exact("end")?;
    Ok(v)
}

/// 17 significant digits, scientific notation.
fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_vocabulary(w: &mut String, vocab: &Vocabulary) {
    let _ = writeln!(
        w,
        "vocabulary {} {} {}",
        vocab.num_sessions,
        real(vocab.min_session_frac),
        vocab.len()
    );
    for (name, e) in vocab.iter() {
        let _ = writeln!(w, "event {name} {} {}", e.doc_freq, real(e.idf));
    }
}

fn read_version(r: &mut Reader<'_>) -> Result<u32> {
    let found: u32 = r.field("format_version", 1)?.parse_at(0, r)?;
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(found)
}

fn read_vocabulary(r: &mut Reader<'_>) -> Result<Vocabulary> {
    let head = r.field("vocabulary", 3)?;
    let num_sessions: usize = head.parse_at(0, r)?;
    let min_frac: f64 = head.parse_at(1, r)?;
    let n: usize = head.parse_at(2, r)?;
    let mut parts = Vec::with_capacity(n);
    let mut prev: Option<String> = None;
    for _ in 0..n {
        let l = r.field("event", 3)?;
        let name = l.text(0);
        if prev.as_ref().is_some_and(|p| *p >= name) {
            return Err(r.err("vocabulary events must be in strictly increasing order"));
        }
        parts.push((name.clone(), l.parse_at(1, r)?, l.parse_at(2, r)?));
        prev = Some(name);
    }
    Vocabulary::from_parts(parts, num_sessions, min_frac)
        .map_err(|e| r.err(e.to_string()))
}

struct Line<'a> {
    key: &'a str,
    toks: Vec<&'a str>,
}

impl Line<'_> {
    fn text(&self, i: usize) -> String {
        self.toks[i].to_string()
    }

    fn parse_at<T: std::str::FromStr>(&self, i: usize, r: &Reader<'_>) -> Result<T> {
        self.toks[i]
            .parse()
            .map_err(|_| r.err(format!("bad value {:?} for {}", self.toks[i], self.key)))
    }
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines(),
            lineno: 0,
        }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::MalformedModel {
            line: self.lineno,
            reason: reason.into(),
        }
    }

    fn line(&mut self) -> Result<Line<'a>> {
        self.lineno += 1;
        let raw = self
            .lines
            .next()
            .ok_or_else(|| self.err("unexpected end of file (truncated?)"))?;
        let mut it = raw.split(' ');
        let key = it.next().unwrap_or("");
        Ok(Line {
            key,
            toks: it.collect(),
        })
    }

    fn expect_exact(&mut self, word: &str) -> Result<()> {
        let l = self.line()?;
        if l.key != word || !l.toks.is_empty() {
            return Err(self.err(format!("expected {word:?}")));
        }
        Ok(())
    }

    fn field(&mut self, key: &str, n_toks: usize) -> Result<Line<'a>> {
        let l = self.line()?;
        if l.key != key || l.toks.len() != n_toks {
            return Err(self.err(format!("expected {key:?} with {n_toks} value(s), found {:?}", l.key)));
        }
        Ok(l)
    }
}
