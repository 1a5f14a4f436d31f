//! Seeded synthetic event logs with planted session archetypes, a heavy
//! long tail of rare events, and count perturbations that mimic product
//! experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::LogNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::date_to_day;
use crate::error::{Error, Result};
use crate::ingest::Session;
use crate::rng;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/synth_default.toml");
const DAY_MS: u64 = 86_400_000;
const SUM_TOLERANCE: f64 = 1e-6;
/// Lognormal draws outside the length bounds are redrawn this many times
/// before being clamped.
const LENGTH_REDRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthSpec {
    pub mu: f64,
    pub sigma: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub name: String,
    pub share: f64,
    pub length: LengthSpec,
    pub events: BTreeMap<String, f64>,
    /// Probability mass given to the rare-event tail.
    #[serde(default)]
    pub tail_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSpec {
    pub prefix: String,
    pub size: usize,
    /// Zipf exponent over tail ranks.
    pub exponent: f64,
}

impl TailSpec {
    pub fn event(&self, rank: usize) -> String {
        format!("{}{:03}", self.prefix, rank + 1)
    }
}

/// Multiplies the share of one archetype on a given day; the effect ramps
/// up linearly over `lead_days` before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holiday {
    pub archetype: String,
    pub day: u32,
    pub multiplier: f64,
    #[serde(default)]
    pub lead_days: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Explicit target events.
    #[serde(default)]
    pub events: Vec<String>,
    /// Target every event that is not a scoring feature.
    #[serde(default)]
    pub long_tail: bool,
    pub multiplier: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_platform")]
    pub platform: String,
    pub users: usize,
    pub days: u32,
    pub start_date: String,
    pub intra_gap_ms: [u64; 2],
    pub min_inter_gap_ms: u64,
    #[serde(default)]
    pub scoring_features: Vec<String>,
    pub tail: Option<TailSpec>,
    pub archetypes: Vec<Archetype>,
    #[serde(default)]
    pub holidays: Vec<Holiday>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationSpec>,
}

fn default_platform() -> String {
    "web".into()
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl SynthConfig {
    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("bundled config is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn start_ms(&self) -> Result<u64> {
        let day = date_to_day(&self.start_date).map_err(|e| config_err(format!("start_date: {e}")))?;
        u64::try_from(day)
            .map(|d| d * DAY_MS)
            .map_err(|_| config_err("start_date: before 1970"))
    }

    /// Every event any archetype can emit.
    pub fn universe(&self) -> BTreeSet<String> {
        let mut u: BTreeSet<String> = self
            .archetypes
            .iter()
            .flat_map(|a| a.events.keys().cloned())
            .collect();
        if let Some(t) = &self.tail {
            u.extend((0..t.size).map(|r| t.event(r)));
        }
        u
    }

    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(config_err("archetypes: at least one is required"));
        }
        if self.users == 0 || self.days == 0 {
            return Err(config_err("users and days must be positive"));
        }
        self.start_ms()?;
        let [lo, hi] = self.intra_gap_ms;
        if lo == 0 || lo > hi || hi >= self.min_inter_gap_ms {
            return Err(config_err(
                "intra_gap_ms must be 0 < min <= max < min_inter_gap_ms",
            ));
        }
        let valid_name = |s: &str| !s.is_empty() && !s.chars().any(char::is_whitespace);
        let mut names = BTreeSet::new();
        let mut share_sum = 0.0;
        for a in &self.archetypes {
            let at = |m: &str| config_err(format!("archetype {}: {m}", a.name));
            if !valid_name(&a.name) || !names.insert(a.name.as_str()) {
                return Err(at("name must be unique and free of whitespace"));
            }
            if !(a.share.is_finite() && a.share >= 0.0) {
                return Err(at("share must be a non-negative number"));
            }
            share_sum += a.share;
            let l = &a.length;
            if l.min == 0 || l.min > l.max || !l.mu.is_finite() || !(l.sigma.is_finite() && l.sigma >= 0.0) {
                return Err(at("length needs 1 <= min <= max and finite mu, sigma >= 0"));
            }
            let mut mass = a.tail_weight;
            if !(a.tail_weight.is_finite() && a.tail_weight >= 0.0) {
                return Err(at("tail_weight must be non-negative"));
            }
            if a.tail_weight > 0.0 && self.tail.is_none() {
                return Err(at("tail_weight needs a [tail] section"));
            }
            for (e, &w) in &a.events {
                if !valid_name(e) || !(w.is_finite() && w >= 0.0) {
                    return Err(at(&format!("bad event weight {e} = {w}")));
                }
                mass += w;
            }
            if mass <= 0.0 {
                return Err(at("event distribution is degenerate (no mass)"));
            }
            if (mass - 1.0).abs() > SUM_TOLERANCE {
                return Err(at(&format!("event distribution sums to {mass}, expected 1")));
            }
        }
        if (share_sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(config_err(format!("archetype shares sum to {share_sum}, expected 1")));
        }
        if let Some(t) = &self.tail {
            if t.size == 0 || !valid_name(&t.prefix) || !(t.exponent.is_finite() && t.exponent >= 0.0) {
                return Err(config_err("tail: needs size > 0, a prefix and exponent >= 0"));
            }
        }
        for h in &self.holidays {
            if !names.contains(h.archetype.as_str()) {
                return Err(config_err(format!("holiday: unknown archetype {}", h.archetype)));
            }
            if !(h.multiplier.is_finite() && h.multiplier > 0.0) {
                return Err(config_err("holiday: multiplier must be positive"));
            }
        }
        let universe = self.universe();
        for p in &self.perturbations {
            p.to_perturbation(&self.scoring_features)?;
            if let Some(e) = p.events.iter().find(|e| !universe.contains(*e)) {
                return Err(config_err(format!("perturbation: event {e} is not in the universe")));
            }
        }
        Ok(())
    }
}

/// One generated session with its timestamps and hidden archetype.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    pub user_id: String,
    pub archetype: String,
    /// `(timestamp, event)` in time order.
    pub events: Vec<(u64, String)>,
}

impl GeneratedSession {
    pub fn start(&self) -> u64 {
        self.events.first().map_or(0, |e| e.0)
    }

    pub fn to_session(&self, platform: &str) -> Session {
        let start = self.start();
        Session {
            session_id: Session::make_id(&self.user_id, start),
            user_id: self.user_id.clone(),
            platform: platform.to_string(),
            start,
            end: self.events.last().map_or(start, |e| e.0),
            events: self.events.iter().map(|(_, e)| e.clone()).collect(),
        }
    }
}

/// Raw event line as read by the sessionizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user_id: String,
    pub ts: u64,
    pub event: String,
    pub platform: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub session_id: String,
    pub user_id: String,
    pub start: u64,
    pub archetype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLog {
    pub platform: String,
    /// Sessions grouped by user (user order), each user's in time order.
    pub sessions: Vec<GeneratedSession>,
}

impl SyntheticLog {
    pub fn events(&self) -> impl Iterator<Item = EventRecord> + '_ {
        self.sessions.iter().flat_map(move |s| {
            s.events.iter().map(move |(ts, e)| EventRecord {
                user_id: s.user_id.clone(),
                ts: *ts,
                event: e.clone(),
                platform: self.platform.clone(),
            })
        })
    }

    pub fn truth(&self) -> Vec<TruthRecord> {
        self.sessions
            .iter()
            .map(|s| TruthRecord {
                session_id: Session::make_id(&s.user_id, s.start()),
                user_id: s.user_id.clone(),
                start: s.start(),
                archetype: s.archetype.clone(),
            })
            .collect()
    }

    pub fn to_sessions(&self) -> Vec<Session> {
        self.sessions.iter().map(|s| s.to_session(&self.platform)).collect()
    }

    pub fn write(&self, events_path: &Path, truth_path: Option<&Path>) -> Result<()> {
        let events: Vec<EventRecord> = self.events().collect();
        crate::io::write_jsonl(events_path, &events)?;
        if let Some(p) = truth_path {
            crate::io::write_jsonl(p, &self.truth())?;
        }
        Ok(())
    }
}

/// Sampling tables shared by all users.
struct Sampler {
    archetypes: Vec<ArchetypeSampler>,
    tail_events: Vec<String>,
    tail: Option<WeightedIndex<f64>>,
}

struct ArchetypeSampler {
    events: Vec<String>,
    /// Last slot (if present) stands for the tail.
    dist: WeightedIndex<f64>,
    has_tail: bool,
    length: LogNormal<f64>,
}

impl Sampler {
    fn new(cfg: &SynthConfig) -> Result<Self> {
        let (tail_events, tail) = match &cfg.tail {
            Some(t) => {
                let w: Vec<f64> = (0..t.size).map(|r| ((r + 1) as f64).powf(-t.exponent)).collect();
                let dist = WeightedIndex::new(&w).map_err(|e| config_err(format!("tail: {e}")))?;
                ((0..t.size).map(|r| t.event(r)).collect(), Some(dist))
            }
            None => (Vec::new(), None),
        };
        let archetypes = cfg
            .archetypes
            .iter()
            .map(|a| {
                let events: Vec<String> = a.events.keys().cloned().collect();
                let mut w: Vec<f64> = a.events.values().copied().collect();
                let has_tail = a.tail_weight > 0.0;
                if has_tail {
                    w.push(a.tail_weight);
                }
                Ok(ArchetypeSampler {
                    events,
                    dist: WeightedIndex::new(&w)
                        .map_err(|e| config_err(format!("archetype {}: {e}", a.name)))?,
                    has_tail,
                    length: LogNormal::new(a.length.mu, a.length.sigma)
                        .map_err(|e| config_err(format!("archetype {}: {e}", a.name)))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Sampler {
            archetypes,
            tail_events,
            tail,
        })
    }

    fn length(&self, a: usize, spec: &LengthSpec, r: &mut rng::Rng) -> usize {
        let s = &self.archetypes[a];
        for _ in 0..LENGTH_REDRAWS {
            let n = s.length.sample(r).round();
            if n >= spec.min as f64 && n <= spec.max as f64 {
                return n as usize;
            }
        }
        (s.length.sample(r).round() as usize).clamp(spec.min, spec.max)
    }

    fn event(&self, a: usize, r: &mut rng::Rng) -> String {
        let s = &self.archetypes[a];
        let i = s.dist.sample(r);
        if s.has_tail && i == s.events.len() {
            let t = self.tail.as_ref().expect("validated").sample(r);
            self.tail_events[t].clone()
        } else {
            s.events[i].clone()
        }
    }
}

fn holiday_factor(h: &Holiday, day: u32) -> f64 {
    if day == h.day {
        h.multiplier
    } else if day < h.day && h.day - day <= h.lead_days {
        let frac = 1.0 - (h.day - day) as f64 / (h.lead_days + 1) as f64;
        1.0 + (h.multiplier - 1.0) * frac
    } else {
        1.0
    }
}

/// Generate `n_sessions` sessions spread over the configured users and days.
/// Each user draws from its own seeded stream, so output is independent of
/// thread scheduling.
pub fn generate(cfg: &SynthConfig, n_sessions: usize, seed: u64) -> Result<SyntheticLog> {
    cfg.validate()?;
    let sampler = Sampler::new(cfg)?;
    let start_ms = cfg.start_ms()?;
    let shares: Vec<f64> = cfg.archetypes.iter().map(|a| a.share).collect();
    let day_dists: Vec<WeightedIndex<f64>> = (0..cfg.days + 1)
        .map(|day| {
            let w: Vec<f64> = cfg
                .archetypes
                .iter()
                .zip(&shares)
                .map(|(a, &s)| {
                    cfg.holidays
                        .iter()
                        .filter(|h| h.archetype == a.name)
                        .fold(s, |acc, h| acc * holiday_factor(h, day))
                })
                .collect();
            WeightedIndex::new(&w).map_err(|e| config_err(format!("shares: {e}")))
        })
        .collect::<Result<_>>()?;
    let n_users = cfg.users.min(n_sessions.max(1));
    let width = n_users.to_string().len().max(5);
    let span = u64::from(cfg.days) * DAY_MS;
    let [gap_lo, gap_hi] = cfg.intra_gap_ms;

    let per_user: Vec<Vec<GeneratedSession>> = (0..n_users)
        .into_par_iter()
        .map(|u| {
            let n = n_sessions / n_users + usize::from(u < n_sessions % n_users);
            let mut r = rng::rng(seed, u as u64);
            let user_id = format!("u{u:0width$}");
            let mut starts: Vec<u64> = (0..n).map(|_| r.random_range(0..span)).collect();
            starts.sort_unstable();
            let mut out = Vec::with_capacity(n);
            let mut earliest = 0u64;
            for s in starts {
                let t0 = s.max(earliest);
                let day = ((t0 / DAY_MS) as u32).min(cfg.days);
                let a = day_dists[day as usize].sample(&mut r);
                let len = sampler.length(a, &cfg.archetypes[a].length, &mut r);
                let mut t = start_ms + t0;
                let mut events = Vec::with_capacity(len);
                for i in 0..len {
                    if i > 0 {
                        t += r.random_range(gap_lo..=gap_hi);
                    }
                    events.push((t, sampler.event(a, &mut r)));
                }
                earliest = t - start_ms + cfg.min_inter_gap_ms;
                out.push(GeneratedSession {
                    user_id: user_id.clone(),
                    archetype: cfg.archetypes[a].name.clone(),
                    events,
                });
            }
            out
        })
        .collect();
    let mut log = SyntheticLog {
        platform: cfg.platform.clone(),
        sessions: per_user.into_iter().flatten().collect(),
    };
    for (i, spec) in cfg.perturbations.iter().enumerate() {
        let p = spec.to_perturbation(&cfg.scoring_features)?;
        let pseed = rng::derive_str(seed, &format!("perturbation-{i}"));
        log.sessions = log
            .sessions
            .iter()
            .filter_map(|s| perturb_generated(s, &p, pseed))
            .collect();
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Events(BTreeSet<String>),
    /// Every event outside the given set.
    AllExcept(BTreeSet<String>),
}

impl Targets {
    pub fn contains(&self, event: &str) -> bool {
        match self {
            Targets::Events(s) => s.contains(event),
            Targets::AllExcept(s) => !s.contains(event),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub targets: Targets,
    pub multiplier: f64,
    pub fraction: f64,
}

impl Perturbation {
    pub fn new(targets: Targets, multiplier: f64, fraction: f64) -> Result<Self> {
        if !(multiplier.is_finite() && multiplier > 0.0) {
            return Err(config_err(format!("perturbation multiplier must be > 0, got {multiplier}")));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(config_err(format!("perturbation fraction must be in [0,1], got {fraction}")));
        }
        Ok(Perturbation {
            targets,
            multiplier,
            fraction,
        })
    }

    /// Whether a session falls in the affected fraction; depends only on the
    /// seed and the session id.
    pub fn affects(&self, session_id: &str, seed: u64) -> bool {
        self.fraction > 0.0 && rng::rng_str(seed, session_id).random::<f64>() < self.fraction
    }
}

impl PerturbationSpec {
    pub fn to_perturbation(&self, scoring: &[String]) -> Result<Perturbation> {
        let targets = match (self.long_tail, self.events.is_empty()) {
            (true, true) => Targets::AllExcept(scoring.iter().cloned().collect()),
            (false, false) => Targets::Events(self.events.iter().cloned().collect()),
            _ => return Err(config_err("perturbation: give either events or long_tail = true")),
        };
        Perturbation::new(targets, self.multiplier, self.fraction)
    }
}

/// Repeat each target occurrence so the total count becomes
/// `round(count * multiplier)`, spreading copies evenly over occurrences.
fn rescale<T: Clone>(items: &[T], name: impl Fn(&T) -> &str, targets: &Targets, m: f64) -> Vec<T> {
    let mut totals: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for it in items {
        let n = name(it);
        if targets.contains(n) {
            totals.entry(n).or_default().0 += 1;
        }
    }
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let n = name(it);
        match totals.get_mut(n) {
            Some((c, seen)) => {
                let target = (*c as f64 * m).round() as usize;
                let before = *seen * target / *c;
                *seen += 1;
                let after = *seen * target / *c;
                out.extend(std::iter::repeat_n(it.clone(), after - before));
            }
            None => out.push(it.clone()),
        }
    }
    out
}

/// Perturb a session's event list in place of its original; session
/// metadata (id, start, end) is kept. Untouched sessions come back equal.
pub fn perturb_session(s: &Session, p: &Perturbation, seed: u64) -> Session {
    if !p.affects(&s.session_id, seed) {
        return s.clone();
    }
    Session {
        events: rescale(&s.events, |e| e.as_str(), &p.targets, p.multiplier),
        ..s.clone()
    }
}

pub fn perturb_sessions(sessions: &[Session], p: &Perturbation, seed: u64) -> Vec<Session> {
    sessions.iter().map(|s| perturb_session(s, p, seed)).collect()
}

/// Event-level perturbation of a generated session; copies share the
/// timestamp of the original occurrence. Returns `None` if nothing is left.
fn perturb_generated(s: &GeneratedSession, p: &Perturbation, seed: u64) -> Option<GeneratedSession> {
    let id = Session::make_id(&s.user_id, s.start());
    if !p.affects(&id, seed) {
        return Some(s.clone());
    }
    let events = rescale(&s.events, |e| e.1.as_str(), &p.targets, p.multiplier);
    (!events.is_empty()).then(|| GeneratedSession {
        events,
        ..s.clone()
    })
}
