//! Event-log parsing and time-gap sessionization.
//!
//! Records are line-delimited JSON objects with the fields `user_id`, `ts`
//! (epoch milliseconds), `event` and `platform`. Each `(user_id, platform)`
//! stream is sorted by timestamp (ties keep input order) and split into
//! sessions wherever the gap to the previous event reaches the threshold.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_GAP_MS: u64 = 60_000;
pub const MAX_GAP_MS: u64 = 7_200_000;
pub const DEFAULT_GAP_MS: u64 = 1_800_000;
pub const DEFAULT_MIN_EVENTS: usize = 2;
/// Fewer gaps than this fall back to the default threshold.
pub const MIN_GAPS_FOR_ESTIMATE: usize = 100;
/// Cluster centers closer than this (log10 units) are treated as unimodal.
pub const UNIMODAL_LOG_SEPARATION: f64 = 0.5;

const PLATFORM_UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub user_id: String,
    /// Epoch milliseconds, UTC.
    pub timestamp: u64,
    pub event_name: String,
    pub platform: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub platform: String,
    pub start: u64,
    pub end: u64,
    pub events: Vec<String>,
}

impl Session {
    pub fn make_id(user_id: &str, start: u64) -> String {
        format!("{user_id}:{start}")
    }

    pub fn duration_ms(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    TwoMeansLog,
    FixedDefault,
    /// Supplied by the operator (`--gap-ms N`).
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub threshold_ms: u64,
    pub method: GapMethod,
}

impl GapEstimate {
    pub fn fixed_default() -> Self {
        GapEstimate {
            threshold_ms: DEFAULT_GAP_MS,
            method: GapMethod::FixedDefault,
        }
    }

    pub fn manual(threshold_ms: u64) -> Result<Self> {
        if !(MIN_GAP_MS..=MAX_GAP_MS).contains(&threshold_ms) {
            return Err(Error::InvalidInput(format!(
                "gap {threshold_ms} ms outside [{MIN_GAP_MS}, {MAX_GAP_MS}]"
            )));
        }
        Ok(GapEstimate {
            threshold_ms,
            method: GapMethod::Manual,
        })
    }
}

/// Why a record was rejected during parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unparseable,
    MissingUserId,
    MissingTimestamp,
    MissingEvent,
    /// Event names and platforms must be non-empty and whitespace free.
    InvalidName,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RejectReport {
    pub total_lines: usize,
    pub accepted: usize,
    pub denylisted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl RejectReport {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Events grouped per `(user_id, platform)` stream, each sorted by time.
#[derive(Debug, Clone, Default)]
pub struct ParsedEvents {
    pub streams: BTreeMap<(String, String), Vec<Event>>,
    pub report: RejectReport,
}

impl ParsedEvents {
    pub fn event_count(&self) -> usize {
        self.streams.values().map(Vec::len).sum()
    }

    pub fn user_count(&self) -> usize {
        let users: HashSet<&str> = self.streams.keys().map(|(u, _)| u.as_str()).collect();
        users.len()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    user_id: Option<serde_json::Value>,
    ts: Option<serde_json::Value>,
    event: Option<String>,
    platform: Option<String>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

fn parse_record(line: &str) -> std::result::Result<Event, RejectReason> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|_| RejectReason::Unparseable)?;
    let user_id = match raw.user_id {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => return Err(RejectReason::MissingUserId),
    };
    let timestamp = raw
        .ts
        .as_ref()
        .and_then(serde_json::Value::as_u64)
        .ok_or(RejectReason::MissingTimestamp)?;
    let event_name = raw.event.ok_or(RejectReason::MissingEvent)?;
    if event_name.is_empty() {
        return Err(RejectReason::MissingEvent);
    }
    let platform = raw.platform.unwrap_or_else(|| PLATFORM_UNKNOWN.to_string());
    if !valid_name(&event_name) || !valid_name(&platform) {
        return Err(RejectReason::InvalidName);
    }
    Ok(Event {
        user_id,
        timestamp,
        event_name,
        platform,
    })
}

/// Parse a line-delimited event stream. Bad lines are counted, never fatal.
pub fn parse_events<R: BufRead>(reader: R, denylist: &HashSet<String>) -> Result<ParsedEvents> {
    let mut parsed = ParsedEvents::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        parsed.report.total_lines += 1;
        match parse_record(&line) {
            Ok(ev) if denylist.contains(&ev.event_name) => parsed.report.denylisted += 1,
            Ok(ev) => {
                parsed.report.accepted += 1;
                parsed
                    .streams
                    .entry((ev.user_id.clone(), ev.platform.clone()))
                    .or_default()
                    .push(ev);
            }
            Err(reason) => *parsed.report.rejected.entry(reason).or_default() += 1,
        }
    }
    for stream in parsed.streams.values_mut() {
        // stable: ties keep input order
        stream.sort_by_key(|e| e.timestamp);
    }
    Ok(parsed)
}

/// Read a denylist file: one event name per line, `#` starts a comment.
pub fn parse_denylist(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Hook for spam and bot removal. The default keeps everything.
pub trait ActivityFilter: Sync {
    fn keep_stream(&self, _user_id: &str, _events: &[Event]) -> bool {
        true
    }
}

pub struct KeepAll;

impl ActivityFilter for KeepAll {}

pub fn apply_filter(parsed: &mut ParsedEvents, filter: &dyn ActivityFilter) {
    parsed
        .streams
        .retain(|(user, _), events| filter.keep_stream(user, events));
}

/// Consecutive inter-event gaps within each stream, grouped by platform.
pub fn inter_event_gaps(parsed: &ParsedEvents) -> BTreeMap<String, Vec<u64>> {
    let mut out: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for ((_, platform), events) in &parsed.streams {
        let gaps = out.entry(platform.clone()).or_default();
        gaps.extend(events.windows(2).map(|w| w[1].timestamp - w[0].timestamp));
    }
    out
}

/// Two-cluster split of log10 gaps by Lloyd iterations seeded at the extremes.
/// Returns the ordered cluster centers, or `None` when all values coincide.
fn two_means_1d(values: &[f64]) -> Option<(f64, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return None;
    }
    let (mut c1, mut c2) = (lo, hi);
    for _ in 0..1000 {
        let mid = 0.5 * (c1 + c2);
        let (mut s1, mut n1, mut s2, mut n2) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if v <= mid {
                s1 += v;
                n1 += 1;
            } else {
                s2 += v;
                n2 += 1;
            }
        }
        let (nc1, nc2) = (s1 / n1 as f64, s2 / n2 as f64);
        if nc1 == c1 && nc2 == c2 {
            break;
        }
        c1 = nc1;
        c2 = nc2;
    }
    Some((c1, c2))
}

/// Estimate the session gap threshold from inter-event gaps.
///
/// Gaps are split into two clusters in log10 space; the threshold is the
/// log-space midpoint of the two centers, clamped to
/// `[MIN_GAP_MS, MAX_GAP_MS]`. Too few gaps or a unimodal distribution
/// yield the 30 minute default.
pub fn estimate_gap(gaps_ms: &[u64]) -> GapEstimate {
    if gaps_ms.len() < MIN_GAPS_FOR_ESTIMATE {
        return GapEstimate::fixed_default();
    }
    let logs: Vec<f64> = gaps_ms.iter().map(|&g| (g.max(1) as f64).log10()).collect();
    match two_means_1d(&logs) {
        Some((c1, c2)) if c2 - c1 >= UNIMODAL_LOG_SEPARATION => {
            let t = 10f64.powf(0.5 * (c1 + c2)).round() as u64;
            GapEstimate {
                threshold_ms: t.clamp(MIN_GAP_MS, MAX_GAP_MS),
                method: GapMethod::TwoMeansLog,
            }
        }
        _ => GapEstimate::fixed_default(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sessionized {
    pub sessions: Vec<Session>,
    pub dropped_sessions: usize,
    pub dropped_events: usize,
}

/// Split one time-ordered stream into sessions.
pub fn sessionize(events: &[Event], gap: &GapEstimate, min_events: usize) -> Sessionized {
    let mut out = Sessionized::default();
    let mut start = 0;
    for i in 1..=events.len() {
        let boundary = i == events.len()
            || events[i].timestamp - events[i - 1].timestamp >= gap.threshold_ms;
        if !boundary {
            continue;
        }
        let chunk = &events[start..i];
        if chunk.len() < min_events {
            out.dropped_sessions += 1;
            out.dropped_events += chunk.len();
        } else {
            let first = &chunk[0];
            out.sessions.push(Session {
                session_id: Session::make_id(&first.user_id, first.timestamp),
                user_id: first.user_id.clone(),
                platform: first.platform.clone(),
                start: first.timestamp,
                end: chunk[chunk.len() - 1].timestamp,
                events: chunk.iter().map(|e| e.event_name.clone()).collect(),
            });
        }
        start = i;
    }
    out
}

/// How the gap threshold is chosen for each platform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapPolicy {
    Auto,
    Fixed(GapEstimate),
}

/// Sessionize every stream in parallel. Output order follows the stream key
/// order, so it does not depend on scheduling.
pub fn sessionize_all(
    parsed: &ParsedEvents,
    policy: GapPolicy,
    min_events: usize,
) -> (Sessionized, BTreeMap<String, GapEstimate>) {
    let gaps: BTreeMap<String, GapEstimate> = match policy {
        GapPolicy::Fixed(g) => parsed
            .streams
            .keys()
            .map(|(_, p)| (p.clone(), g))
            .collect(),
        GapPolicy::Auto => inter_event_gaps(parsed)
            .into_iter()
            .map(|(p, g)| (p, estimate_gap(&g)))
            .collect(),
    };
    let parts: Vec<Sessionized> = parsed
        .streams
        .par_iter()
        .map(|((_, platform), events)| sessionize(events, &gaps[platform], min_events))
        .collect();
    let mut out = Sessionized::default();
    for p in parts {
        out.sessions.extend(p.sessions);
        out.dropped_sessions += p.dropped_sessions;
        out.dropped_events += p.dropped_events;
    }
    (out, gaps)
}

/// Per-day event counts (`date -> event -> count`), keyed by UTC day index.
pub fn daily_event_counts(parsed: &ParsedEvents) -> BTreeMap<i64, BTreeMap<String, u64>> {
    let mut out: BTreeMap<i64, BTreeMap<String, u64>> = BTreeMap::new();
    for ev in parsed.streams.values().flatten() {
        let day = (ev.timestamp / 86_400_000) as i64;
        *out.entry(day)
            .or_default()
            .entry(ev.event_name.clone())
            .or_default() += 1;
    }
    out
}
