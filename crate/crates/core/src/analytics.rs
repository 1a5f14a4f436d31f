//! Post-scoring analyses: category shares, session lengths, transitions
//! between consecutive sessions, daily and weekday proportions, windowed
//! indices and top-weighted events per category.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate, TimeDelta};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::score::{DailyCategories, ScoredSession};
use crate::vectorize::VectorRecord;

pub const DEFAULT_PRUNE: f64 = 0.15;
pub const DEFAULT_TOP_FEATURES: usize = 6;
const DAY_MS: u64 = 86_400_000;

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

/// UTC day index of an epoch-millisecond timestamp.
pub fn day_of(ts_ms: u64) -> i64 {
    (ts_ms / DAY_MS) as i64
}

pub fn day_to_date(day: i64) -> String {
    (epoch() + TimeDelta::days(day)).format("%Y-%m-%d").to_string()
}

pub fn date_to_day(date: &str) -> Result<i64> {
    let d = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
        .map_err(|_| Error::InvalidInput(format!("bad date {date:?}, expected YYYY-MM-DD")))?;
    Ok((d - epoch()).num_days())
}

/// Parse `START:END` (inclusive dates) into day indices.
pub fn parse_window(text: &str) -> Result<(i64, i64)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::InvalidInput(format!("window {text:?} is not START:END")))?;
    let (a, b) = (date_to_day(a)?, date_to_day(b)?);
    if b < a {
        return Err(Error::InvalidInput(format!("window {text:?} ends before it starts")));
    }
    Ok((a, b))
}

pub fn category_shares(scored: &[ScoredSession]) -> BTreeMap<String, f64> {
    let n = scored.len() as f64;
    crate::score::category_counts(scored)
        .into_iter()
        .map(|(c, k)| (c, k as f64 / n))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthStats {
    pub sessions: usize,
    pub share: f64,
    pub mean_events: f64,
    pub median_events: f64,
    pub mean_duration_ms: f64,
    pub median_duration_ms: f64,
    /// Mean events relative to the overall mean.
    pub events_index: f64,
    pub duration_index: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn index(value: f64, overall: f64) -> f64 {
    if overall > 0.0 {
        value / overall
    } else {
        1.0
    }
}

/// Per-category lengths; the `"overall"` row has index 1.
pub fn length_stats(scored: &[ScoredSession]) -> BTreeMap<String, LengthStats> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in scored {
        let g = groups.entry(&s.category).or_default();
        g.0.push(s.n_events as f64);
        g.1.push(s.duration_ms() as f64);
    }
    let n = scored.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let all_events: Vec<f64> = scored.iter().map(|s| s.n_events as f64).collect();
    let all_durations: Vec<f64> = scored.iter().map(|s| s.duration_ms() as f64).collect();
    let (overall_events, overall_duration) = (mean(&all_events), mean(&all_durations));
    let stats = |mut ev: Vec<f64>, mut du: Vec<f64>| {
        let (me, md) = (mean(&ev), mean(&du));
        LengthStats {
            sessions: ev.len(),
            share: ev.len() as f64 / n,
            mean_events: me,
            median_events: median(&mut ev),
            mean_duration_ms: md,
            median_duration_ms: median(&mut du),
            events_index: index(me, overall_events),
            duration_index: index(md, overall_duration),
        }
    };
    let mut out: BTreeMap<String, LengthStats> = groups
        .into_iter()
        .map(|(c, (ev, du))| (c.to_string(), stats(ev, du)))
        .collect();
    if !scored.is_empty() {
        out.insert("overall".into(), stats(all_events, all_durations));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    pub categories: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl TransitionMatrix {
    pub fn support(&self, from: usize) -> usize {
        self.counts[from].iter().sum()
    }

    /// Row-normalized probabilities; `None` for rows without support.
    pub fn probabilities(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row.iter().map(|&c| c as f64 / n as f64).collect())
            })
            .collect()
    }

    pub fn unsupported(&self) -> Vec<&str> {
        (0..self.categories.len())
            .filter(|&i| self.support(i) == 0)
            .map(|i| self.categories[i].as_str())
            .collect()
    }

    /// Edges with probability at least `prune`; rows are not renormalized.
    pub fn pruned_edges(&self, prune: f64) -> Vec<(String, String, f64)> {
        let mut edges = Vec::new();
        for (i, row) in self.probabilities().into_iter().enumerate() {
            for (j, p) in row.into_iter().flatten().enumerate() {
                if p >= prune && p > 0.0 {
                    edges.push((self.categories[i].clone(), self.categories[j].clone(), p));
                }
            }
        }
        edges
    }

    /// Graphviz digraph of the pruned edges.
    pub fn to_dot(&self, prune: f64) -> String {
        let mut out = String::from("digraph transitions {\n");
        for c in &self.categories {
            let _ = writeln!(out, "  \"{c}\";");
        }
        for (a, b, p) in self.pruned_edges(prune) {
            let _ = writeln!(out, "  \"{a}\" -> \"{b}\" [label=\"{p:.2}\"];");
        }
        out.push_str("}\n");
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("from\\to");
        for c in &self.categories {
            let _ = write!(out, "\t{c}");
        }
        out.push_str("\tsupport\n");
        for (i, row) in self.probabilities().into_iter().enumerate() {
            out.push_str(&self.categories[i]);
            match row {
                Some(r) => r.iter().for_each(|p| {
                    let _ = write!(out, "\t{p:.4}");
                }),
                None => self.categories.iter().for_each(|_| out.push_str("\tn/a")),
            }
            let _ = writeln!(out, "\t{}", self.support(i));
        }
        out
    }
}

/// Count consecutive same-user session pairs (ordered by start). Pairs whose
/// gap exceeds `max_gap_ms` are not counted.
pub fn transition_matrix(scored: &[ScoredSession], max_gap_ms: Option<u64>) -> TransitionMatrix {
    let mut categories: Vec<String> = scored.iter().map(|s| s.category.clone()).collect();
    categories.sort();
    categories.dedup();
    let k = categories.len();
    let idx = |c: &str| categories.binary_search_by(|x| x.as_str().cmp(c)).expect("known category");
    let mut by_user: BTreeMap<&str, Vec<&ScoredSession>> = BTreeMap::new();
    for s in scored {
        by_user.entry(&s.user_id).or_default().push(s);
    }
    let mut counts = vec![vec![0; k]; k];
    for seq in by_user.values_mut() {
        seq.sort_by(|a, b| (a.start, &a.session_id).cmp(&(b.start, &b.session_id)));
        for w in seq.windows(2) {
            if let Some(max) = max_gap_ms {
                if w[1].start.saturating_sub(w[0].end) > max {
                    continue;
                }
            }
            counts[idx(&w[0].category)][idx(&w[1].category)] += 1;
        }
    }
    TransitionMatrix { categories, counts }
}

/// Mean daily proportion of each category per weekday (Mon..Sun).
pub fn weekday_proportions(daily: &DailyCategories) -> BTreeMap<String, [f64; 7]> {
    let mut sums: BTreeMap<String, [f64; 7]> = BTreeMap::new();
    let mut n_days = [0usize; 7];
    for (day, props) in daily.proportions() {
        let wd = (epoch() + TimeDelta::days(day)).weekday().num_days_from_monday() as usize;
        n_days[wd] += 1;
        for (c, p) in props {
            sums.entry(c).or_insert([0.0; 7])[wd] += p;
        }
    }
    for v in sums.values_mut() {
        for (x, &n) in v.iter_mut().zip(&n_days) {
            if n > 0 {
                *x /= n as f64;
            }
        }
    }
    sums
}

pub fn weekday_table(daily: &DailyCategories) -> String {
    let mut out = String::from("category\tMon\tTue\tWed\tThu\tFri\tSat\tSun\n");
    for (c, v) in weekday_proportions(daily) {
        out.push_str(&c);
        for p in v {
            let _ = write!(out, "\t{p:.4}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowedIndex {
    pub days: Vec<i64>,
    /// Daily count divided by the category's mean daily count in the window.
    pub series: BTreeMap<String, Vec<f64>>,
    /// Requested categories with no sessions in the window.
    pub absent: Vec<String>,
}

impl WindowedIndex {
    pub fn to_table(&self) -> String {
        let mut out = String::from("date");
        for c in self.series.keys() {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for (t, day) in self.days.iter().enumerate() {
            out.push_str(&day_to_date(*day));
            for s in self.series.values() {
                let _ = write!(out, "\t{:.4}", s[t]);
            }
            out.push('\n');
        }
        out
    }
}

/// Per-day counts in `[start, end]` normalized by each category's average.
pub fn windowed_index(
    daily: &DailyCategories,
    categories: &[String],
    start: i64,
    end: i64,
) -> Result<WindowedIndex> {
    if end - start < 1 {
        return Err(Error::InvalidInput("windowed index needs at least 2 days".into()));
    }
    let days: Vec<i64> = (start..=end).collect();
    let mut series = BTreeMap::new();
    let mut absent = Vec::new();
    for c in categories {
        let counts: Vec<f64> = days.iter().map(|&d| daily.count(d, c) as f64).collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        if mean == 0.0 {
            absent.push(c.clone());
            continue;
        }
        series.insert(c.clone(), counts.iter().map(|x| x / mean).collect());
    }
    Ok(WindowedIndex {
        days,
        series,
        absent,
    })
}

/// Events ranked by mean TF-IDF weight over each category's sessions.
pub fn top_features(
    vectors: &[VectorRecord],
    category_of: &HashMap<String, String>,
    m: usize,
) -> BTreeMap<String, Vec<(String, f64)>> {
    let mut sums: BTreeMap<&str, (usize, BTreeMap<&str, f64>)> = BTreeMap::new();
    for v in vectors {
        let Some(cat) = category_of.get(&v.session_id) else {
            continue;
        };
        let entry = sums.entry(cat).or_default();
        entry.0 += 1;
        for (e, w) in &v.weights {
            *entry.1.entry(e).or_insert(0.0) += w;
        }
    }
    sums.into_iter()
        .map(|(cat, (n, w))| {
            let mut ranked: Vec<(String, f64)> =
                w.into_iter().map(|(e, s)| (e.to_string(), s / n as f64)).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            ranked.truncate(m);
            (cat.to_string(), ranked)
        })
        .collect()
}

/// Simple SVG line chart; one polyline per series over a shared x axis.
pub fn line_chart_svg(title: &str, x_labels: &[String], series: &BTreeMap<String, Vec<f64>>) -> String {
    let (w, h, pad) = (720.0, 360.0, 40.0);
    let y_max = series
        .values()
        .flatten()
        .copied()
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let n = x_labels.len().max(2) as f64 - 1.0;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<text x=\"{pad}\" y=\"20\">{title}</text>\n"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - pad,
        h - pad
    );
    for (si, (name, ys)) in series.iter().enumerate() {
        let hue = (si * 47) % 360;
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let px = pad + (w - 2.0 * pad) * i as f64 / n;
                let py = h - pad - (h - 2.0 * pad) * y / y_max;
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"hsl({hue},70%,45%)\" points=\"{}\"><title>{name}</title></polyline>",
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"hsl({hue},70%,45%)\">{name}</text>",
            w - pad - 120.0,
            pad + 14.0 * si as f64
        );
    }
    if let (Some(first), Some(last)) = (x_labels.first(), x_labels.last()) {
        let _ = writeln!(out, "<text x=\"{pad}\" y=\"{}\">{first}</text>", h - 10.0);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{last}</text>", w - pad - 80.0, h - 10.0);
    }
    out.push_str("</svg>\n");
    out
}

pub fn bar_chart_svg(title: &str, bars: &BTreeMap<String, f64>) -> String {
    let (w, row, pad) = (600.0, 24.0, 160.0);
    let h = 40.0 + row * bars.len() as f64;
    let max = bars.values().copied().fold(0.0_f64, f64::max).max(1e-12);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<text x=\"10\" y=\"20\">{title}</text>\n"
    );
    for (i, (name, v)) in bars.iter().enumerate() {
        let y = 30.0 + row * i as f64;
        let len = (w - pad - 60.0) * v / max;
        let _ = writeln!(out, "<text x=\"10\" y=\"{:.1}\">{name}</text>", y + 15.0);
        let _ = writeln!(
            out,
            "<rect x=\"{pad}\" y=\"{y:.1}\" width=\"{len:.1}\" height=\"{:.1}\" fill=\"steelblue\"/>",
            row - 6.0
        );
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\">{v:.3}</text>", pad + len + 4.0, y + 15.0);
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub transitions: bool,
    pub prune: f64,
    pub max_gap_ms: Option<u64>,
    /// Inclusive day range; defaults to the full span of the data.
    pub window: Option<(i64, i64)>,
    pub top_features: usize,
    pub svg: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            transitions: true,
            prune: DEFAULT_PRUNE,
            max_gap_ms: None,
            window: None,
            top_features: DEFAULT_TOP_FEATURES,
            svg: true,
        }
    }
}

fn write_file(dir: &Path, name: &str, text: &str, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(name.to_string());
    Ok(())
}

/// Write every report table (and charts) into `dir`; returns the file names.
pub fn write_report(
    dir: &Path,
    scored: &[ScoredSession],
    vectors: Option<&[VectorRecord]>,
    opts: &ReportOptions,
) -> Result<Vec<String>> {
    if scored.is_empty() {
        return Err(Error::InvalidInput("report needs at least one scored session".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let shares = category_shares(scored);
    let mut t = String::from("category\tshare\n");
    for (c, s) in &shares {
        let _ = writeln!(t, "{c}\t{s:.6}");
    }
    write_file(dir, "category_shares.tsv", &t, &mut written)?;

    let mut t = String::from(
        "category\tsessions\tshare\tmean_events\tmedian_events\tmean_duration_ms\tmedian_duration_ms\tevents_index\tduration_index\n",
    );
    for (c, s) in length_stats(scored) {
        let _ = writeln!(
            t,
            "{c}\t{}\t{:.6}\t{:.3}\t{:.1}\t{:.1}\t{:.1}\t{:.4}\t{:.4}",
            s.sessions,
            s.share,
            s.mean_events,
            s.median_events,
            s.mean_duration_ms,
            s.median_duration_ms,
            s.events_index,
            s.duration_index
        );
    }
    write_file(dir, "length_stats.tsv", &t, &mut written)?;

    let daily = DailyCategories::from_scored(scored);
    write_file(dir, "daily_proportions.tsv", &daily.to_table(), &mut written)?;
    write_file(dir, "weekday_proportions.tsv", &weekday_table(&daily), &mut written)?;

    if opts.transitions {
        let tm = transition_matrix(scored, opts.max_gap_ms);
        write_file(dir, "transitions.tsv", &tm.to_table(), &mut written)?;
        write_file(dir, "transitions.dot", &tm.to_dot(opts.prune), &mut written)?;
    }

    let first = *daily.days.keys().next().expect("non-empty");
    let last = *daily.days.keys().next_back().expect("non-empty");
    let (start, end) = opts.window.unwrap_or((first, last));
    let windowed = (end > start)
        .then(|| windowed_index(&daily, &daily.categories, start, end))
        .transpose()?;
    if let Some(w) = &windowed {
        write_file(dir, "windowed_index.tsv", &w.to_table(), &mut written)?;
    }

    if let Some(vectors) = vectors {
        let category_of: HashMap<String, String> = scored
            .iter()
            .map(|s| (s.session_id.clone(), s.category.clone()))
            .collect();
        let mut t = String::from("category\trank\tevent\tmean_weight\n");
        for (c, list) in top_features(vectors, &category_of, opts.top_features) {
            for (r, (e, w)) in list.iter().enumerate() {
                let _ = writeln!(t, "{c}\t{}\t{e}\t{w:.4}", r + 1);
            }
        }
        write_file(dir, "top_features.tsv", &t, &mut written)?;
    }

    if opts.svg {
        write_file(dir, "category_shares.svg", &bar_chart_svg("Category shares", &shares), &mut written)?;
        if let Some(w) = &windowed {
            let labels: Vec<String> = w.days.iter().map(|&d| day_to_date(d)).collect();
            write_file(
                dir,
                "windowed_index.svg",
                &line_chart_svg("Daily sessions relative to window mean", &labels, &w.series),
                &mut written,
            )?;
        }
    }
    Ok(written)
}
