//! Rank events by how steady their daily counts are.
//!
//! Each series is fitted by least squares with a linear trend plus a
//! day-of-week effect. The ranking key is the residual coefficient of
//! variation, `std(residual) / mean(count)`.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_DAYS: usize = 14;
const WEEK: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventStability {
    pub event: String,
    /// `f64::INFINITY` for series with zero mean.
    pub residual_cv: f64,
}

/// Events ordered from most to least stable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRanking {
    pub entries: Vec<EventStability>,
}

impl StabilityRanking {
    pub fn events(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.event.as_str())
    }

    /// Reverse the order (least stable first).
    pub fn inverted(mut self) -> Self {
        self.entries.reverse();
        self
    }
}

/// Residuals of a joint least-squares fit of a linear trend plus one effect
/// per day-of-week phase. Both the series and the time index are centered
/// within each phase, then the centered series is regressed on centered time.
pub fn deseasonalized_residuals(series: &[f64]) -> Vec<f64> {
    let phase_centered = |v: &[f64]| -> Vec<f64> {
        let mut sum = [0.0; WEEK];
        let mut n = [0usize; WEEK];
        for (t, x) in v.iter().enumerate() {
            sum[t % WEEK] += x;
            n[t % WEEK] += 1;
        }
        v.iter()
            .enumerate()
            .map(|(t, x)| x - sum[t % WEEK] / n[t % WEEK] as f64)
            .collect()
    };
    let time: Vec<f64> = (0..series.len()).map(|t| t as f64).collect();
    let y = phase_centered(series);
    let t = phase_centered(&time);
    let sxx: f64 = t.iter().map(|x| x * x).sum();
    let sxy: f64 = t.iter().zip(&y).map(|(a, b)| a * b).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    y.iter().zip(&t).map(|(yi, ti)| yi - slope * ti).collect()
}

pub fn residual_cv(series: &[f64]) -> f64 {
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    if mean <= 0.0 {
        return f64::INFINITY;
    }
    let resid = deseasonalized_residuals(series);
    let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
    // round-off leaves ~1e-16 residue on exactly linear/seasonal series
    let std = var.sqrt();
    if std < 1e-9 * mean {
        0.0
    } else {
        std / mean
    }
}

/// Rank events by ascending residual CV (ties by name). All series must be
/// aligned and span at least 14 days.
pub fn rank_event_stability(series: &BTreeMap<String, Vec<f64>>) -> Result<StabilityRanking> {
    let len = series.values().next().map_or(0, Vec::len);
    if series.values().any(|s| s.len() != len) {
        return Err(Error::InvalidInput("daily series are not aligned".into()));
    }
    if len < MIN_DAYS {
        return Err(Error::InvalidInput(format!(
            "stability ranking needs at least {MIN_DAYS} days, got {len}"
        )));
    }
    let mut entries: Vec<EventStability> = series
        .iter()
        .map(|(event, s)| EventStability {
            event: event.clone(),
            residual_cv: residual_cv(s),
        })
        .collect();
    entries.sort_by(|a, b| {
        a.residual_cv
            .total_cmp(&b.residual_cv)
            .then_with(|| a.event.cmp(&b.event))
    });
    Ok(StabilityRanking { entries })
}

/// Parse `date,event,count` rows (header optional) into aligned daily
/// series. Dates are `YYYY-MM-DD`; days without a row count as zero.
pub fn parse_daily_counts_csv(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rows: Vec<(NaiveDate, String, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("date")) {
            continue;
        }
        let bad = || Error::InvalidInput(format!("daily counts line {}: {line:?}", i + 1));
        let mut parts = line.split(',');
        let (Some(d), Some(e), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let date = NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|_| bad())?;
        let count: f64 = c.trim().parse().map_err(|_| bad())?;
        rows.push((date, e.trim().to_string(), count));
    }
    let Some(first) = rows.iter().map(|r| r.0).min() else {
        return Ok(BTreeMap::new());
    };
    let last = rows.iter().map(|r| r.0).max().expect("non-empty");
    let days = (last - first).num_days() as usize + 1;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (date, event, count) in rows {
        let t = (date - first).num_days() as usize;
        out.entry(event).or_insert_with(|| vec![0.0; days])[t] += count;
    }
    Ok(out)
}

/// Render `day index -> event -> count` as `date,event,count` CSV.
pub fn daily_counts_csv(counts: &BTreeMap<i64, BTreeMap<String, u64>>) -> String {
    let mut out = String::from("date,event,count\n");
    for (day, events) in counts {
        let date = crate::analytics::day_to_date(*day);
        for (event, c) in events {
            out.push_str(&format!("{date},{event},{c}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn linear_series_has_zero_cv() {
        let s: Vec<f64> = (0..30).map(|t| 100.0 + 3.0 * t as f64).collect();
        assert_eq!(residual_cv(&s), 0.0);
    }

    #[test]
    fn weekly_pattern_is_removed() {
        let pattern = [5.0, -3.0, 2.0, 0.0, -1.0, 4.0, -7.0];
        let s: Vec<f64> = (0..28).map(|t| 50.0 + pattern[t % 7]).collect();
        assert_eq!(residual_cv(&s), 0.0);
    }

    #[test]
    fn iid_noise_cv_close_to_ratio() {
        let (m, sd) = (200.0, 20.0);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(m, sd).unwrap();
        let s: Vec<f64> = (0..90).map(|_| normal.sample(&mut r)).collect();
        // direct computation of the sample ratio for reference
        let mean = s.iter().sum::<f64>() / 90.0;
        let direct = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 90.0).sqrt() / mean;
        let cv = residual_cv(&s);
        assert!((cv - sd / m).abs() / (sd / m) < 0.2, "cv {cv}");
        assert!((cv - direct).abs() / direct < 0.2);
    }

    #[test]
    fn ranking_orders_stable_first_and_zero_mean_last() {
        let mut series = BTreeMap::new();
        series.insert("FLAT".to_string(), vec![10.0; 14]);
        series.insert("ZERO".to_string(), vec![0.0; 14]);
        series.insert(
            "NOISY".to_string(),
            (0..14).map(|t| if t % 3 == 0 { 30.0 } else { 5.0 }).collect(),
        );
        let r = rank_event_stability(&series).unwrap();
        let order: Vec<_> = r.events().collect();
        assert_eq!(order, ["FLAT", "NOISY", "ZERO"]);
        assert!(r.entries[2].residual_cv.is_infinite());
        assert_eq!(r.inverted().entries[0].event, "ZERO");
    }

    #[test]
    fn short_or_misaligned_series_are_rejected() {
        let mut series = BTreeMap::new();
        series.insert("A".to_string(), vec![1.0; 13]);
        assert!(rank_event_stability(&series).is_err());
        series.insert("B".to_string(), vec![1.0; 14]);
        assert!(rank_event_stability(&series).is_err());
    }

    #[test]
    fn csv_fills_missing_days() {
        let text = "date,event,count\n2016-11-01,A,3\n2016-11-03,A,5\n2016-11-02,B,1\n";
        let s = parse_daily_counts_csv(text).unwrap();
        assert_eq!(s["A"], vec![3.0, 0.0, 5.0]);
        assert_eq!(s["B"], vec![0.0, 1.0, 0.0]);
        assert!(parse_daily_counts_csv("2016-11-01,A").is_err());
    }
}
