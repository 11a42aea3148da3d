//! Loading and alignment of the four raw inputs: news corpus, half-hourly
//! demand, daily temperature and a holiday list.
//!
//! All timestamps are normalised onto a single reference clock (UTC when the
//! source carries offsets). Clock-change days arriving with 46 or 50
//! half-hour readings are repaired to exactly 48 by interpolating missing
//! slots or averaging duplicated ones, and flagged. Malformed rows are never
//! silently dropped: they are skipped with a counted report or turn into
//! errors, depending on severity.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-hour slots per day after normalisation.
pub const SLOTS_PER_DAY: usize = 48;

/// Canonical news section labels. Anything else maps to `other`, which is
/// itself one of the 18 labels so that section proportions always sum to 1.
pub const SECTIONS: [&str; 18] = [
    "africa",
    "asia",
    "australia",
    "business",
    "education",
    "entertainment",
    "europe",
    "health",
    "latin_america",
    "middle_east",
    "other",
    "politics",
    "science",
    "scotland",
    "technology",
    "uk",
    "us_canada",
    "world",
];

/// Maps a raw section string onto one of [`SECTIONS`].
pub fn canonical_section(raw: &str) -> String {
    let mut slug = String::new();
    let mut prev_sep = true;
    for ch in raw.trim().chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                slug.push(lc);
            }
            prev_sep = false;
        } else if !prev_sep {
            slug.push('_');
            prev_sep = true;
        }
    }
    let slug = slug.trim_end_matches('_');
    let slug = match slug {
        "science_environment" | "science_and_environment" => "science",
        "entertainment_arts" | "entertainment_and_arts" => "entertainment",
        "uk_politics" => "politics",
        "us_and_canada" => "us_canada",
        "latin_america_caribbean" | "latin_america_and_caribbean" => "latin_america",
        other => other,
    };
    if SECTIONS.contains(&slug) {
        slug.to_string()
    } else {
        "other".to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub date: NaiveDate,
    pub section: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub body: String,
}

impl NewsItem {
    pub fn text(&self, which: crate::features::TextType) -> &str {
        match which {
            crate::features::TextType::Title => &self.title,
            crate::features::TextType::Description => &self.description,
            crate::features::TextType::Body => &self.body,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub raw_records: usize,
    pub accepted: usize,
    pub skipped_bad_date: usize,
    pub skipped_out_of_window: usize,
    pub empty_text_records: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawArticle {
    date: String,
    #[serde(default)]
    section: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    body: String,
}

fn parse_article_date(s: &str) -> Option<NaiveDate> {
    let t = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.with_timezone(&Utc).date_naive());
    }
    if t.len() >= 10 {
        if let Ok(d) = NaiveDate::parse_from_str(&t[..10], "%Y-%m-%d") {
            return Some(d);
        }
    }
    None
}

/// Reads a news corpus from line-delimited JSON or a CSV table; the format is
/// chosen by extension, with a content sniff as fallback. Records with
/// unparseable dates are skipped and counted; when `window` is given, records
/// outside it are filtered out and counted separately.
pub fn ingest_corpus(
    path: &str,
    window: Option<(NaiveDate, NaiveDate)>,
) -> Result<(Vec<NewsItem>, IngestReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_jsonl = match Path::new(path).extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") | Some("ndjson") => true,
        Some("csv") | Some("tsv") => false,
        _ => text.trim_start().starts_with('{'),
    };

    let mut report = IngestReport::default();
    let mut items = Vec::new();
    let mut push = |raw: RawArticle, report: &mut IngestReport| {
        report.raw_records += 1;
        let Some(date) = parse_article_date(&raw.date) else {
            report.skipped_bad_date += 1;
            return;
        };
        if let Some((start, end)) = window {
            if date < start || date > end {
                report.skipped_out_of_window += 1;
                return;
            }
        }
        if raw.title.trim().is_empty() && raw.description.trim().is_empty() && raw.body.trim().is_empty()
        {
            report.empty_text_records += 1;
        }
        report.accepted += 1;
        items.push(NewsItem {
            date,
            section: canonical_section(&raw.section),
            title: raw.title,
            description: raw.description,
            body: raw.body,
        });
    };

    if is_jsonl {
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawArticle = serde_json::from_str(line)
                .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
            push(raw, &mut report);
        }
    } else {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(false)
            .from_reader(text.as_bytes());
        for (i, rec) in rdr.deserialize::<RawArticle>().enumerate() {
            let raw = rec.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            push(raw, &mut report);
        }
    }

    if items.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no valid news records in {path} ({} raw rows)",
            report.raw_records
        )));
    }
    items.sort_by(|a, b| a.date.cmp(&b.date));
    Ok((items, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandDay {
    pub date: NaiveDate,
    /// Exactly [`SLOTS_PER_DAY`] values, slot s covering [s*30, (s+1)*30) minutes.
    pub slots: Vec<f64>,
    /// True when the day needed interpolation or duplicate averaging.
    pub repaired: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    /// Strictly increasing by date.
    pub days: Vec<DemandDay>,
    pub warnings: Vec<String>,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let t = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.with_timezone(&Utc).naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
            return Some(dt);
        }
    }
    None
}

/// Linear interpolation of missing slots in place; boundary gaps copy the
/// nearest present value. At least one slot must be present.
fn fill_missing_slots(slots: &mut [Option<f64>]) {
    let n = slots.len();
    let mut i = 0;
    while i < n {
        if slots[i].is_some() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && slots[i].is_none() {
            i += 1;
        }
        let left = run_start.checked_sub(1).and_then(|j| slots[j]);
        let right = if i < n { slots[i] } else { None };
        match (left, right) {
            (Some(a), Some(b)) => {
                let span = (i - run_start + 1) as f64;
                for (k, slot) in slots[run_start..i].iter_mut().enumerate() {
                    *slot = Some(a + (b - a) * (k + 1) as f64 / span);
                }
            }
            (Some(a), None) => {
                for slot in slots[run_start..i].iter_mut() {
                    *slot = Some(a);
                }
            }
            (None, Some(b)) => {
                for slot in slots[run_start..i].iter_mut() {
                    *slot = Some(b);
                }
            }
            (None, None) => unreachable!("caller guarantees at least one present slot"),
        }
    }
}

/// Reads a half-hourly demand table (`timestamp,mw` with header) and
/// normalises it into whole days of 48 slots.
///
/// Duplicate readings for a slot are averaged with a warning; days missing up
/// to two slots are repaired by linear interpolation and flagged; days with
/// fewer than 46 readings are dropped with a warning. Negative or non-finite
/// demand and day-level backwards jumps in the file are errors.
pub fn ingest_demand(path: &str) -> Result<DemandSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());

    let mut per_day: BTreeMap<NaiveDate, Vec<Vec<f64>>> = BTreeMap::new();
    let mut prev_date: Option<(NaiveDate, String)> = None;
    for (i, rec) in rdr.records().enumerate() {
        let lineno = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let ts_str = rec.get(0).unwrap_or("").to_string();
        let ts = parse_timestamp(&ts_str)
            .ok_or_else(|| Error::parse(path, lineno, format!("bad timestamp {ts_str:?}")))?;
        let mw: f64 = rec
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("bad demand value: {e}")))?;
        if !mw.is_finite() || mw < 0.0 {
            return Err(Error::InvalidInput(format!(
                "invalid demand {mw} at {ts} in {path}"
            )));
        }
        let minute = chrono::Timelike::minute(&ts);
        if minute != 0 && minute != 30 {
            return Err(Error::parse(
                path,
                lineno,
                format!("timestamp {ts} is not on a half-hour boundary"),
            ));
        }
        let date = ts.date();
        if let Some((pd, pts)) = &prev_date {
            if date < *pd {
                return Err(Error::InvalidInput(format!(
                    "non-monotonic demand file: {ts} after {pts} in {path}"
                )));
            }
        }
        prev_date = Some((date, ts.to_string()));
        let slot = (chrono::Timelike::hour(&ts) * 2 + minute / 30) as usize;
        per_day
            .entry(date)
            .or_insert_with(|| vec![Vec::new(); SLOTS_PER_DAY])[slot]
            .push(mw);
    }

    let mut series = DemandSeries::default();
    for (date, buckets) in per_day {
        let present = buckets.iter().filter(|b| !b.is_empty()).count();
        if present < SLOTS_PER_DAY - 2 {
            series
                .warnings
                .push(format!("dropped {date}: only {present} of 48 slots present"));
            continue;
        }
        let mut repaired = false;
        let mut slots: Vec<Option<f64>> = Vec::with_capacity(SLOTS_PER_DAY);
        for (s, bucket) in buckets.iter().enumerate() {
            match bucket.len() {
                0 => slots.push(None),
                1 => slots.push(Some(bucket[0])),
                k => {
                    repaired = true;
                    series.warnings.push(format!(
                        "averaged {k} duplicate readings at {date} slot {s}"
                    ));
                    slots.push(Some(bucket.iter().sum::<f64>() / k as f64));
                }
            }
        }
        if present < SLOTS_PER_DAY {
            repaired = true;
            series.warnings.push(format!(
                "interpolated {} missing slots on {date}",
                SLOTS_PER_DAY - present
            ));
            fill_missing_slots(&mut slots);
        }
        series.days.push(DemandDay {
            date,
            slots: slots.into_iter().map(|s| s.expect("filled")).collect(),
            repaired,
        });
    }

    if series.days.is_empty() {
        return Err(Error::InvalidInput(format!("no usable demand days in {path}")));
    }
    Ok(series)
}

/// Reads a daily temperature table (`date,temp_c` with header).
pub fn ingest_temperature(path: &str) -> Result<BTreeMap<NaiveDate, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let lineno = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or("").trim(), "%Y-%m-%d")
            .map_err(|e| Error::parse(path, lineno, format!("bad date: {e}")))?;
        let temp: f64 = rec
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("bad temperature: {e}")))?;
        if !temp.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite temperature on {date}")));
        }
        if out.insert(date, temp).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate temperature entry for {date} in {path}"
            )));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no temperature rows in {path}")));
    }
    Ok(out)
}

/// Reads a holiday list: one ISO date per line, `#` comments allowed.
pub fn ingest_holidays(path: &str) -> Result<BTreeSet<NaiveDate>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let date = NaiveDate::parse_from_str(t, "%Y-%m-%d")
            .map_err(|e| Error::parse(path, i + 1, format!("bad holiday date: {e}")))?;
        out.insert(date);
    }
    Ok(out)
}

/// Meteorological season of a date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub fn of(date: NaiveDate) -> Self {
        match date.month() {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    pub fn label(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
        }
    }
}

/// Calendar context shared by the feature builder and the evaluators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn new(holidays: BTreeSet<NaiveDate>) -> Self {
        Calendar { holidays }
    }

    /// Day of week with Monday = 0 .. Sunday = 6.
    pub fn day_of_week(date: NaiveDate) -> u32 {
        date.weekday().num_days_from_monday()
    }

    pub fn day_of_year(date: NaiveDate) -> u32 {
        date.ordinal()
    }

    pub fn is_weekend(date: NaiveDate) -> bool {
        Self::day_of_week(date) >= 5
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.contains(&date)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedDay {
    pub date: NaiveDate,
    pub demand: Vec<f64>,
    pub demand_repaired: bool,
    pub temperature_c: f64,
    pub articles: Vec<NewsItem>,
}

/// Daily-aligned join of demand, temperature, calendar and articles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedDataset {
    /// Strictly increasing by date.
    pub days: Vec<AlignedDay>,
    pub calendar: Calendar,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AlignReport {
    pub aligned_days: usize,
    pub dropped_missing_temperature: Vec<NaiveDate>,
    pub missing_demand_days: Vec<NaiveDate>,
    pub zero_article_days: usize,
    /// Inclusive date ranges inside the window that produced no aligned day.
    pub gaps: Vec<(NaiveDate, NaiveDate)>,
}

/// Joins the ingested pieces on the daily index over `window` (inclusive).
///
/// Days without demand are reported as gaps; days without temperature are
/// dropped by name; days without articles are kept with an empty list so the
/// feature stage can emit explicit missing indicators.
pub fn align(
    corpus: &[NewsItem],
    demand: &DemandSeries,
    temperature: &BTreeMap<NaiveDate, f64>,
    holidays: &BTreeSet<NaiveDate>,
    window: (NaiveDate, NaiveDate),
) -> Result<(AlignedDataset, AlignReport)> {
    let (start, end) = window;
    if end < start {
        return Err(Error::InvalidInput(format!(
            "alignment window end {end} before start {start}"
        )));
    }
    let mut articles_by_date: BTreeMap<NaiveDate, Vec<NewsItem>> = BTreeMap::new();
    for item in corpus {
        articles_by_date.entry(item.date).or_default().push(item.clone());
    }
    let demand_by_date: BTreeMap<NaiveDate, &DemandDay> =
        demand.days.iter().map(|d| (d.date, d)).collect();

    let mut report = AlignReport::default();
    let mut days = Vec::new();
    let mut cursor = start;
    while cursor <= end {
        match (demand_by_date.get(&cursor), temperature.get(&cursor)) {
            (Some(dd), Some(&temp)) => {
                let articles = articles_by_date.remove(&cursor).unwrap_or_default();
                if articles.is_empty() {
                    report.zero_article_days += 1;
                }
                days.push(AlignedDay {
                    date: cursor,
                    demand: dd.slots.clone(),
                    demand_repaired: dd.repaired,
                    temperature_c: temp,
                    articles,
                });
            }
            (None, _) => report.missing_demand_days.push(cursor),
            (_, None) => report.dropped_missing_temperature.push(cursor),
        }
        cursor = cursor.succ_opt().expect("date overflow");
    }

    if days.is_empty() {
        return Err(Error::InvalidInput(
            "alignment produced no days: demand/temperature/window do not overlap".into(),
        ));
    }
    report.aligned_days = days.len();

    // Explicit gap list over the window.
    let aligned: BTreeSet<NaiveDate> = days.iter().map(|d| d.date).collect();
    let mut gap_start: Option<NaiveDate> = None;
    let mut cursor = start;
    while cursor <= end {
        let missing = !aligned.contains(&cursor);
        match (missing, gap_start) {
            (true, None) => gap_start = Some(cursor),
            (false, Some(gs)) => {
                report.gaps.push((gs, cursor.pred_opt().expect("date underflow")));
                gap_start = None;
            }
            _ => {}
        }
        cursor = cursor.succ_opt().expect("date overflow");
    }
    if let Some(gs) = gap_start {
        report.gaps.push((gs, end));
    }

    Ok((
        AlignedDataset {
            days,
            calendar: Calendar::new(holidays.clone()),
        },
        report,
    ))
}

impl AlignedDataset {
    pub fn save(&self, path: &str) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Numerical(format!("serialize aligned dataset: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn date_index(&self) -> BTreeMap<NaiveDate, usize> {
        self.days.iter().enumerate().map(|(i, d)| (d.date, i)).collect()
    }

    /// Mean of the 48 half-hourly values per day.
    pub fn daily_mean_demand(&self) -> Vec<f64> {
        self.days
            .iter()
            .map(|d| d.demand.iter().sum::<f64>() / d.demand.len() as f64)
            .collect()
    }
}
