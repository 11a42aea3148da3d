//! Synthetic aligned datasets with planted text-to-demand effects.
//!
//! The generator writes the same file formats the ingest stage reads, so the
//! whole pipeline can run against a corpus whose causal structure is known:
//! on event days the articles carry designated keywords, and demand shifts
//! by a configured amount `effect_lag_days` later.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AlignedDataset, AlignedDay, Calendar, NewsItem, SECTIONS, SLOTS_PER_DAY};
use crate::stats::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub start: NaiveDate,
    pub n_days: usize,
    pub base_load_mw: f64,
    pub weekly_amplitude_mw: f64,
    pub annual_amplitude_mw: f64,
    /// Demand gained per degree below the reference temperature.
    pub temperature_sensitivity_mw_per_c: f64,
    pub reference_temperature_c: f64,
    pub mean_temperature_c: f64,
    pub temperature_swing_c: f64,
    pub temperature_noise_std_c: f64,
    /// Keywords whose appearance forecasts a demand shift.
    pub event_keywords: Vec<String>,
    /// Per-day probability of an event.
    pub event_rate: f64,
    pub event_effect_mw: f64,
    /// Days between the event's articles and the demand shift; must be >= 1
    /// so text precedes demand.
    pub effect_lag_days: usize,
    /// Probability that a non-event article mentions one event keyword.
    pub keyword_background_rate: f64,
    pub noise_std_mw: f64,
    pub background_vocabulary: Vec<String>,
    pub articles_per_day: usize,
    pub tokens_per_sentence: usize,
    pub body_sentences: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            start: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            n_days: 365 * 4 + 1,
            base_load_mw: 30000.0,
            weekly_amplitude_mw: 1200.0,
            annual_amplitude_mw: 3500.0,
            temperature_sensitivity_mw_per_c: 150.0,
            reference_temperature_c: 15.0,
            mean_temperature_c: 11.0,
            temperature_swing_c: 7.0,
            temperature_noise_std_c: 1.5,
            event_keywords: vec!["blackout".into(), "stormfront".into()],
            event_rate: 0.08,
            event_effect_mw: -500.0,
            effect_lag_days: 2,
            keyword_background_rate: 0.0,
            noise_std_mw: 150.0,
            background_vocabulary: default_vocabulary(),
            articles_per_day: 4,
            tokens_per_sentence: 9,
            body_sentences: 6,
            seed: 1,
        }
    }
}

fn default_vocabulary() -> Vec<String> {
    [
        "market", "price", "energy", "minister", "vote", "election", "league", "match",
        "weather", "report", "economy", "growth", "company", "share", "profit", "council",
        "school", "health", "service", "travel", "airport", "train", "festival", "concert",
        "museum", "river", "coast", "harvest", "farm", "factory", "export", "import",
        "budget", "inquiry", "court", "verdict", "police", "charity", "research", "science",
        "climate", "forest", "wildlife", "housing", "street", "bridge", "tunnel", "project",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 {
            return Err(Error::Config("need at least one day".into()));
        }
        if self.effect_lag_days == 0 {
            return Err(Error::Config(
                "effect lag must be at least 1 day: articles precede demand".into(),
            ));
        }
        for (name, v) in [
            ("weekly amplitude", self.weekly_amplitude_mw),
            ("annual amplitude", self.annual_amplitude_mw),
            ("noise std", self.noise_std_mw),
            ("temperature noise std", self.temperature_noise_std_c),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, r) in [
            ("event rate", self.event_rate),
            ("keyword background rate", self.keyword_background_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} outside [0, 1]")));
            }
        }
        if self.background_vocabulary.is_empty() {
            return Err(Error::Config("background vocabulary is empty".into()));
        }
        if self.articles_per_day == 0 {
            return Err(Error::Config("need at least one article per day".into()));
        }
        Ok(())
    }

    pub fn end(&self) -> NaiveDate {
        self.start + chrono::Duration::days(self.n_days as i64 - 1)
    }
}

/// Everything needed to recompute the noiseless demand and check any
/// downstream attribution against the planted truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub event_days: Vec<NaiveDate>,
    /// Days whose demand carries the planted shift (event day + lag).
    pub affected_days: Vec<NaiveDate>,
    pub causal_keywords: Vec<String>,
    pub true_effect_mw: f64,
    /// Within-day template, mean exactly normalized to 1.
    pub slot_shape: Vec<f64>,
}

impl GroundTruth {
    pub fn save(&self, path: &str) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numerical(format!("serialize ground truth: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    /// Noiseless half-hourly demand for one day given its temperature.
    pub fn noiseless_demand(&self, date: NaiveDate, temperature_c: f64) -> Vec<f64> {
        let affected = self.affected_days.binary_search(&date).is_ok();
        let level = daily_level(&self.config, date, temperature_c, affected);
        self.slot_shape.iter().map(|s| level * s).collect()
    }
}

/// Two-peak within-day template with mean exactly 1.
pub fn slot_shape() -> Vec<f64> {
    let raw: Vec<f64> = (0..SLOTS_PER_DAY)
        .map(|s| {
            let x = s as f64;
            1.0 + 0.35 * (-(x - 17.0).powi(2) / 20.0).exp()
                + 0.5 * (-(x - 36.0).powi(2) / 14.0).exp()
                - 0.3 * (-(x - 5.0).powi(2) / 26.0).exp()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / SLOTS_PER_DAY as f64;
    raw.iter().map(|v| v / mean).collect()
}

/// Deterministic daily demand level before noise.
fn daily_level(config: &SynthConfig, date: NaiveDate, temperature_c: f64, affected: bool) -> f64 {
    let tau = std::f64::consts::TAU;
    let dow = Calendar::day_of_week(date) as f64;
    let doy = date.ordinal() as f64;
    let weekly = config.weekly_amplitude_mw * (tau * dow / 7.0).sin();
    let annual = config.annual_amplitude_mw * (tau * doy / 365.25).sin();
    let thermal =
        config.temperature_sensitivity_mw_per_c * (config.reference_temperature_c - temperature_c);
    let event = if affected { config.event_effect_mw } else { 0.0 };
    config.base_load_mw + weekly + annual + thermal + event
}

fn deterministic_temperature(config: &SynthConfig, date: NaiveDate) -> f64 {
    let tau = std::f64::consts::TAU;
    // Coldest near mid-January, warmest mid-July.
    let doy = date.ordinal() as f64;
    config.mean_temperature_c - config.temperature_swing_c * (tau * (doy - 15.0) / 365.25).cos()
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[String], n_tokens: usize) -> String {
    let mut words = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        // Mildly skewed draw so early vocabulary words dominate.
        let u: f64 = rng.gen_range(0.0..1.0);
        let idx = ((u * u) * vocab.len() as f64) as usize;
        words.push(vocab[idx.min(vocab.len() - 1)].clone());
    }
    let mut s = words.join(" ");
    s.push('.');
    s
}

/// Generates the aligned dataset and its ground truth.
pub fn generate(config: &SynthConfig) -> Result<(AlignedDataset, GroundTruth)> {
    config.validate()?;
    let shape = slot_shape();
    let mut event_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut text_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    let dates: Vec<NaiveDate> =
        (0..config.n_days).map(|i| config.start + chrono::Duration::days(i as i64)).collect();
    let event_days: Vec<NaiveDate> = dates
        .iter()
        .filter(|_| event_rng.gen_bool(config.event_rate))
        .copied()
        .collect();
    let event_set: BTreeSet<NaiveDate> = event_days.iter().copied().collect();
    let affected_days: Vec<NaiveDate> = event_days
        .iter()
        .map(|d| *d + chrono::Duration::days(config.effect_lag_days as i64))
        .filter(|d| *d <= config.end())
        .collect();
    let affected_set: BTreeSet<NaiveDate> = affected_days.iter().copied().collect();

    let holidays: BTreeSet<NaiveDate> = dates
        .iter()
        .filter(|d| (d.month() == 12 && d.day() == 25) || (d.month() == 1 && d.day() == 1))
        .copied()
        .collect();

    let mut days = Vec::with_capacity(config.n_days);
    for date in &dates {
        let temp_noise: f64 = StandardNormal.sample(&mut noise_rng);
        let temperature =
            deterministic_temperature(config, *date) + config.temperature_noise_std_c * temp_noise;
        let level = daily_level(config, *date, temperature, affected_set.contains(date));
        let demand: Vec<f64> = shape
            .iter()
            .map(|s| {
                let e: f64 = StandardNormal.sample(&mut noise_rng);
                level * s + config.noise_std_mw * e
            })
            .collect();

        let is_event = event_set.contains(date);
        let articles = (0..config.articles_per_day)
            .map(|_| {
                let section = SECTIONS[text_rng.gen_range(0..SECTIONS.len())].to_string();
                let mut title =
                    sentence(&mut text_rng, &config.background_vocabulary, config.tokens_per_sentence);
                let mut description =
                    sentence(&mut text_rng, &config.background_vocabulary, config.tokens_per_sentence);
                let mut body = (0..config.body_sentences)
                    .map(|_| {
                        sentence(&mut text_rng, &config.background_vocabulary, config.tokens_per_sentence)
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                if is_event {
                    let burst = config.event_keywords.join(" ");
                    title = format!("{burst} {title}");
                    description = format!("{burst} {description}");
                    body = format!("{burst} {burst} {body}");
                } else if !config.event_keywords.is_empty()
                    && config.keyword_background_rate > 0.0
                    && text_rng.gen_bool(config.keyword_background_rate)
                {
                    let k = &config.event_keywords
                        [text_rng.gen_range(0..config.event_keywords.len())];
                    body = format!("{k} {body}");
                }
                NewsItem { date: *date, section, title, description, body }
            })
            .collect();

        days.push(AlignedDay {
            date: *date,
            demand,
            demand_repaired: false,
            temperature_c: temperature,
            articles,
        });
    }

    let dataset = AlignedDataset { days, calendar: Calendar::new(holidays) };
    let truth = GroundTruth {
        config: config.clone(),
        event_days,
        affected_days,
        causal_keywords: config.event_keywords.clone(),
        true_effect_mw: config.event_effect_mw,
        slot_shape: shape,
    };
    Ok((dataset, truth))
}

/// File names produced by [`write_fixture`].
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const DEMAND_FILE: &str = "demand.csv";
pub const TEMPERATURE_FILE: &str = "temperature.csv";
pub const HOLIDAYS_FILE: &str = "holidays.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Dimension of the synthetic embedding table.
pub const EMBEDDING_DIM: usize = 16;

fn write_creating_parent(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(&parent.display().to_string(), e))?;
        }
    }
    fs::write(path, content).map_err(|e| Error::io(&path.display().to_string(), e))
}

/// One JSON article per line, the format the corpus ingester reads.
pub fn write_corpus(dataset: &AlignedDataset, path: &Path) -> Result<()> {
    let mut corpus = String::new();
    for day in &dataset.days {
        for article in &day.articles {
            let line = serde_json::to_string(article)
                .map_err(|e| Error::Numerical(format!("serialize article: {e}")))?;
            corpus.push_str(&line);
            corpus.push('\n');
        }
    }
    write_creating_parent(path, &corpus)
}

pub fn write_demand(dataset: &AlignedDataset, path: &Path) -> Result<()> {
    let mut demand = String::from("timestamp,demand_mw\n");
    for day in &dataset.days {
        for (s, mw) in day.demand.iter().enumerate() {
            let _ = writeln!(
                demand,
                "{}T{:02}:{:02}:00,{}",
                day.date,
                s / 2,
                (s % 2) * 30,
                mw
            );
        }
    }
    write_creating_parent(path, &demand)
}

pub fn write_temperature(dataset: &AlignedDataset, path: &Path) -> Result<()> {
    let mut temperature = String::from("date,temp_c\n");
    for day in &dataset.days {
        let _ = writeln!(temperature, "{},{}", day.date, day.temperature_c);
    }
    write_creating_parent(path, &temperature)
}

pub fn write_holidays(dataset: &AlignedDataset, path: &Path) -> Result<()> {
    let mut holidays = String::from("# synthetic holiday calendar\n");
    for d in &dataset.calendar.holidays {
        let _ = writeln!(holidays, "{d}");
    }
    write_creating_parent(path, &holidays)
}

/// Random vectors for every vocabulary word and event keyword, in the text
/// format the embedding loader reads. Carries no semantic structure; it
/// exists so pipelines exercising embedding features can run on fixtures.
pub fn write_embeddings(config: &SynthConfig, path: &Path) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3));
    let mut out = String::new();
    for word in config.background_vocabulary.iter().chain(config.event_keywords.iter()) {
        let _ = write!(out, "{word}");
        for _ in 0..EMBEDDING_DIM {
            let _ = write!(out, " {}", rng.gen_range(-1.0..1.0));
        }
        out.push('\n');
    }
    write_creating_parent(path, &out)
}

/// Writes the dataset in the formats the ingest stage reads, plus the
/// embedding table and the ground-truth record.
pub fn write_fixture(dataset: &AlignedDataset, truth: &GroundTruth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(&dir.display().to_string(), e))?;
    write_corpus(dataset, &dir.join(CORPUS_FILE))?;
    write_demand(dataset, &dir.join(DEMAND_FILE))?;
    write_temperature(dataset, &dir.join(TEMPERATURE_FILE))?;
    write_holidays(dataset, &dir.join(HOLIDAYS_FILE))?;
    write_embeddings(&truth.config, &dir.join(EMBEDDINGS_FILE))?;
    truth.save(&dir.join(GROUND_TRUTH_FILE).display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest;

    fn quiet_config() -> SynthConfig {
        SynthConfig {
            n_days: 120,
            noise_std_mw: 0.0,
            temperature_noise_std_c: 0.0,
            event_rate: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_matches_the_deterministic_formula() {
        let config = quiet_config();
        let (ds, truth) = generate(&config).unwrap();
        assert!(truth.event_days.is_empty());
        for day in &ds.days {
            let expected = truth.noiseless_demand(day.date, day.temperature_c);
            assert_eq!(day.demand, expected, "mismatch on {}", day.date);
        }
    }

    #[test]
    fn ground_truth_recomputes_noiseless_demand_under_noise() {
        let mut config = SynthConfig { n_days: 200, ..Default::default() };
        config.noise_std_mw = 200.0;
        let (ds, truth) = generate(&config).unwrap();
        // The residual demand minus the recomputed noiseless series is pure
        // N(0, noise^2) per slot.
        let mut all = Vec::new();
        for day in &ds.days {
            let clean = truth.noiseless_demand(day.date, day.temperature_c);
            for (d, c) in day.demand.iter().zip(&clean) {
                all.push(d - c);
            }
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        assert!(mean.abs() < 20.0, "residual mean {mean}");
        assert!((std - 200.0).abs() < 20.0, "residual std {std}");
    }

    #[test]
    fn planted_effect_shifts_affected_days() {
        let config = SynthConfig {
            n_days: 600,
            event_rate: 0.1,
            event_effect_mw: -500.0,
            noise_std_mw: 100.0,
            ..Default::default()
        };
        let (ds, truth) = generate(&config).unwrap();
        assert!(!truth.affected_days.is_empty());
        let affected: BTreeSet<NaiveDate> = truth.affected_days.iter().copied().collect();
        let mut gaps = Vec::new();
        for day in &ds.days {
            // Compare against the same formula with the event switched off.
            let unaffected_level = daily_level(&config, day.date, day.temperature_c, false);
            let daily_mean = day.demand.iter().sum::<f64>() / SLOTS_PER_DAY as f64;
            if affected.contains(&day.date) {
                gaps.push(daily_mean - unaffected_level);
            }
        }
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let tolerance = 4.0 * 100.0 / (gaps.len() as f64).sqrt();
        assert!(
            (mean_gap + 500.0).abs() < tolerance.max(40.0),
            "mean gap {mean_gap} over {} days",
            gaps.len()
        );
    }

    #[test]
    fn same_seed_reproduces_the_dataset() {
        let config = SynthConfig { n_days: 90, ..Default::default() };
        let (a, ta) = generate(&config).unwrap();
        let (b, tb) = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let other = SynthConfig { seed: 2, ..config };
        let (c, _) = generate(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn keywords_appear_only_on_event_days_without_background_rate() {
        let config = SynthConfig {
            n_days: 300,
            event_rate: 0.1,
            keyword_background_rate: 0.0,
            ..Default::default()
        };
        let (ds, truth) = generate(&config).unwrap();
        let events: BTreeSet<NaiveDate> = truth.event_days.iter().copied().collect();
        assert!(!events.is_empty());
        for day in &ds.days {
            let mentions = day.articles.iter().any(|a| {
                truth.causal_keywords.iter().any(|k| {
                    a.title.contains(k) || a.description.contains(k) || a.body.contains(k)
                })
            });
            assert_eq!(mentions, events.contains(&day.date), "day {}", day.date);
        }
    }

    #[test]
    fn slot_shape_is_normalized_and_two_peaked() {
        let shape = slot_shape();
        assert_eq!(shape.len(), SLOTS_PER_DAY);
        let mean = shape.iter().sum::<f64>() / SLOTS_PER_DAY as f64;
        assert!((mean - 1.0).abs() < 1e-12);
        let morning = shape[14..20].iter().cloned().fold(f64::MIN, f64::max);
        let evening = shape[33..40].iter().cloned().fold(f64::MIN, f64::max);
        let midday_min = shape[24..30].iter().cloned().fold(f64::MAX, f64::min);
        assert!(morning > midday_min && evening > midday_min);
        assert!(evening > morning);
    }

    #[test]
    fn fixture_round_trips_through_ingest() {
        let config = SynthConfig { n_days: 60, event_rate: 0.1, ..Default::default() };
        let (ds, truth) = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fixture(&ds, &truth, dir.path()).unwrap();

        let p = |n: &str| dir.path().join(n).display().to_string();
        let (corpus, _) = ingest::ingest_corpus(&p(CORPUS_FILE), None).unwrap();
        let demand = ingest::ingest_demand(&p(DEMAND_FILE)).unwrap();
        let temperature = ingest::ingest_temperature(&p(TEMPERATURE_FILE)).unwrap();
        let holidays = ingest::ingest_holidays(&p(HOLIDAYS_FILE)).unwrap();
        let (aligned, report) = ingest::align(
            &corpus,
            &demand,
            &temperature,
            &holidays,
            (config.start, config.end()),
        )
        .unwrap();
        assert_eq!(report.aligned_days, 60);
        assert_eq!(aligned, ds);
        let loaded = GroundTruth::load(&p(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(loaded, truth);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_lag = SynthConfig { effect_lag_days: 0, ..Default::default() };
        assert!(generate(&bad_lag).is_err());
        let bad_amp = SynthConfig { weekly_amplitude_mw: -1.0, ..Default::default() };
        assert!(generate(&bad_amp).is_err());
        let bad_rate = SynthConfig { event_rate: 1.5, ..Default::default() };
        assert!(generate(&bad_rate).is_err());
    }
}
