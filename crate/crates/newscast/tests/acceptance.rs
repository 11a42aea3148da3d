//! Full-system checks with pinned tolerances. Each test prints one
//! `ACCEPTANCE <n> <name>: PASS|FAIL (<secs> s)` line (visible with
//! `cargo test -- --nocapture`) before asserting, so a run can be scanned
//! at a glance. Oracle values are computed inline and independently of the
//! library code under test.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use newscast::evaluate::{
    daily_mse_losses, day_metrics, dm_test, period_metrics, score_days, DmOptions, ForecastDay,
};
use newscast::explain::{double_ml, DoubleMlConfig};
use newscast::features::{
    build_sentiment_block, build_vocabulary_from_dataset, build_wordfreq_block,
    sentiment_feature_names, FamilyKey, FeatureFamily, SentimentLexicon, TextType,
};
use newscast::forecast::{
    build_design, fit_extratrees, persistence_forecast, ExtraTreesConfig, FeatureSetSpec,
};
use newscast::pipeline::{self, PipelineConfig, Stage};
use newscast::select::{bilateral_select, granger_p, GrangerConfig};
use newscast::synth::{self, SynthConfig};
use newscast::textprep::Stopwords;
use newscast::topics::{fit_lda, LdaConfig};

/// Prints the verdict line, then asserts every check and the time budget.
fn conclude(n: usize, name: &str, start: Instant, budget: Option<f64>, checks: Vec<(String, bool)>) {
    let secs = start.elapsed().as_secs_f64();
    let mut pass = checks.iter().all(|(_, ok)| *ok);
    if let Some(b) = budget {
        pass &= secs < b;
    }
    println!(
        "ACCEPTANCE {n} {name}: {} ({secs:.1} s)",
        if pass { "PASS" } else { "FAIL" }
    );
    for (what, ok) in &checks {
        assert!(*ok, "criterion {n}: {what}");
    }
    if let Some(b) = budget {
        assert!(secs < b, "criterion {n}: runtime {secs:.1} s exceeded the {b:.0} s budget");
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn cumsum(increments: &[f64]) -> Vec<f64> {
    let mut level = 0.0;
    increments
        .iter()
        .map(|d| {
            level += d;
            level
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 1. Daily metrics against a brute-force oracle
// ---------------------------------------------------------------------------

#[test]
fn metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let truth: Vec<f64> = (0..48).map(|_| rng.gen_range(50.0..5000.0)).collect();
        let forecast: Vec<f64> = (0..48).map(|_| rng.gen_range(50.0..5000.0)).collect();
        let m = day_metrics(&truth, &forecast).expect("positive vectors score");

        let h = truth.len() as f64;
        let mut sq = 0.0;
        let mut abs = 0.0;
        let mut pct = 0.0;
        for (y, f) in truth.iter().zip(&forecast) {
            sq += (y - f) * (y - f);
            abs += (y - f).abs();
            pct += (y - f).abs() / ((y + f).abs() / 2.0);
        }
        let rmse = (sq / h).sqrt();
        let mae = abs / h;
        let smape = 100.0 / h * pct;
        worst = worst
            .max((m.rmse - rmse).abs())
            .max((m.mae - mae).abs())
            .max((m.smape - smape).abs());
    }
    conclude(
        1,
        "metric oracle equivalence",
        start,
        Some(5.0),
        vec![(format!("worst deviation {worst:.2e} exceeds 1e-9"), worst <= 1e-9)],
    );
}

// ---------------------------------------------------------------------------
// 2. Causality-test calibration and power
// ---------------------------------------------------------------------------

/// AR(1) increments integrated to a level series, so the internal first
/// difference recovers a stationary, invertible process.
fn integrated_ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let mut increments = Vec::with_capacity(n);
    let mut prev = 0.0;
    for _ in 0..n {
        prev = phi * prev + normal(rng);
        increments.push(prev);
    }
    cumsum(&increments)
}

/// Driven pair: dy depends on its own lag and on dx three steps back.
fn coupled_pair(rng: &mut ChaCha8Rng, n: usize, coef: f64) -> (Vec<f64>, Vec<f64>) {
    let mut dx = Vec::with_capacity(n);
    let mut prev = 0.0;
    for _ in 0..n {
        prev = 0.3 * prev + normal(rng);
        dx.push(prev);
    }
    let mut dy = Vec::with_capacity(n);
    for t in 0..n {
        let own = if t >= 1 { 0.3 * dy[t - 1] } else { 0.0 };
        let cross = if t >= 3 { coef * dx[t - 3] } else { 0.0 };
        dy.push(own + cross + normal(rng));
    }
    (cumsum(&dx), cumsum(&dy))
}

#[test]
fn causality_test_calibration_and_power() {
    let start = Instant::now();
    let n = 1001; // 1000 observations after differencing
    let lag = 30;

    let mut rng = ChaCha8Rng::seed_from_u64(2005);
    let mut null_rejections = 0;
    for _ in 0..200 {
        let x = integrated_ar1(&mut rng, n, 0.3);
        let y = integrated_ar1(&mut rng, n, 0.3);
        if granger_p(&x, &y, lag).expect("test runs") < 0.05 {
            null_rejections += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2003);
    let mut power_hits = 0;
    for _ in 0..50 {
        let (x, y) = coupled_pair(&mut rng, n, 0.5);
        if granger_p(&x, &y, lag).expect("test runs") < 0.05 {
            power_hits += 1;
        }
    }

    conclude(
        2,
        "causality test calibration",
        start,
        Some(120.0),
        vec![
            (
                format!(
                    "null rejection {null_rejections}/200 outside the 2%-8% band (expected ~5%)"
                ),
                (4..=16).contains(&null_rejections),
            ),
            (
                format!("power {power_hits}/50 below 90% on coupling 0.5 at lag 3"),
                power_hits >= 45,
            ),
        ],
    );
}

// ---------------------------------------------------------------------------
// 3. Bilateral filter keeps causes and drops echoes
// ---------------------------------------------------------------------------

#[test]
fn bilateral_filter_direction() {
    let start = Instant::now();
    let n = 500;
    let config = GrangerConfig { lag: 5, alpha: 0.05 };
    let mut rng = ChaCha8Rng::seed_from_u64(3003);

    let mut cause_kept = 0;
    let mut echo_dropped = 0;
    for _ in 0..50 {
        let (x, y_levels) = coupled_pair(&mut rng, n, 0.6);
        // The echo follows the target with a one-step lag.
        let dy: Vec<f64> = {
            let mut prev = 0.0;
            y_levels
                .iter()
                .map(|v| {
                    let d = v - prev;
                    prev = *v;
                    d
                })
                .collect()
        };
        let mut dz = Vec::with_capacity(n);
        for t in 0..n {
            let own = if t >= 1 { 0.3 * dz[t - 1] } else { 0.0 };
            let follow = if t >= 1 { 0.6 * dy[t - 1] } else { 0.0 };
            dz.push(own + follow + normal(&mut rng));
        }
        let z = cumsum(&dz);

        let outcomes = bilateral_select(
            &[("planted_cause".to_string(), x), ("demand_echo".to_string(), z)],
            &y_levels,
            &config,
        )
        .expect("screening runs");
        if outcomes[0].selected {
            cause_kept += 1;
        }
        if !outcomes[1].selected {
            echo_dropped += 1;
        }
    }

    conclude(
        3,
        "bilateral filter direction",
        start,
        Some(120.0),
        vec![
            (
                format!("planted cause kept {cause_kept}/50, below the 90% floor"),
                cause_kept >= 45,
            ),
            (
                format!("demand echo dropped {echo_dropped}/50, below the 90% floor"),
                echo_dropped >= 45,
            ),
        ],
    );
}

// ---------------------------------------------------------------------------
// 4. Topic model recovers two disjoint word pools
// ---------------------------------------------------------------------------

#[test]
fn topic_model_recovers_two_pools() {
    let start = Instant::now();
    let vocab: Vec<String> = (0..100).map(|i| format!("w{i:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let docs: Vec<Vec<String>> = (0..500)
        .map(|i| {
            let pool = &vocab[(i % 2) * 50..(i % 2) * 50 + 50];
            (0..40).map(|_| pool[rng.gen_range(0..50)].clone()).collect()
        })
        .collect();

    let config = LdaConfig::new(2).with_seed(44);
    let fit = fit_lda(&docs, &config).expect("sampler runs");

    let mut phi_worst = 0f64;
    for row in &fit.model.phi {
        phi_worst = phi_worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    let mut theta_worst = 0f64;
    for row in &fit.theta {
        theta_worst = theta_worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }

    // Purity under the better of the two topic-to-pool assignments.
    let dominant: Vec<usize> = fit
        .theta
        .iter()
        .map(|row| if row[0] >= row[1] { 0 } else { 1 })
        .collect();
    let direct = dominant
        .iter()
        .enumerate()
        .filter(|(i, t)| **t == i % 2)
        .count();
    let purity = direct.max(docs.len() - direct) as f64 / docs.len() as f64;

    conclude(
        4,
        "topic recovery on two pools",
        start,
        Some(60.0),
        vec![
            (format!("purity {purity:.3} below 0.9"), purity >= 0.9),
            (
                format!("topic-word rows sum away from 1 by {phi_worst:.2e}"),
                phi_worst <= 1e-9,
            ),
            (
                format!("document-topic rows sum away from 1 by {theta_worst:.2e}"),
                theta_worst <= 1e-9,
            ),
        ],
    );
}

// ---------------------------------------------------------------------------
// 5. Forecasting lift on the planted fixture
// ---------------------------------------------------------------------------

#[test]
fn forecasting_lift_on_planted_fixture() {
    let start = Instant::now();
    let config = SynthConfig {
        seed: 11,
        event_rate: 0.22,
        noise_std_mw: 100.0,
        ..SynthConfig::default()
    };
    let (aligned, truth) = synth::generate(&config).expect("fixture generates");
    let split = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let boundary = split - chrono::Duration::days(1);

    let stopwords = Stopwords::default_english();
    let vocab = build_vocabulary_from_dataset(&aligned, TextType::Title, &stopwords, boundary, 20)
        .expect("title vocabulary");
    let wf = build_wordfreq_block(&aligned, TextType::Title, &stopwords, &vocab, true);

    let bench_spec = FeatureSetSpec::benchmark(true, true, true);
    let bench_design = build_design(&aligned, &[], &bench_spec, None).expect("benchmark design");
    let (bench_train, bench_test) = bench_design.split_at_date(boundary);

    let key = FamilyKey::new(FeatureFamily::WordFreq, TextType::Title);
    let planted: BTreeSet<String> = truth
        .causal_keywords
        .iter()
        .map(|k| format!("{}{k}", key.prefix()))
        .collect();
    let text_spec = FeatureSetSpec::with_families(vec![key]);
    let text_design =
        build_design(&aligned, std::slice::from_ref(&wf), &text_spec, Some(&planted))
            .expect("text design");
    let (text_train, text_test) = text_design.split_at_date(boundary);
    assert_eq!(
        bench_test.target_dates, text_test.target_dates,
        "designs must cover the same test days"
    );
    assert_eq!(
        text_design.feature_names.len(),
        bench_design.feature_names.len() + truth.causal_keywords.len(),
        "text design should add exactly the planted columns"
    );

    let tree_config = |p: usize, seed: u64| ExtraTreesConfig {
        n_trees: 200,
        k: (p / 3).max(1),
        min_split: 2,
        seed,
    };
    let fit = |train: &newscast::forecast::DesignMatrix, seed: u64| {
        fit_extratrees(
            &train.x,
            &train.y,
            &train.feature_names,
            &tree_config(train.x.ncols(), seed),
        )
        .expect("ensemble fits")
    };
    let to_days = |test: &newscast::forecast::DesignMatrix, pred: &DMatrix<f64>| -> Vec<ForecastDay> {
        (0..test.n_rows())
            .map(|i| ForecastDay {
                target_date: test.target_dates[i],
                truth: (0..test.y.ncols()).map(|j| test.y[(i, j)]).collect(),
                forecast: (0..pred.ncols()).map(|j| pred[(i, j)]).collect(),
            })
            .collect()
    };

    let bench_model = fit(&bench_train, 51);
    let bench_days = to_days(&bench_test, &bench_model.predict(&bench_test.x).expect("predicts"));
    let text_model = fit(&text_train, 52);
    let text_days = to_days(&text_test, &text_model.predict(&text_test.x).expect("predicts"));
    let persist_days: Vec<ForecastDay> = bench_days
        .iter()
        .map(|d| ForecastDay {
            target_date: d.target_date,
            truth: d.truth.clone(),
            forecast: persistence_forecast(&aligned, d.target_date)
                .expect("day-7 history exists for every test day"),
        })
        .collect();

    let rmse = |days: &[ForecastDay]| {
        period_metrics(&score_days(days).expect("scores")).expect("aggregates").rmse
    };
    let rmse_persist = rmse(&persist_days);
    let rmse_bench = rmse(&bench_days);
    let rmse_text = rmse(&text_days);

    let dm = dm_test(
        "text",
        "benchmark",
        &daily_mse_losses(&text_days),
        &daily_mse_losses(&bench_days),
        &DmOptions::default(),
    )
    .expect("comparison runs");

    println!(
        "  detail: persistence {rmse_persist:.1}, benchmark {rmse_bench:.1}, text {rmse_text:.1}, p {:.2e}",
        dm.p_value
    );
    conclude(
        5,
        "forecasting lift",
        start,
        Some(300.0),
        vec![
            (
                format!(
                    "benchmark rmse {rmse_bench:.1} not 20% under persistence {rmse_persist:.1}"
                ),
                rmse_bench <= 0.80 * rmse_persist,
            ),
            (
                format!(
                    "text rmse {rmse_text:.1} not 5% under benchmark {rmse_bench:.1}"
                ),
                rmse_text <= 0.95 * rmse_bench,
            ),
            (
                format!("one-sided comparison p {:.2e} not below 0.05", dm.p_value),
                dm.p_value < 0.05,
            ),
        ],
    );
}

// ---------------------------------------------------------------------------
// 6. Treatment-effect recovery and null calibration
// ---------------------------------------------------------------------------

fn dml_trial(seed: u64, tau: f64) -> newscast::explain::DoubleMlResult {
    let n = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 5, |_, _| rng.gen_range(-1.0..1.0));
    let treatment: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let outcome: Vec<f64> = (0..n)
        .map(|i| {
            let g = (std::f64::consts::PI * x[(i, 0)]).sin() + x[(i, 1)].powi(2)
                + x[(i, 2)] * x[(i, 3)];
            g + tau * treatment[i] + 0.5 * normal(&mut rng)
        })
        .collect();
    let config = DoubleMlConfig {
        nuisance: ExtraTreesConfig { n_trees: 60, k: 3, min_split: 10, seed: 0 },
        cross_fit: true,
        seed: seed.wrapping_mul(2654435761),
    };
    double_ml(&x, &treatment, &outcome, &config).expect("estimator runs")
}

#[test]
fn treatment_effect_recovery_and_null() {
    let start = Instant::now();

    let mut taus: Vec<f64> = (0..50).map(|t| dml_trial(60_000 + t, 0.5).tau).collect();
    taus.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let median = (taus[24] + taus[25]) / 2.0;

    let false_positives = (0..200)
        .filter(|t| dml_trial(70_000 + t, 0.0).p_value < 0.05)
        .count();

    conclude(
        6,
        "treatment effect recovery",
        start,
        Some(180.0),
        vec![
            (
                format!("median estimate {median:.3} outside [0.35, 0.65] for a planted 0.5"),
                (0.35..=0.65).contains(&median),
            ),
            (
                format!(
                    "null false positives {false_positives}/200 outside the 2%-8% band"
                ),
                (4..=16).contains(&false_positives),
            ),
        ],
    );
}

// ---------------------------------------------------------------------------
// 7. Bit-identical reruns of the whole pipeline
// ---------------------------------------------------------------------------

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries {
            let path = entry.expect("readable entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

fn full_pipeline_config(root: &Path) -> PipelineConfig {
    let root = root.display().to_string();
    let text = format!(
        r#"
seed = 23
output = "{root}/out"

[paths]
corpus = "{root}/data/corpus.jsonl"
demand = "{root}/data/demand.csv"
temperature = "{root}/data/temperature.csv"
holidays = "{root}/data/holidays.txt"
embeddings = "{root}/data/embeddings.txt"

[window]
start = "2017-01-01"
end = "2018-06-30"
split = "2018-01-01"

[features]
count = ["title"]
word_freq = ["title", "description", "body"]
sentiment = ["body"]
topics = ["body"]
embeddings = ["body"]

[word_freq]
title_threshold = 10
description_threshold = 10
body_threshold = 10

[topics]
candidates = [2]
sweeps = 80
burn_in = 40

[grid]
n_trees = [40]
k = [12]
min_split = [4]
folds = 3

[explain]
pearson_max_features = 3
lime_samples = 500
nuisance_trees = 20
nuisance_min_split = 12
"#
    );
    PipelineConfig::from_str(&text, "acceptance").expect("config parses")
}

#[test]
fn pipeline_reruns_are_bit_identical() {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let config = full_pipeline_config(dir.path());

    let run_all = || {
        for stage in Stage::ALL {
            pipeline::run(stage, &config)
                .unwrap_or_else(|e| panic!("stage {} failed: {e}", stage.name()));
        }
        snapshot(dir.path())
    };

    let first = run_all();
    fs::remove_dir_all(dir.path().join("out")).expect("wipe outputs");
    fs::remove_dir_all(dir.path().join("data")).expect("wipe inputs");
    let second = run_all();

    let first_paths: Vec<_> = first.keys().cloned().collect();
    let second_paths: Vec<_> = second.keys().cloned().collect();
    let same_paths = first_paths == second_paths;
    let mut diverging = Vec::new();
    if same_paths {
        for (path, bytes) in &first {
            if second.get(path) != Some(bytes) {
                diverging.push(path.display().to_string());
            }
        }
    }

    conclude(
        7,
        "bit-identical reruns",
        start,
        None,
        vec![
            (
                format!(
                    "file sets differ between runs ({} vs {} files)",
                    first_paths.len(),
                    second_paths.len()
                ),
                same_paths,
            ),
            (
                format!("artifacts differ across identical runs: {}", diverging.join(", ")),
                diverging.is_empty(),
            ),
            ("no files produced".to_string(), !first.is_empty()),
        ],
    );
}

// ---------------------------------------------------------------------------
// 8. Sentiment feature contract
// ---------------------------------------------------------------------------

#[test]
fn sentiment_feature_contract() {
    let start = Instant::now();
    let config = SynthConfig { n_days: 200, seed: 8, ..SynthConfig::default() };
    let (aligned, _) = synth::generate(&config).expect("fixture generates");
    let lexicon = SentimentLexicon::default_english();

    let mut checks = vec![(
        format!("expected 18 named features, got {}", sentiment_feature_names().len()),
        sentiment_feature_names().len() == 18,
    )];
    for tt in TextType::ALL {
        let block = build_sentiment_block(&aligned, tt, &lexicon);
        let names_ok = block.names == sentiment_feature_names();
        let mut scored_days = 0;
        let mut worst = 0f64;
        for (row, missing) in block.values.iter().zip(&block.missing) {
            if *missing {
                continue;
            }
            scored_days += 1;
            let pol: f64 = row[0..5].iter().sum();
            let subj: f64 = row[5..10].iter().sum();
            worst = worst.max((pol - 1.0).abs()).max((subj - 1.0).abs());
        }
        checks.push((
            format!("{} block names diverge from the 18-feature contract", tt.code()),
            names_ok,
        ));
        checks.push((
            format!("{} histograms sum away from 1 by {worst:.2e}", tt.code()),
            worst <= 1e-9,
        ));
        checks.push((
            format!("{} block scored no days", tt.code()),
            scored_days == aligned.days.len(),
        ));
    }

    conclude(8, "sentiment feature contract", start, None, checks);
}

// ---------------------------------------------------------------------------
// 9. End-to-end on user-supplied files in the documented formats
// ---------------------------------------------------------------------------

fn write_real_format_inputs(dir: &Path, start: NaiveDate, n_days: usize) {
    let data = dir.join("data");
    fs::create_dir_all(&data).expect("data dir");
    let mut rng = ChaCha8Rng::seed_from_u64(9009);

    let nouns = [
        "grid", "pylon", "substation", "turbine", "reactor", "pipeline", "tariff", "meter",
        "market", "contract", "minister", "committee", "blizzard", "storm", "heatwave", "frost",
        "outage", "maintenance", "upgrade", "auction", "surplus", "deficit", "forecast", "survey",
    ];
    let verbs = ["announces", "delays", "approves", "rejects", "expands", "reviews"];
    let sections = ["business", "politics", "technology", "health"];

    // Corpus: CSV with quoting exercised by commas inside fields.
    let mut corpus = csv::Writer::from_writer(Vec::new());
    corpus
        .write_record(["date", "section", "title", "description", "body"])
        .expect("header");
    let sentence = |rng: &mut ChaCha8Rng, n: usize| -> String {
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            words.push(nouns[rng.gen_range(0..nouns.len())]);
        }
        words.push(verbs[rng.gen_range(0..verbs.len())]);
        words.join(" ")
    };
    for d in 0..n_days {
        let date = start + chrono::Duration::days(d as i64);
        for a in 0..2 {
            let title = format!("{}, officials say", sentence(&mut rng, 4));
            let description = sentence(&mut rng, 8);
            let body = format!("{}. {}.", sentence(&mut rng, 12), sentence(&mut rng, 12));
            corpus
                .write_record([
                    date.to_string().as_str(),
                    sections[(d + a) % sections.len()],
                    &title,
                    &description,
                    &body,
                ])
                .expect("record");
        }
    }
    let corpus_bytes = corpus.into_inner().expect("flush");
    fs::write(data.join("corpus.csv"), corpus_bytes).expect("corpus file");

    // Temperature, then demand coupled to it.
    let tau = std::f64::consts::TAU;
    let mut temperature = String::from("date,temp_c\n");
    let mut demand = String::from("timestamp,demand_mw\n");
    let mut temps = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let date = start + chrono::Duration::days(d as i64);
        let doy = chrono::Datelike::ordinal(&date) as f64;
        let t = 10.0 - 7.0 * (tau * (doy - 15.0) / 365.25).cos() + normal(&mut rng);
        temps.push(t);
        temperature.push_str(&format!("{date},{t:.2}\n"));
    }
    for d in 0..n_days {
        let date = start + chrono::Duration::days(d as i64);
        let dow = chrono::Datelike::weekday(&date).num_days_from_monday() as f64;
        let doy = chrono::Datelike::ordinal(&date) as f64;
        let level = 28000.0
            + 1500.0 * (tau * dow / 7.0).sin()
            + 2500.0 * (tau * doy / 365.25).sin()
            + 140.0 * (14.0 - temps[d]);
        for slot in 0..48 {
            let x = slot as f64;
            let shape = 1.0 + 0.3 * (-(x - 18.0).powi(2) / 30.0).exp()
                + 0.4 * (-(x - 36.0).powi(2) / 20.0).exp();
            let mw = level * shape + 120.0 * normal(&mut rng);
            demand.push_str(&format!(
                "{date}T{:02}:{:02}:00,{mw:.1}\n",
                slot / 2,
                (slot % 2) * 30
            ));
        }
    }
    fs::write(data.join("temperature.csv"), temperature).expect("temperature file");
    fs::write(data.join("demand.csv"), demand).expect("demand file");

    let holidays = format!(
        "# public holidays\n{}\n{}\n",
        start + chrono::Duration::days(100),
        start + chrono::Duration::days(359),
    );
    fs::write(data.join("holidays.txt"), holidays).expect("holiday file");

    let mut embeddings = String::new();
    for word in nouns.iter().chain(verbs.iter()).chain(["officials", "say"].iter()) {
        embeddings.push_str(word);
        for _ in 0..8 {
            embeddings.push_str(&format!(" {:.6}", rng.gen_range(-1.0..1.0)));
        }
        embeddings.push('\n');
    }
    fs::write(data.join("embeddings.txt"), embeddings).expect("embedding file");
}

#[test]
fn end_to_end_on_documented_formats() {
    let start_time = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let start = NaiveDate::from_ymd_opt(2019, 1, 7).expect("valid date");
    let n_days = 420;
    write_real_format_inputs(dir.path(), start, n_days);

    let root = dir.path().display().to_string();
    let text = format!(
        r#"
seed = 17
output = "{root}/out"

[paths]
corpus = "{root}/data/corpus.csv"
demand = "{root}/data/demand.csv"
temperature = "{root}/data/temperature.csv"
holidays = "{root}/data/holidays.txt"
embeddings = "{root}/data/embeddings.txt"

[window]
start = "{start}"
end = "{end}"
split = "{split}"

[features]
count = ["title"]
word_freq = ["title", "description", "body"]
sentiment = ["body"]
topics = ["body"]
embeddings = ["body"]

[word_freq]
title_threshold = 5
description_threshold = 5
body_threshold = 5

[topics]
candidates = [2, 3]
sweeps = 60
burn_in = 30

[granger]
lag = 14

[grid]
n_trees = [30]
k = [12]
min_split = [4]
folds = 3

[explain]
pearson_max_features = 2
lime_samples = 150
nuisance_trees = 8
nuisance_min_split = 12
"#,
        end = start + chrono::Duration::days(n_days as i64 - 1),
        split = start + chrono::Duration::days(330),
    );
    let config = PipelineConfig::from_str(&text, "acceptance").expect("config parses");

    // No synth stage: the inputs are the user-supplied files above.
    let mut checks = Vec::new();
    for stage in [
        Stage::Features,
        Stage::Select,
        Stage::Train,
        Stage::Evaluate,
        Stage::Explain,
        Stage::Report,
    ] {
        let result = pipeline::run(stage, &config);
        checks.push((
            format!("stage {} failed: {:?}", stage.name(), result.as_ref().err()),
            result.is_ok(),
        ));
    }

    let report = fs::read_to_string(dir.path().join("out/report.md")).unwrap_or_default();
    let mut expect = |needle: &str| {
        checks.push((format!("report missing {needle:?}"), report.contains(needle)));
    };
    expect("## Feature inventory");
    expect("| D | D |");
    expect("| D+C | D+C |");
    expect("| D+T | D+T |");
    expect("| D+C+T | D+C+T |");
    expect("| PERSIST7 |");
    for m in 0..9 {
        expect(&format!("| M{m} |"));
    }
    expect("## Forecast comparison");
    expect("## Error decomposition");
    expect("## Explanations");

    conclude(9, "documented input formats end to end", start_time, None, checks);
}
