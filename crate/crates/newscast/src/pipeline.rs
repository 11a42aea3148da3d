//! Configuration, stage orchestration and report assembly.
//!
//! Stages communicate only through files under the output directory. Every
//! artifact embeds the SHA-256 of the effective configuration together with
//! the seed, and a stage refuses artifacts written under a different
//! configuration, so a stale or mismatched chain fails loudly instead of
//! silently mixing runs. Re-running any stage with identical inputs produces
//! byte-identical files.
//!
//! A minimal configuration file looks like:
//!
//! ```toml
//! seed = 7
//! output = "out"
//!
//! [paths]
//! corpus = "data/corpus.jsonl"
//! demand = "data/demand.csv"
//! temperature = "data/temperature.csv"
//! holidays = "data/holidays.txt"        # optional
//! embeddings = "data/embeddings.txt"    # optional, enables gwe features
//! lexicon = "data/lexicon.tsv"          # optional, default built-in
//!
//! [window]
//! start = "2017-01-01"
//! end = "2020-12-31"
//! split = "2020-01-01"                  # first test day
//! ```
//!
//! All other sections ([features], [word_freq], [topics], [granger], [grid],
//! [evaluate], [explain], [synth]) are optional and default to the values
//! documented on their structs. Dates must be quoted strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluate::{
    self, daily_mse_losses, dm_test, score_days, DmOptions, ErrorDecomposition, ForecastDay,
    Metrics,
};
use crate::explain::{
    double_ml, effect_profile, lime_explain, pearson_grid, DoubleMlConfig, DoubleMlResult,
    EffectReport, LimeConfig, LimeReport, LimeTarget, PearsonCell,
};
use crate::features::{
    build_count_block, build_embedding_block, build_sentiment_block, build_vocabulary_from_dataset,
    build_wordfreq_block, EmbeddingTable, FamilyKey, FeatureBlock, FeatureFamily, SentimentLexicon,
    TextType,
};
use crate::forecast::{
    build_design, fit_extratrees, grid_search_cv, persistence_forecast, DesignMatrix,
    ExtraTreesConfig, ExtraTreesModel, FeatureSetSpec, GridPoint, GridSpec,
};
use crate::ingest::{
    align, ingest_corpus, ingest_demand, ingest_holidays, ingest_temperature, AlignReport,
    AlignedDataset, IngestReport,
};
use crate::select::{audit_csv, bilateral_select, GrangerConfig, GrangerOutcome};
use crate::stats::derive_seed;
use crate::synth::{self, SynthConfig};
use crate::textprep::Stopwords;
use crate::topics::{
    build_topic_block, docs_from_dataset, fit_lda, select_topic_count, LdaConfig,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: String,
    pub demand: String,
    pub temperature: String,
    #[serde(default)]
    pub holidays: Option<String>,
    #[serde(default)]
    pub embeddings: Option<String>,
    /// Sentiment lexicon; the built-in list is used when absent.
    #[serde(default)]
    pub lexicon: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// First test day; training covers [start, split).
    pub split: NaiveDate,
}

/// Text types each feature family is built for. Values are text-type names
/// ("title", "description", "body").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyToggles {
    pub count: Vec<String>,
    pub word_freq: Vec<String>,
    pub sentiment: Vec<String>,
    pub topics: Vec<String>,
    /// Requires [paths].embeddings; off by default.
    pub embeddings: Vec<String>,
}

impl Default for FamilyToggles {
    fn default() -> Self {
        let all = || vec!["title".to_string(), "description".to_string(), "body".to_string()];
        FamilyToggles {
            count: all(),
            word_freq: all(),
            sentiment: vec!["body".to_string()],
            topics: vec!["body".to_string()],
            embeddings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordFreqSettings {
    /// Keep words whose training-window frequency strictly exceeds the
    /// threshold of their text type.
    pub title_threshold: u64,
    pub description_threshold: u64,
    pub body_threshold: u64,
    /// Relative frequencies instead of raw counts.
    pub normalized: bool,
}

impl Default for WordFreqSettings {
    fn default() -> Self {
        WordFreqSettings {
            title_threshold: 200,
            description_threshold: 400,
            body_threshold: 5000,
            normalized: true,
        }
    }
}

impl WordFreqSettings {
    fn threshold(&self, tt: TextType) -> u64 {
        match tt {
            TextType::Title => self.title_threshold,
            TextType::Description => self.description_threshold,
            TextType::Body => self.body_threshold,
        }
    }
}

/// Per-text-type override of the shared topic-model settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicOverride {
    pub candidates: Option<Vec<usize>>,
    pub sweeps: Option<usize>,
    pub burn_in: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSettings {
    /// Candidate topic counts; coherence picks among them.
    pub candidates: Vec<usize>,
    pub sweeps: usize,
    pub burn_in: usize,
    /// Document-topic prior; absent means 50 / topics.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub title: Option<TopicOverride>,
    pub description: Option<TopicOverride>,
    pub body: Option<TopicOverride>,
}

impl Default for TopicSettings {
    fn default() -> Self {
        TopicSettings {
            candidates: vec![5],
            sweeps: 1000,
            burn_in: 500,
            alpha: None,
            beta: 0.01,
            title: None,
            description: None,
            body: None,
        }
    }
}

impl TopicSettings {
    fn resolve(&self, tt: TextType, seed: u64) -> (Vec<usize>, LdaConfig) {
        let over = match tt {
            TextType::Title => self.title.as_ref(),
            TextType::Description => self.description.as_ref(),
            TextType::Body => self.body.as_ref(),
        };
        let candidates = over
            .and_then(|o| o.candidates.clone())
            .unwrap_or_else(|| self.candidates.clone());
        let mut config = LdaConfig::new(1);
        config.sweeps = over.and_then(|o| o.sweeps).unwrap_or(self.sweeps);
        config.burn_in = over.and_then(|o| o.burn_in).unwrap_or(self.burn_in);
        config.alpha = over.and_then(|o| o.alpha).or(self.alpha);
        config.beta = over.and_then(|o| o.beta).unwrap_or(self.beta);
        config.seed = seed;
        (candidates, config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub n_trees: Vec<usize>,
    /// Candidate features per split; empty picks sqrt(p) and p/3.
    pub k: Vec<usize>,
    pub min_split: Vec<usize>,
    /// Expanding-window cross-validation folds.
    pub folds: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { n_trees: vec![100, 300], k: Vec::new(), min_split: vec![2, 5], folds: 5 }
    }
}

impl GridSettings {
    fn spec_for(&self, p: usize) -> GridSpec {
        let k = if self.k.is_empty() { GridSpec::default_for(p).k } else { self.k.clone() };
        GridSpec { n_trees: self.n_trees.clone(), k, min_split: self.min_split.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    /// Small-sample adjustment for the forecast-comparison test.
    pub small_sample_correction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    /// Correlation grids are emitted for at most this many selected features.
    pub pearson_max_features: usize,
    pub lime_samples: usize,
    /// Instance dates to explain; empty means the first test day.
    pub lime_dates: Vec<NaiveDate>,
    /// Explain one half-hour slot instead of the daily mean.
    pub lime_slot: Option<usize>,
    /// Treatment feature for effect estimation; absent picks the selected
    /// feature with the smallest forward p-value.
    pub effect_feature: Option<String>,
    pub nuisance_trees: usize,
    /// Candidate features per split in nuisance models; absent means sqrt(p).
    pub nuisance_k: Option<usize>,
    pub nuisance_min_split: usize,
    pub cross_fit: bool,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            pearson_max_features: 8,
            lime_samples: 5000,
            lime_dates: Vec::new(),
            lime_slot: None,
            effect_feature: None,
            nuisance_trees: 100,
            nuisance_k: None,
            nuisance_min_split: 5,
            cross_fit: true,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_output() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub window: WindowConfig,
    #[serde(default)]
    pub features: FamilyToggles,
    #[serde(default)]
    pub word_freq: WordFreqSettings,
    #[serde(default)]
    pub topics: TopicSettings,
    #[serde(default)]
    pub granger: GrangerConfig,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub evaluate: EvaluateSettings,
    #[serde(default)]
    pub explain: ExplainSettings,
    /// Fixture generator settings; the synth stage overrides its start,
    /// span and seed from [window] and the pipeline seed.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: String,
}

impl PipelineConfig {
    pub fn from_str(text: &str, origin: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(&path.display().to_string(), e))?;
        Self::from_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.window;
        if w.end < w.start {
            return Err(Error::Config(format!("window end {} before start {}", w.end, w.start)));
        }
        if !(w.start < w.split && w.split <= w.end) {
            return Err(Error::Config(format!(
                "split {} must lie inside the window ({} exclusive to {} inclusive)",
                w.split, w.start, w.end
            )));
        }
        self.enabled_pairs()?;
        if !self.features.embeddings.is_empty() && self.paths.embeddings.is_none() {
            return Err(Error::Config(
                "embedding features enabled but [paths].embeddings is not set".into(),
            ));
        }
        for k in &self.topics.candidates {
            if *k == 0 {
                return Err(Error::Config("topic count candidates must be positive".into()));
            }
        }
        self.granger.validate()?;
        if self.grid.n_trees.is_empty() || self.grid.min_split.is_empty() {
            return Err(Error::Config("grid n_trees and min_split must be non-empty".into()));
        }
        if self.grid.folds < 2 {
            return Err(Error::Config("grid folds must be at least 2".into()));
        }
        if let Some(s) = self.explain.lime_slot {
            if s >= crate::ingest::SLOTS_PER_DAY {
                return Err(Error::Config(format!("lime_slot {s} outside 0..48")));
            }
        }
        if self.explain.nuisance_trees == 0 {
            return Err(Error::Config("nuisance_trees must be at least 1".into()));
        }
        if self.output.is_empty() {
            return Err(Error::Config("output directory must not be empty".into()));
        }
        Ok(())
    }

    /// Enabled (family, text type) pairs in canonical family-then-type order.
    pub fn enabled_pairs(&self) -> Result<Vec<FamilyKey>> {
        let mut out = Vec::new();
        let families = [
            (FeatureFamily::Count, &self.features.count),
            (FeatureFamily::WordFreq, &self.features.word_freq),
            (FeatureFamily::Sentiment, &self.features.sentiment),
            (FeatureFamily::Topic, &self.features.topics),
            (FeatureFamily::Embedding, &self.features.embeddings),
        ];
        for (family, toggles) in families {
            let mut types = BTreeSet::new();
            for t in toggles.iter() {
                types.insert(TextType::parse(t)?);
            }
            out.extend(types.into_iter().map(|tt| FamilyKey::new(family, tt)));
        }
        Ok(out)
    }

    /// Identity of the effective configuration; stamped into every artifact.
    pub fn stamp(&self) -> Stamp {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        Stamp { config_sha256: hex, seed: self.seed }
    }

    fn out_path(&self, rel: &str) -> PathBuf {
        Path::new(&self.output).join(rel)
    }
}

// ---------------------------------------------------------------------------
// Stamped artifacts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stamp: Stamp,
    pub payload: T,
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(&parent.display().to_string(), e))?;
        }
    }
    fs::write(path, content).map_err(|e| Error::io(&path.display().to_string(), e))
}

fn save_json<T: Serialize>(stamp: &Stamp, payload: &T, path: &Path) -> Result<()> {
    let wrapped = Stamped { stamp: stamp.clone(), payload };
    let mut json = serde_json::to_string(&wrapped)
        .map_err(|e| Error::Numerical(format!("serialize {}: {e}", path.display())))?;
    json.push('\n');
    write_text(path, &json)
}

/// Loads a stamped artifact, naming the subcommand that produces it when the
/// file is absent or was written under a different configuration or seed.
fn load_json<T: DeserializeOwned>(path: &Path, stage: &str, expect: &Stamp) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| {
        Error::MissingArtifact(format!(
            "{} not found; run the `{stage}` subcommand first",
            path.display()
        ))
    })?;
    let wrapped: Stamped<T> = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&path.display().to_string(), 0, e.to_string()))?;
    if wrapped.stamp != *expect {
        return Err(Error::MissingArtifact(format!(
            "{} was written under a different configuration or seed; re-run `{stage}`",
            path.display()
        )));
    }
    Ok(wrapped.payload)
}

/// Comment line prepended to delimited outputs.
fn stamp_line(stamp: &Stamp) -> String {
    format!("# config_sha256={} seed={}\n", stamp.config_sha256, stamp.seed)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

// Relative artifact locations under the output directory.
const REL_GROUND_TRUTH: &str = "ground_truth.json";
const REL_ALIGNED: &str = "features/aligned.json";
const REL_FEATURES: &str = "features/features.json";
const REL_SELECTION: &str = "select/selection.json";
const REL_MANIFEST: &str = "models/manifest.json";
const REL_EVALUATION: &str = "evaluate/evaluation.json";
const REL_EXPLAIN: &str = "explain/explain.json";
const REL_REPORT: &str = "report.md";

fn rel_block(id: &str) -> String {
    format!("features/block_{id}.json")
}

fn rel_model(name: &str) -> String {
    format!("models/model_{}.json", sanitize(name))
}

// Seed streams, spaced so stages never share random state.
const STREAM_LDA_FIT: u64 = 10;
const STREAM_LDA_INFER: u64 = 20;
const STREAM_GRID: u64 = 40;
const STREAM_FINAL_FIT: u64 = 70;
const STREAM_LIME: u64 = 110;
const STREAM_EFFECT: u64 = 120;
const STREAM_EFFECT_MEAN: u64 = 121;

// ---------------------------------------------------------------------------
// Stage dispatch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Features,
    Select,
    Train,
    Evaluate,
    Explain,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Features,
        Stage::Select,
        Stage::Train,
        Stage::Evaluate,
        Stage::Explain,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Features => "features",
            Stage::Select => "select",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Report => "report",
        }
    }
}

/// Runs one stage and returns its human-readable summary lines.
pub fn run(stage: Stage, config: &PipelineConfig) -> Result<Vec<String>> {
    config.validate()?;
    match stage {
        Stage::Synth => stage_synth(config),
        Stage::Features => stage_features(config),
        Stage::Select => stage_select(config),
        Stage::Train => stage_train(config),
        Stage::Evaluate => stage_evaluate(config),
        Stage::Explain => stage_explain(config),
        Stage::Report => stage_report(config),
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generates a fixture spanning the configured window and writes it to the
/// configured input paths, so the remaining stages can run on it unchanged.
pub fn stage_synth(config: &PipelineConfig) -> Result<Vec<String>> {
    let mut sc = config.synth.clone().unwrap_or_default();
    sc.start = config.window.start;
    sc.n_days = (config.window.end - config.window.start).num_days() as usize + 1;
    sc.seed = config.seed;
    let (dataset, truth) = synth::generate(&sc)?;

    let mut files = Vec::new();
    let mut write = |path: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        f(Path::new(path))?;
        files.push(path.to_string());
        Ok(())
    };
    write(&config.paths.corpus, &|p| synth::write_corpus(&dataset, p))?;
    write(&config.paths.demand, &|p| synth::write_demand(&dataset, p))?;
    write(&config.paths.temperature, &|p| synth::write_temperature(&dataset, p))?;
    if let Some(path) = &config.paths.holidays {
        write(path, &|p| synth::write_holidays(&dataset, p))?;
    }
    if let Some(path) = &config.paths.embeddings {
        write(path, &|p| synth::write_embeddings(&sc, p))?;
    }
    save_json(&config.stamp(), &truth, &config.out_path(REL_GROUND_TRUTH))?;

    Ok(vec![
        format!(
            "generated {} days ({} event days, {} affected)",
            sc.n_days,
            truth.event_days.len(),
            truth.affected_days.len()
        ),
        format!("wrote {}", files.join(", ")),
    ])
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaInfo {
    pub chosen_topics: usize,
    /// (candidate, coherence) pairs in candidate order.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub id: String,
    pub file: String,
    pub n_features: usize,
    pub n_days: usize,
    pub missing_days: usize,
    pub lda: Option<LdaInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesArtifact {
    pub ingest: IngestReport,
    pub align: AlignReport,
    /// Last day whose text may influence vocabularies and topic models.
    pub train_end: NaiveDate,
    pub blocks: Vec<BlockInfo>,
}

fn require_input(path: &str, what: &str) -> Result<()> {
    if Path::new(path).exists() {
        return Ok(());
    }
    Err(Error::MissingArtifact(format!(
        "{what} file {path} is missing; generate a fixture with the `synth` subcommand or point [paths] at real data"
    )))
}

fn block_csv(stamp: &Stamp, block: &FeatureBlock) -> String {
    let mut out = stamp_line(stamp);
    out.push_str("date,missing");
    for name in block.qualified_names() {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for i in 0..block.len() {
        let _ = write!(out, "{},{}", block.dates[i], block.missing[i]);
        for v in &block.values[i] {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Ingests and aligns the inputs, then builds every enabled feature family.
/// Vocabularies and topic models only see days up to the split, so the test
/// period cannot leak into feature definitions.
pub fn stage_features(config: &PipelineConfig) -> Result<Vec<String>> {
    let stamp = config.stamp();
    require_input(&config.paths.corpus, "corpus")?;
    require_input(&config.paths.demand, "demand")?;
    require_input(&config.paths.temperature, "temperature")?;

    let window = (config.window.start, config.window.end);
    let (corpus, ingest_report) = ingest_corpus(&config.paths.corpus, Some(window))?;
    let demand = ingest_demand(&config.paths.demand)?;
    let temperature = ingest_temperature(&config.paths.temperature)?;
    let holidays = match &config.paths.holidays {
        Some(p) => {
            require_input(p, "holiday")?;
            ingest_holidays(p)?
        }
        None => BTreeSet::new(),
    };
    let (aligned, align_report) = align(&corpus, &demand, &temperature, &holidays, window)?;
    if aligned.days.is_empty() {
        return Err(Error::InvalidInput("no aligned days inside the window".into()));
    }
    let train_end = config.window.split - chrono::Duration::days(1);

    let stopwords = Stopwords::default_english();
    let lexicon = match &config.paths.lexicon {
        Some(p) => {
            require_input(p, "lexicon")?;
            SentimentLexicon::from_files(p, None)?
        }
        None => SentimentLexicon::default_english(),
    };
    let pairs = config.enabled_pairs()?;
    let embeddings = if pairs.iter().any(|k| k.family == FeatureFamily::Embedding) {
        let path = config.paths.embeddings.as_ref().expect("validated");
        require_input(path, "embedding")?;
        Some(EmbeddingTable::from_file(path)?)
    } else {
        None
    };

    let mut lines = vec![format!(
        "aligned {} days ({} zero-article, {} dropped for missing temperature)",
        align_report.aligned_days,
        align_report.zero_article_days,
        align_report.dropped_missing_temperature.len()
    )];
    let mut blocks = Vec::new();
    for key in pairs {
        let tt = key.text_type;
        let type_idx = TextType::ALL.iter().position(|t| *t == tt).expect("known type") as u64;
        let mut lda_info = None;
        let block = match key.family {
            FeatureFamily::Count => build_count_block(&aligned, tt, &stopwords),
            FeatureFamily::WordFreq => {
                let vocab = build_vocabulary_from_dataset(
                    &aligned,
                    tt,
                    &stopwords,
                    train_end,
                    config.word_freq.threshold(tt),
                )?;
                build_wordfreq_block(&aligned, tt, &stopwords, &vocab, config.word_freq.normalized)
            }
            FeatureFamily::Sentiment => build_sentiment_block(&aligned, tt, &lexicon),
            FeatureFamily::Topic => {
                let docs = docs_from_dataset(&aligned, tt, &stopwords, Some(train_end));
                let (candidates, base) =
                    config.topics.resolve(tt, derive_seed(config.seed, STREAM_LDA_FIT + type_idx));
                let (chosen, scores) = select_topic_count(&docs, &candidates, &base)?;
                let fit = fit_lda(&docs, &base.with_topics(chosen))?;
                lda_info = Some(LdaInfo { chosen_topics: chosen, scores });
                save_json(
                    &stamp,
                    &fit.model,
                    &config.out_path(&format!("features/lda_{}.json", tt.code())),
                )?;
                build_topic_block(
                    &aligned,
                    tt,
                    &fit.model,
                    &stopwords,
                    derive_seed(config.seed, STREAM_LDA_INFER + type_idx),
                )
            }
            FeatureFamily::Embedding => {
                build_embedding_block(&aligned, tt, embeddings.as_ref().expect("loaded above"))
            }
        };
        block.check()?;
        let id = key.id();
        let file = rel_block(&id);
        save_json(&stamp, &block, &config.out_path(&file))?;
        write_text(
            &config.out_path(&format!("features/block_{id}.csv")),
            &block_csv(&stamp, &block),
        )?;
        let missing_days = block.missing.iter().filter(|m| **m).count();
        let mut line = format!("{id}: {} features over {} days", block.names.len(), block.len());
        if let Some(info) = &lda_info {
            let _ = write!(line, " (chose {} topics by coherence)", info.chosen_topics);
        }
        lines.push(line);
        blocks.push(BlockInfo {
            id,
            file,
            n_features: block.names.len(),
            n_days: block.len(),
            missing_days,
            lda: lda_info,
        });
    }

    save_json(&stamp, &aligned, &config.out_path(REL_ALIGNED))?;
    let artifact = FeaturesArtifact { ingest: ingest_report, align: align_report, train_end, blocks };
    save_json(&stamp, &artifact, &config.out_path(REL_FEATURES))?;
    Ok(lines)
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub id: String,
    pub before: usize,
    pub after: usize,
    pub audit_file: String,
    pub outcomes: Vec<GrangerOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub families: Vec<FamilySelection>,
    /// Qualified names of all selected features, in family order.
    pub selected: Vec<String>,
}

fn load_features(config: &PipelineConfig, stamp: &Stamp) -> Result<FeaturesArtifact> {
    load_json(&config.out_path(REL_FEATURES), "features", stamp)
}

fn load_aligned(config: &PipelineConfig, stamp: &Stamp) -> Result<AlignedDataset> {
    load_json(&config.out_path(REL_ALIGNED), "features", stamp)
}

fn load_blocks(
    config: &PipelineConfig,
    stamp: &Stamp,
    infos: &[BlockInfo],
) -> Result<Vec<FeatureBlock>> {
    infos
        .iter()
        .map(|info| load_json(&config.out_path(&info.file), "features", stamp))
        .collect()
}

/// Bilateral screening of every feature against daily mean demand over the
/// training days only.
pub fn stage_select(config: &PipelineConfig) -> Result<Vec<String>> {
    let stamp = config.stamp();
    let features = load_features(config, &stamp)?;
    let aligned = load_aligned(config, &stamp)?;
    let blocks = load_blocks(config, &stamp, &features.blocks)?;

    let train_days: Vec<usize> = aligned
        .days
        .iter()
        .enumerate()
        .filter(|(_, d)| d.date < config.window.split)
        .map(|(i, _)| i)
        .collect();
    let target: Vec<f64> = train_days
        .iter()
        .map(|&i| {
            let d = &aligned.days[i].demand;
            d.iter().sum::<f64>() / d.len() as f64
        })
        .collect();

    let mut families = Vec::new();
    let mut selected = Vec::new();
    let mut lines = Vec::new();
    for block in &blocks {
        let row_of: BTreeMap<NaiveDate, usize> =
            block.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let prefix = block.key.prefix();
        let series: Vec<(String, Vec<f64>)> = block
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let values = train_days
                    .iter()
                    .map(|&i| {
                        let date = aligned.days[i].date;
                        row_of.get(&date).map_or(0.0, |&r| block.values[r][j])
                    })
                    .collect();
                (format!("{prefix}{name}"), values)
            })
            .collect();
        let outcomes = bilateral_select(&series, &target, &config.granger)?;
        let id = block.key.id();
        let audit_file = format!("select/audit_{id}.csv");
        let csv = format!("{}{}", stamp_line(&stamp), audit_csv(&outcomes)?);
        write_text(&config.out_path(&audit_file), &csv)?;
        let after = outcomes.iter().filter(|o| o.selected).count();
        selected.extend(outcomes.iter().filter(|o| o.selected).map(|o| o.feature.clone()));
        lines.push(format!("{id}: {} -> {after} features", outcomes.len()));
        families.push(FamilySelection {
            id,
            before: outcomes.len(),
            after,
            audit_file,
            outcomes,
        });
    }

    let artifact = SelectionArtifact { families, selected };
    save_json(&stamp, &artifact, &config.out_path(REL_SELECTION))?;
    Ok(lines)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Fixed benchmark feature sets, in the order they are reported.
const BENCHMARKS: [(&str, bool, bool, bool); 4] = [
    ("D", true, false, false),
    ("D+C", true, true, false),
    ("D+T", true, false, true),
    ("D+C+T", true, true, true),
];

const BATTERY: [(&str, &[&str]); 9] = [
    ("M0", &["wf_t"]),
    ("M1", &["wf_t", "wf_d", "wf_b"]),
    ("M2", &["wf_t", "se_b"]),
    ("M3", &["wf_t", "td_b"]),
    ("M4", &["wf_t", "gwe_b"]),
    ("M5", &["wf_t", "se_b", "td_b"]),
    ("M6", &["wf_t", "se_b", "gwe_b"]),
    ("M7", &["wf_t", "td_b", "gwe_b"]),
    ("M8", &["wf_t", "se_b", "td_b", "gwe_b"]),
];

/// The fixed model battery: each set adds textual families on top of the
/// full benchmark (demand lags, calendar, temperature).
pub fn battery_sets() -> Vec<(String, Vec<FamilyKey>)> {
    BATTERY
        .iter()
        .map(|(name, ids)| {
            let keys =
                ids.iter().map(|id| FamilyKey::parse(id).expect("valid battery key")).collect();
            (name.to_string(), keys)
        })
        .collect()
}

struct ModelPlan {
    name: String,
    spec: FeatureSetSpec,
    /// Restrict textual columns to the Granger-selected set.
    use_selected: bool,
    skip: Option<String>,
}

fn model_plans(available: &BTreeSet<String>) -> Vec<ModelPlan> {
    let mut plans: Vec<ModelPlan> = BENCHMARKS
        .iter()
        .map(|(name, d, c, t)| ModelPlan {
            name: name.to_string(),
            spec: FeatureSetSpec::benchmark(*d, *c, *t),
            use_selected: false,
            skip: None,
        })
        .collect();
    for (name, keys) in battery_sets() {
        let missing: Vec<String> = keys
            .iter()
            .map(|k| k.id())
            .filter(|id| !available.contains(id))
            .collect();
        let skip = if missing.is_empty() {
            None
        } else {
            Some(format!("family {} not built; enable it under [features]", missing.join(", ")))
        };
        plans.push(ModelPlan {
            name,
            spec: FeatureSetSpec::with_families(keys),
            use_selected: true,
            skip,
        });
    }
    plans
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModelInfo {
    pub name: String,
    pub spec: FeatureSetSpec,
    pub spec_label: String,
    pub file: Option<String>,
    pub n_features: usize,
    pub n_train_rows: usize,
    pub best: Option<ExtraTreesConfig>,
    pub cv_table: Vec<GridPoint>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub models: Vec<TrainedModelInfo>,
}

fn load_selection(config: &PipelineConfig, stamp: &Stamp) -> Result<SelectionArtifact> {
    load_json(&config.out_path(REL_SELECTION), "select", stamp)
}

/// Rows whose target day falls before the split train; the rest test.
fn split_design(design: &DesignMatrix, split: NaiveDate) -> (DesignMatrix, DesignMatrix) {
    design.split_at_date(split - chrono::Duration::days(1))
}

/// Tunes and fits the four benchmarks plus the M0-M8 battery. Hyperparameters
/// come from expanding-window cross-validation on training rows only.
pub fn stage_train(config: &PipelineConfig) -> Result<Vec<String>> {
    let stamp = config.stamp();
    let features = load_features(config, &stamp)?;
    let selection = load_selection(config, &stamp)?;
    let aligned = load_aligned(config, &stamp)?;
    let blocks = load_blocks(config, &stamp, &features.blocks)?;
    let selected: BTreeSet<String> = selection.selected.iter().cloned().collect();
    let available: BTreeSet<String> = features.blocks.iter().map(|b| b.id.clone()).collect();

    let mut lines = Vec::new();
    let mut infos = Vec::new();
    for (idx, plan) in model_plans(&available).into_iter().enumerate() {
        let spec_label = plan.spec.label();
        if let Some(reason) = plan.skip {
            lines.push(format!("{}: skipped ({reason})", plan.name));
            infos.push(TrainedModelInfo {
                name: plan.name,
                spec: plan.spec,
                spec_label,
                file: None,
                n_features: 0,
                n_train_rows: 0,
                best: None,
                cv_table: Vec::new(),
                skipped: Some(reason),
            });
            continue;
        }
        let design = build_design(
            &aligned,
            &blocks,
            &plan.spec,
            plan.use_selected.then_some(&selected),
        )?;
        let (train, _) = split_design(&design, config.window.split);
        if train.n_rows() == 0 {
            return Err(Error::InvalidInput(format!(
                "no training rows before {} for model {}",
                config.window.split, plan.name
            )));
        }
        let p = train.x.ncols();
        let grid = config.grid.spec_for(p);
        let search = grid_search_cv(
            &train.x,
            &train.y,
            &design.feature_names,
            &grid,
            config.grid.folds,
            derive_seed(config.seed, STREAM_GRID + idx as u64),
        )?;
        let final_config = ExtraTreesConfig {
            seed: derive_seed(config.seed, STREAM_FINAL_FIT + idx as u64),
            ..search.best
        };
        let model = fit_extratrees(&train.x, &train.y, &design.feature_names, &final_config)?;
        let file = rel_model(&plan.name);
        save_json(&stamp, &model, &config.out_path(&file))?;

        let mut grid_csv = stamp_line(&stamp);
        grid_csv.push_str("n_trees,k,min_split,mean_rmse\n");
        for point in &search.table {
            let _ = writeln!(
                grid_csv,
                "{},{},{},{}",
                point.n_trees, point.k, point.min_split, point.mean_rmse
            );
        }
        write_text(
            &config.out_path(&format!("models/grid_{}.csv", sanitize(&plan.name))),
            &grid_csv,
        )?;

        lines.push(format!(
            "{} ({spec_label}): {p} features, {} rows, best trees={} k={} min_split={}",
            plan.name,
            train.n_rows(),
            final_config.n_trees,
            final_config.k,
            final_config.min_split
        ));
        infos.push(TrainedModelInfo {
            name: plan.name,
            spec: plan.spec,
            spec_label,
            file: Some(file),
            n_features: p,
            n_train_rows: train.n_rows(),
            best: Some(final_config),
            cv_table: search.table,
            skipped: None,
        });
    }

    save_json(&stamp, &TrainArtifact { models: infos }, &config.out_path(REL_MANIFEST))?;
    Ok(lines)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Report name of the same-half-hour day-7 persistence baseline.
pub const PERSISTENCE: &str = "PERSIST7";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub name: String,
    pub spec_label: String,
    pub n_days: usize,
    pub metrics: Option<Metrics>,
    /// Why metrics are absent (skipped model or degenerate score).
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmCell {
    pub a: String,
    pub b: String,
    pub statistic: Option<f64>,
    /// One-sided p-value; small values mean model `a` forecast better.
    pub p_value: Option<f64>,
    pub n_days: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    /// Benchmarks in fixed order, then the persistence baseline, then M0-M8.
    pub models: Vec<ModelEvaluation>,
    pub dm: Vec<DmCell>,
    pub decompositions: BTreeMap<String, ErrorDecomposition>,
    pub benchmark: String,
    /// Battery model with the lowest test RMSE.
    pub best_text: Option<String>,
}

fn load_manifest(config: &PipelineConfig, stamp: &Stamp) -> Result<TrainArtifact> {
    load_json(&config.out_path(REL_MANIFEST), "train", stamp)
}

fn forecast_days(model: &ExtraTreesModel, test: &DesignMatrix) -> Result<Vec<ForecastDay>> {
    let pred = model.predict(&test.x)?;
    Ok((0..test.n_rows())
        .map(|i| ForecastDay {
            target_date: test.target_dates[i],
            truth: (0..test.y.ncols()).map(|j| test.y[(i, j)]).collect(),
            forecast: (0..pred.ncols()).map(|j| pred[(i, j)]).collect(),
        })
        .collect())
}

/// Scores every trained model and the persistence baseline on the test days,
/// compares all pairs with the forecast-accuracy test, and decomposes errors
/// by hour of day and day type.
pub fn stage_evaluate(config: &PipelineConfig) -> Result<Vec<String>> {
    let stamp = config.stamp();
    let manifest = load_manifest(config, &stamp)?;
    let features = load_features(config, &stamp)?;
    let selection = load_selection(config, &stamp)?;
    let aligned = load_aligned(config, &stamp)?;
    let blocks = load_blocks(config, &stamp, &features.blocks)?;
    let selected: BTreeSet<String> = selection.selected.iter().cloned().collect();

    // (name, spec label, per-day forecasts) for each model with predictions.
    let mut day_sets: Vec<(String, String, Vec<ForecastDay>)> = Vec::new();
    let mut rows: Vec<ModelEvaluation> = Vec::new();
    let mut persistence_inserted = false;
    for info in &manifest.models {
        if let Some(reason) = &info.skipped {
            rows.push(ModelEvaluation {
                name: info.name.clone(),
                spec_label: info.spec_label.clone(),
                n_days: 0,
                metrics: None,
                note: Some(reason.clone()),
            });
            continue;
        }
        let file = info.file.as_ref().expect("unskipped model has a file");
        let model: ExtraTreesModel = load_json(&config.out_path(file), "train", &stamp)?;
        let design = build_design(
            &aligned,
            &blocks,
            &info.spec,
            info.spec.families.is_empty().not_then(&selected),
        )?;
        let (_, test) = split_design(&design, config.window.split);
        if test.n_rows() == 0 {
            return Err(Error::InvalidInput(format!(
                "no test rows on or after {} for model {}",
                config.window.split, info.name
            )));
        }
        let days = forecast_days(&model, &test)?;
        day_sets.push((info.name.clone(), info.spec_label.clone(), days));

        // The persistence baseline shares the benchmark's test days and sits
        // between the benchmarks and the battery in the report order.
        if info.name == "D+C+T" && !persistence_inserted {
            persistence_inserted = true;
            let persist: Vec<ForecastDay> = day_sets
                .last()
                .expect("just pushed")
                .2
                .iter()
                .filter_map(|d| {
                    persistence_forecast(&aligned, d.target_date).map(|forecast| ForecastDay {
                        target_date: d.target_date,
                        truth: d.truth.clone(),
                        forecast,
                    })
                })
                .collect();
            day_sets.push((PERSISTENCE.to_string(), "day-7 persistence".to_string(), persist));
        }
    }

    // Metrics and decompositions per model, in day_sets order; skipped rows
    // interleave at their manifest positions below.
    let mut decompositions = BTreeMap::new();
    let mut scored: BTreeMap<String, ModelEvaluation> = BTreeMap::new();
    for (name, spec_label, days) in &day_sets {
        let mut note = None;
        let metrics = match score_days(days).and_then(|s| evaluate::period_metrics(&s)) {
            Ok(m) => Some(m),
            Err(e) => {
                note = Some(e.to_string());
                None
            }
        };
        if let Ok(dec) = evaluate::error_decomposition(days) {
            decompositions.insert(name.clone(), dec);
        }
        scored.insert(
            name.clone(),
            ModelEvaluation {
                name: name.clone(),
                spec_label: spec_label.clone(),
                n_days: days.len(),
                metrics,
                note,
            },
        );
    }
    // Assemble rows in report order: benchmarks, persistence, battery.
    let mut ordered: Vec<ModelEvaluation> = Vec::new();
    for info in &manifest.models {
        if let Some(done) = scored.remove(&info.name) {
            ordered.push(done);
        } else if let Some(row) = rows.iter().find(|r| r.name == info.name) {
            ordered.push(row.clone());
        }
        if info.name == "D+C+T" {
            if let Some(p) = scored.remove(PERSISTENCE) {
                ordered.push(p);
            }
        }
    }

    // Pairwise forecast comparison over the shared test days of each pair.
    let options = DmOptions { small_sample_correction: config.evaluate.small_sample_correction };
    let mut dm = Vec::new();
    for i in 0..day_sets.len() {
        for j in (i + 1)..day_sets.len() {
            let (name_a, _, days_a) = &day_sets[i];
            let (name_b, _, days_b) = &day_sets[j];
            let dates_b: BTreeMap<NaiveDate, usize> =
                days_b.iter().enumerate().map(|(r, d)| (d.target_date, r)).collect();
            let mut common_a = Vec::new();
            let mut common_b = Vec::new();
            for d in days_a {
                if let Some(&r) = dates_b.get(&d.target_date) {
                    common_a.push(d.clone());
                    common_b.push(days_b[r].clone());
                }
            }
            let loss_a = daily_mse_losses(&common_a);
            let loss_b = daily_mse_losses(&common_b);
            match dm_test(name_a, name_b, &loss_a, &loss_b, &options) {
                Ok(report) => {
                    dm.push(DmCell {
                        a: name_a.clone(),
                        b: name_b.clone(),
                        statistic: Some(report.statistic),
                        p_value: Some(report.p_value),
                        n_days: report.n_days,
                        note: None,
                    });
                    // The reverse direction follows from the same statistic.
                    dm.push(DmCell {
                        a: name_b.clone(),
                        b: name_a.clone(),
                        statistic: Some(-report.statistic),
                        p_value: Some(1.0 - report.p_value),
                        n_days: report.n_days,
                        note: None,
                    });
                }
                Err(e) => {
                    for (a, b) in [(name_a, name_b), (name_b, name_a)] {
                        dm.push(DmCell {
                            a: a.clone(),
                            b: b.clone(),
                            statistic: None,
                            p_value: None,
                            n_days: common_a.len(),
                            note: Some(e.to_string()),
                        });
                    }
                }
            }
        }
    }

    let best_text = ordered
        .iter()
        .filter(|m| m.name.starts_with('M'))
        .filter_map(|m| m.metrics.as_ref().map(|met| (m.name.clone(), met.rmse)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite rmse"))
        .map(|(name, _)| name);

    let mut lines = Vec::new();
    let mut metrics_csv = stamp_line(&stamp);
    metrics_csv.push_str("model,features,days,rmse,mae,smape\n");
    for row in &ordered {
        match &row.metrics {
            Some(m) => {
                let _ = writeln!(
                    metrics_csv,
                    "{},{},{},{},{},{}",
                    row.name, row.spec_label, row.n_days, m.rmse, m.mae, m.smape
                );
                lines.push(format!(
                    "{}: rmse {:.2} mae {:.2} smape {:.3} over {} days",
                    row.name, m.rmse, m.mae, m.smape, row.n_days
                ));
            }
            None => {
                let _ = writeln!(
                    metrics_csv,
                    "{},{},{},NA,NA,NA",
                    row.name, row.spec_label, row.n_days
                );
                lines.push(format!(
                    "{}: {}",
                    row.name,
                    row.note.as_deref().unwrap_or("no metrics")
                ));
            }
        }
    }
    write_text(&config.out_path("evaluate/metrics.csv"), &metrics_csv)?;

    let names: Vec<&String> = day_sets.iter().map(|(n, _, _)| n).collect();
    let mut dm_csv = stamp_line(&stamp);
    dm_csv.push_str("model");
    for n in &names {
        let _ = write!(dm_csv, ",{n}");
    }
    dm_csv.push('\n');
    for a in &names {
        let _ = write!(dm_csv, "{a}");
        for b in &names {
            if a == b {
                dm_csv.push_str(",NA");
                continue;
            }
            let cell = dm.iter().find(|c| &&c.a == a && &&c.b == b);
            match cell.and_then(|c| c.p_value) {
                Some(p) => {
                    let _ = write!(dm_csv, ",{p}");
                }
                None => dm_csv.push_str(",NA"),
            }
        }
        dm_csv.push('\n');
    }
    write_text(&config.out_path("evaluate/dm_matrix.csv"), &dm_csv)?;

    let mut dec_csv = stamp_line(&stamp);
    dec_csv.push_str("model,scope,key,rmse,mae,smape,n_days\n");
    for (name, dec) in &decompositions {
        for hour in &dec.by_hour {
            let _ = writeln!(
                dec_csv,
                "{name},hour,{},{},{},{},",
                hour.hour, hour.rmse, hour.mae, hour.smape
            );
        }
        for day in &dec.by_day_type {
            let _ = writeln!(
                dec_csv,
                "{name},day_type,{},{},{},{},{}",
                day.day_type, day.rmse, day.mae, day.smape, day.n_days
            );
        }
    }
    write_text(&config.out_path("evaluate/decomposition.csv"), &dec_csv)?;

    let artifact = EvaluationArtifact {
        models: ordered,
        dm,
        decompositions,
        benchmark: "D+C+T".to_string(),
        best_text: best_text.clone(),
    };
    save_json(&stamp, &artifact, &config.out_path(REL_EVALUATION))?;
    if let Some(best) = best_text {
        lines.push(format!("best text model: {best}"));
    }
    Ok(lines)
}

/// `families.is_empty().not_then(set)`: benchmarks take no column filter.
trait NotThen {
    fn not_then<'a>(self, set: &'a BTreeSet<String>) -> Option<&'a BTreeSet<String>>;
}

impl NotThen for bool {
    fn not_then<'a>(self, set: &'a BTreeSet<String>) -> Option<&'a BTreeSet<String>> {
        if self {
            None
        } else {
            Some(set)
        }
    }
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonSummary {
    pub feature: String,
    pub csv_file: String,
    pub svg_file: String,
    pub significant_cells: usize,
    pub insufficient_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainArtifact {
    /// Model whose behaviour is explained.
    pub model: String,
    pub pearson: Vec<PearsonSummary>,
    pub lime: Vec<LimeReport>,
    pub effect_feature: Option<String>,
    /// Constant daily-mean effect of the treatment feature.
    pub effect_mean: Option<DoubleMlResult>,
    /// Per-half-hour effect profile.
    pub effect: Option<EffectReport>,
    pub notes: Vec<String>,
}

fn pearson_csv(stamp: &Stamp, cells: &[PearsonCell]) -> String {
    let mut out = stamp_line(stamp);
    out.push_str("feature,hour,season,day_type,r,p,significant,n_days,insufficient\n");
    for c in cells {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.feature,
            c.hour,
            c.season.label(),
            c.day_type,
            fmt(c.r),
            fmt(c.p),
            c.significant,
            c.n_days,
            c.insufficient
        );
    }
    out
}

/// 24 x 8 heatmap of the stratified correlations; red positive, blue
/// negative, gray where a stratum was too small.
fn pearson_svg(cells: &[PearsonCell]) -> String {
    use crate::ingest::Season;
    let cw = 30;
    let ch = 22;
    let left = 130;
    let top = 34;
    let rows: Vec<(Season, &str)> = Season::ALL
        .iter()
        .flat_map(|s| [(*s, "weekday"), (*s, "weekend")])
        .collect();
    let width = left + 24 * cw + 20;
    let height = top + rows.len() as i64 * ch as i64 + 40;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{left}\" y=\"16\">correlation by hour, season and day type</text>"
    );
    for (ri, (season, day_type)) in rows.iter().enumerate() {
        let y = top + ri as i64 * ch as i64;
        let _ = writeln!(
            svg,
            "<text x=\"4\" y=\"{}\">{} {}</text>",
            y + 15,
            season.label(),
            day_type
        );
        for hour in 0..24 {
            let cell = cells
                .iter()
                .find(|c| c.hour == hour && c.season == *season && c.day_type == *day_type);
            let color = match cell {
                Some(c) if !c.insufficient && c.r.is_some() => {
                    let r = c.r.expect("checked");
                    // White at 0, saturating toward red (+) or blue (-).
                    let mix = |from: f64, to: f64| (from + (to - from) * r.abs()).round() as u8;
                    if r >= 0.0 {
                        format!("rgb({},{},{})", mix(255.0, 178.0), mix(255.0, 24.0), mix(255.0, 43.0))
                    } else {
                        format!("rgb({},{},{})", mix(255.0, 33.0), mix(255.0, 102.0), mix(255.0, 172.0))
                    }
                }
                _ => "rgb(221,221,221)".to_string(),
            };
            let x = left + hour as i64 * cw as i64;
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" fill=\"{color}\" \
                 stroke=\"white\"/>"
            );
        }
    }
    let axis_y = top + rows.len() as i64 * ch as i64 + 16;
    for hour in (0..24).step_by(3) {
        let x = left + hour as i64 * cw as i64;
        let _ = writeln!(svg, "<text x=\"{x}\" y=\"{axis_y}\">{hour:02}h</text>");
    }
    svg.push_str("</svg>\n");
    svg
}

fn find_feature_series<'a>(
    blocks: &'a [FeatureBlock],
    qualified: &str,
) -> Option<(&'a FeatureBlock, usize)> {
    blocks.iter().find_map(|b| {
        let prefix = b.key.prefix();
        qualified
            .strip_prefix(&prefix)
            .and_then(|bare| b.names.iter().position(|n| n == bare))
            .map(|j| (b, j))
    })
}

/// Correlation grids for the selected features, a local surrogate
/// explanation of the best text model, and treatment-effect estimates for
/// one feature. Effect estimation uses every row in the window; it is an
/// analysis of the study period, not a forecast.
pub fn stage_explain(config: &PipelineConfig) -> Result<Vec<String>> {
    let stamp = config.stamp();
    let evaluation: EvaluationArtifact =
        load_json(&config.out_path(REL_EVALUATION), "evaluate", &stamp)?;
    let manifest = load_manifest(config, &stamp)?;
    let features = load_features(config, &stamp)?;
    let selection = load_selection(config, &stamp)?;
    let aligned = load_aligned(config, &stamp)?;
    let blocks = load_blocks(config, &stamp, &features.blocks)?;
    let selected: BTreeSet<String> = selection.selected.iter().cloned().collect();

    let mut lines = Vec::new();
    let mut notes = Vec::new();

    // Correlation grids.
    let mut pearson = Vec::new();
    for feature in selection.selected.iter().take(config.explain.pearson_max_features) {
        let Some((block, j)) = find_feature_series(&blocks, feature) else {
            notes.push(format!("feature {feature} not found in any block"));
            continue;
        };
        let values: Vec<f64> = block.values.iter().map(|row| row[j]).collect();
        let cells = pearson_grid(feature, &block.dates, &values, &aligned)?;
        let base = sanitize(feature);
        let csv_file = format!("explain/pearson_{base}.csv");
        let svg_file = format!("explain/pearson_{base}.svg");
        write_text(&config.out_path(&csv_file), &pearson_csv(&stamp, &cells))?;
        write_text(&config.out_path(&svg_file), &pearson_svg(&cells))?;
        let significant = cells.iter().filter(|c| c.significant).count();
        let insufficient = cells.iter().filter(|c| c.insufficient).count();
        lines.push(format!(
            "{feature}: {significant} significant strata, {insufficient} too small"
        ));
        pearson.push(PearsonSummary {
            feature: feature.clone(),
            csv_file,
            svg_file,
            significant_cells: significant,
            insufficient_cells: insufficient,
        });
    }

    // Local surrogate explanations of the strongest available model.
    let model_name = evaluation.best_text.clone().unwrap_or_else(|| evaluation.benchmark.clone());
    let info = manifest
        .models
        .iter()
        .find(|m| m.name == model_name && m.skipped.is_none())
        .ok_or_else(|| {
            Error::MissingArtifact(format!("model {model_name} not trained; re-run `train`"))
        })?;
    let model: ExtraTreesModel = load_json(
        &config.out_path(info.file.as_ref().expect("unskipped")),
        "train",
        &stamp,
    )?;
    let design = build_design(
        &aligned,
        &blocks,
        &info.spec,
        info.spec.families.is_empty().not_then(&selected),
    )?;
    let (train, test) = split_design(&design, config.window.split);
    if test.n_rows() == 0 {
        return Err(Error::InvalidInput(format!(
            "no test rows on or after {}",
            config.window.split
        )));
    }
    let dates = if config.explain.lime_dates.is_empty() {
        vec![test.target_dates[0]]
    } else {
        config.explain.lime_dates.clone()
    };
    let target = match config.explain.lime_slot {
        Some(s) => LimeTarget::Slot(s),
        None => LimeTarget::DailyMean,
    };
    let mut lime_reports = Vec::new();
    for (idx, date) in dates.iter().enumerate() {
        let Some(row) = test.target_dates.iter().position(|d| d == date) else {
            return Err(Error::Config(format!(
                "lime date {date} is not a forecastable test day"
            )));
        };
        let instance: Vec<f64> = test.x.row(row).iter().copied().collect();
        let lime_config = LimeConfig {
            n_samples: config.explain.lime_samples,
            kernel_width: None,
            seed: derive_seed(config.seed, STREAM_LIME + idx as u64),
        };
        let report = lime_explain(&model, target, &train.x, &instance, Some(*date), &lime_config)?;
        let mut csv = stamp_line(&stamp);
        csv.push_str("feature,coefficient,std_error\n");
        let mut order: Vec<usize> = (0..report.coefficients.len()).collect();
        order.sort_by(|&a, &b| {
            report.coefficients[b]
                .1
                .abs()
                .partial_cmp(&report.coefficients[a].1.abs())
                .expect("finite coefficients")
                .then(a.cmp(&b))
        });
        for i in order {
            let (name, coef) = &report.coefficients[i];
            let _ = writeln!(csv, "{name},{coef},{}", report.std_errors[i]);
        }
        write_text(
            &config.out_path(&format!("explain/lime_{}.csv", sanitize(&date.to_string()))),
            &csv,
        )?;
        lines.push(format!(
            "surrogate for {model_name} on {date}: r2 {:.3} over {} samples",
            report.r_squared, report.n_samples
        ));
        lime_reports.push(report);
    }

    // Treatment effects for one textual feature.
    let effect_feature = match &config.explain.effect_feature {
        Some(f) => {
            if !selected.contains(f) && find_feature_series(&blocks, f).is_none() {
                return Err(Error::Config(format!("effect feature {f} does not exist")));
            }
            Some(f.clone())
        }
        None => selection
            .families
            .iter()
            .flat_map(|f| f.outcomes.iter())
            .filter(|o| o.selected)
            .filter_map(|o| o.p_forward.map(|p| (o.feature.clone(), p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("p-values are finite"))
            .map(|(f, _)| f),
    };
    let mut effect_mean = None;
    let mut effect = None;
    match &effect_feature {
        None => {
            notes.push("no selected feature; effect estimation skipped".to_string());
            lines.push("effect estimation skipped: nothing selected".to_string());
        }
        Some(feature) => {
            let Some((block, _)) = find_feature_series(&blocks, feature) else {
                return Err(Error::Config(format!("effect feature {feature} does not exist")));
            };
            let spec = FeatureSetSpec {
                demand_lags: true,
                calendar: true,
                temperature: true,
                families: vec![block.key],
            };
            let only: BTreeSet<String> = [feature.clone()].into_iter().collect();
            let effect_design = build_design(&aligned, &blocks, &spec, Some(&only))?;
            if effect_design.feature_names.last().map(String::as_str) != Some(feature.as_str()) {
                return Err(Error::Numerical(format!(
                    "treatment column for {feature} missing from the design"
                )));
            }
            let p = effect_design.x.ncols();
            let confounders = effect_design.x.columns(0, p - 1).into_owned();
            let treatment: Vec<f64> = (0..effect_design.n_rows())
                .map(|i| effect_design.x[(i, p - 1)])
                .collect();
            let nuisance = ExtraTreesConfig {
                n_trees: config.explain.nuisance_trees,
                k: config
                    .explain
                    .nuisance_k
                    .unwrap_or_else(|| (((p - 1) as f64).sqrt().round() as usize).max(1)),
                min_split: config.explain.nuisance_min_split.max(2),
                seed: 0,
            };
            let daily_mean: Vec<f64> = (0..effect_design.n_rows())
                .map(|i| {
                    (0..effect_design.y.ncols()).map(|j| effect_design.y[(i, j)]).sum::<f64>()
                        / effect_design.y.ncols() as f64
                })
                .collect();
            let mean_config = DoubleMlConfig {
                nuisance,
                cross_fit: config.explain.cross_fit,
                seed: derive_seed(config.seed, STREAM_EFFECT_MEAN),
            };
            let mean_result = double_ml(&confounders, &treatment, &daily_mean, &mean_config)?;
            lines.push(format!(
                "effect of {feature} on daily mean demand: {:.1} (se {:.1}, p {:.4})",
                mean_result.tau, mean_result.std_error, mean_result.p_value
            ));
            effect_mean = Some(mean_result);

            let profile_config = DoubleMlConfig {
                nuisance,
                cross_fit: config.explain.cross_fit,
                seed: derive_seed(config.seed, STREAM_EFFECT),
            };
            let profile =
                effect_profile(feature, &confounders, &treatment, &effect_design.y, &profile_config)?;
            let mut csv = stamp_line(&stamp);
            csv.push_str("slot,tau,p_value,retained,plotted_tau\n");
            for e in &profile.entries {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    e.slot, e.tau, e.p_value, e.retained, e.plotted_tau
                );
            }
            write_text(
                &config.out_path(&format!("explain/effect_{}.csv", sanitize(feature))),
                &csv,
            )?;
            lines.push(format!(
                "effect profile of {feature}: {} of {} slots retained",
                profile.retained.len(),
                profile.entries.len()
            ));
            effect = Some(profile);
        }
    }

    let artifact = ExplainArtifact {
        model: model_name,
        pearson,
        lime: lime_reports,
        effect_feature,
        effect_mean,
        effect,
        notes,
    };
    save_json(&stamp, &artifact, &config.out_path(REL_EXPLAIN))?;
    Ok(lines)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn fmt_metric(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.1e}")
    } else {
        format!("{p:.3}")
    }
}

/// Assembles the single summary document: data inventory, feature counts
/// before and after screening, benchmark and battery metrics, the pairwise
/// comparison matrix, error decompositions and explanation highlights.
pub fn stage_report(config: &PipelineConfig) -> Result<Vec<String>> {
    let stamp = config.stamp();
    let features = load_features(config, &stamp)?;
    let selection = load_selection(config, &stamp)?;
    let evaluation: EvaluationArtifact =
        load_json(&config.out_path(REL_EVALUATION), "evaluate", &stamp)?;
    let explain: Option<ExplainArtifact> =
        match load_json(&config.out_path(REL_EXPLAIN), "explain", &stamp) {
            Ok(a) => Some(a),
            Err(Error::MissingArtifact(_)) => None,
            Err(e) => return Err(e),
        };

    let mut md = String::new();
    let _ = writeln!(md, "# Day-ahead demand forecasting report\n");
    let _ = writeln!(
        md,
        "Window {} to {}, test from {}. Seed {}. Config {}.\n",
        config.window.start, config.window.end, config.window.split, stamp.seed, stamp.config_sha256
    );

    let _ = writeln!(md, "## Data\n");
    let _ = writeln!(
        md,
        "- {} aligned days ({} without articles)",
        features.align.aligned_days, features.align.zero_article_days
    );
    let _ = writeln!(
        md,
        "- {} corpus records accepted, {} skipped for bad dates, {} outside the window",
        features.ingest.accepted,
        features.ingest.skipped_bad_date,
        features.ingest.skipped_out_of_window
    );
    let _ = writeln!(
        md,
        "- {} days dropped for missing temperature, {} demand gaps\n",
        features.align.dropped_missing_temperature.len(),
        features.align.gaps.len()
    );

    let _ = writeln!(md, "## Feature inventory\n");
    let _ = writeln!(md, "| family | features | selected |");
    let _ = writeln!(md, "|---|---|---|");
    for fam in &selection.families {
        let _ = writeln!(md, "| {} | {} | {} |", fam.id, fam.before, fam.after);
    }
    let total_before: usize = selection.families.iter().map(|f| f.before).sum();
    let _ = writeln!(
        md,
        "\nScreening kept {} of {} features.\n",
        selection.selected.len(),
        total_before
    );

    let metric_row = |md: &mut String, row: &ModelEvaluation| {
        let cells = match &row.metrics {
            Some(m) => format!(
                "{} | {} | {:.3} | {}",
                fmt_metric(m.rmse),
                fmt_metric(m.mae),
                m.smape,
                row.n_days
            ),
            None => format!(
                "- | - | - | {} ({})",
                row.n_days,
                row.note.as_deref().unwrap_or("no metrics")
            ),
        };
        let _ = writeln!(md, "| {} | {} | {} |", row.name, row.spec_label, cells);
    };

    let _ = writeln!(md, "## Benchmark models\n");
    let _ = writeln!(md, "| model | features | rmse | mae | smape | days |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for name in BENCHMARKS.iter().map(|(n, _, _, _)| *n).chain([PERSISTENCE]) {
        if let Some(row) = evaluation.models.iter().find(|m| m.name == name) {
            metric_row(&mut md, row);
        }
    }
    let _ = writeln!(md);

    let _ = writeln!(md, "## Text-augmented models\n");
    let benchmark_rmse = evaluation
        .models
        .iter()
        .find(|m| m.name == evaluation.benchmark)
        .and_then(|m| m.metrics.as_ref())
        .map(|m| m.rmse);
    let _ = writeln!(md, "| model | features | rmse | mae | smape | days | vs {} |", evaluation.benchmark);
    let _ = writeln!(md, "|---|---|---|---|---|---|---|");
    for row in evaluation.models.iter().filter(|m| m.name.starts_with('M')) {
        let delta = match (&row.metrics, benchmark_rmse) {
            (Some(m), Some(b)) if b > 0.0 => {
                let gain = 100.0 * (b - m.rmse) / b;
                let p = evaluation
                    .dm
                    .iter()
                    .find(|c| c.a == row.name && c.b == evaluation.benchmark)
                    .and_then(|c| c.p_value);
                match p {
                    Some(p) => format!("{gain:+.2}% (p {})", fmt_p(p)),
                    None => format!("{gain:+.2}%"),
                }
            }
            _ => "-".to_string(),
        };
        let cells = match &row.metrics {
            Some(m) => format!(
                "{} | {} | {:.3} | {}",
                fmt_metric(m.rmse),
                fmt_metric(m.mae),
                m.smape,
                row.n_days
            ),
            None => format!(
                "- | - | - | {} ({})",
                row.n_days,
                row.note.as_deref().unwrap_or("skipped")
            ),
        };
        let _ = writeln!(md, "| {} | {} | {} | {} |", row.name, row.spec_label, cells, delta);
    }
    if let Some(best) = &evaluation.best_text {
        let _ = writeln!(md, "\nBest text model: {best}.");
    }
    let _ = writeln!(md);

    let _ = writeln!(md, "## Forecast comparison\n");
    let _ = writeln!(
        md,
        "One-sided p-values that the row model forecast better than the column model.\n"
    );
    let evaluated: Vec<&ModelEvaluation> =
        evaluation.models.iter().filter(|m| m.metrics.is_some()).collect();
    let _ = write!(md, "| |");
    for col in &evaluated {
        let _ = write!(md, " {} |", col.name);
    }
    let _ = writeln!(md);
    let _ = write!(md, "|---|");
    for _ in &evaluated {
        let _ = write!(md, "---|");
    }
    let _ = writeln!(md);
    for row in &evaluated {
        let _ = write!(md, "| {} |", row.name);
        for col in &evaluated {
            if row.name == col.name {
                let _ = write!(md, " - |");
                continue;
            }
            let cell = evaluation
                .dm
                .iter()
                .find(|c| c.a == row.name && c.b == col.name)
                .and_then(|c| c.p_value);
            match cell {
                Some(p) => {
                    let _ = write!(md, " {} |", fmt_p(p));
                }
                None => {
                    let _ = write!(md, " NA |");
                }
            }
        }
        let _ = writeln!(md);
    }
    let _ = writeln!(md);

    let _ = writeln!(md, "## Error decomposition\n");
    let mut picks = vec![evaluation.benchmark.clone()];
    if let Some(best) = &evaluation.best_text {
        picks.push(best.clone());
    }
    for name in picks {
        let Some(dec) = evaluation.decompositions.get(&name) else { continue };
        let _ = writeln!(md, "### {name}\n");
        let _ = writeln!(md, "| hour | rmse | mae | smape |");
        let _ = writeln!(md, "|---|---|---|---|");
        for hour in &dec.by_hour {
            let _ = writeln!(
                md,
                "| {:02} | {} | {} | {:.3} |",
                hour.hour,
                fmt_metric(hour.rmse),
                fmt_metric(hour.mae),
                hour.smape
            );
        }
        let _ = writeln!(md);
        let _ = writeln!(md, "| day type | rmse | mae | smape | days |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for day in &dec.by_day_type {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.3} | {} |",
                day.day_type,
                fmt_metric(day.rmse),
                fmt_metric(day.mae),
                day.smape,
                day.n_days
            );
        }
        let _ = writeln!(md);
    }

    if let Some(explain) = &explain {
        let _ = writeln!(md, "## Explanations\n");
        let _ = writeln!(md, "Explained model: {}.\n", explain.model);
        if let Some(report) = explain.lime.first() {
            let date = report
                .instance_date
                .map(|d| d.to_string())
                .unwrap_or_else(|| "instance".to_string());
            let _ = writeln!(
                md,
                "Top local surrogate coefficients on {date} (r2 {:.3}):\n",
                report.r_squared
            );
            let _ = writeln!(md, "| feature | coefficient |");
            let _ = writeln!(md, "|---|---|");
            let mut order: Vec<usize> = (0..report.coefficients.len()).collect();
            order.sort_by(|&a, &b| {
                report.coefficients[b]
                    .1
                    .abs()
                    .partial_cmp(&report.coefficients[a].1.abs())
                    .expect("finite coefficients")
                    .then(a.cmp(&b))
            });
            for i in order.into_iter().take(10) {
                let (name, coef) = &report.coefficients[i];
                let _ = writeln!(md, "| {name} | {coef:.4} |");
            }
            let _ = writeln!(md);
        }
        if let (Some(feature), Some(mean)) = (&explain.effect_feature, &explain.effect_mean) {
            let _ = writeln!(
                md,
                "Estimated effect of {feature} on daily mean demand: {:.1} (se {:.1}, p {}).",
                mean.tau,
                mean.std_error,
                fmt_p(mean.p_value)
            );
        }
        if let Some(profile) = &explain.effect {
            let _ = writeln!(
                md,
                "Per-slot profile retains {} of {} half-hours.",
                profile.retained.len(),
                profile.entries.len()
            );
        }
        for note in &explain.notes {
            let _ = writeln!(md, "- {note}");
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "---");
    let _ = writeln!(md, "config_sha256={} seed={}", stamp.config_sha256, stamp.seed);
    write_text(&config.out_path(REL_REPORT), &md)?;
    Ok(vec![format!("wrote {}", config.out_path(REL_REPORT).display())])
}
