//! Daily numerical features derived from the news corpus.
//!
//! Five families are produced per text type (title, description, body):
//!
//! * `cf` — corpus counts: word/sentence/article totals plus section shares
//! * `wf` — per-word relative frequencies over a training-period vocabulary
//! * `se` — sentiment histogram and summary statistics (exactly 18 values)
//! * `td` — topic distributions (built in [`crate::topics`])
//! * `gwe` — mean pre-trained word-embedding vectors
//!
//! Every family yields one row per aligned day. Zero-article days produce the
//! family's documented default (zeros or a uniform distribution) together
//! with a `missing` flag, so downstream consumers never have to guess.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AlignedDataset, NewsItem, SECTIONS};
use crate::textprep::{self, Stopwords};

const DEFAULT_LEXICON: &str = include_str!("data/lexicon.csv");
const DEFAULT_MODIFIERS: &str = include_str!("data/modifiers.csv");

/// Which text field of an article a feature family reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TextType {
    Title,
    Description,
    Body,
}

impl TextType {
    pub const ALL: [TextType; 3] = [TextType::Title, TextType::Description, TextType::Body];

    /// Short code used in column names and model identifiers.
    pub fn code(self) -> &'static str {
        match self {
            TextType::Title => "t",
            TextType::Description => "d",
            TextType::Body => "b",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "t" | "title" => Ok(TextType::Title),
            "d" | "description" => Ok(TextType::Description),
            "b" | "body" => Ok(TextType::Body),
            other => Err(Error::Config(format!("unknown text type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureFamily {
    Count,
    WordFreq,
    Sentiment,
    Topic,
    Embedding,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 5] = [
        FeatureFamily::Count,
        FeatureFamily::WordFreq,
        FeatureFamily::Sentiment,
        FeatureFamily::Topic,
        FeatureFamily::Embedding,
    ];

    pub fn code(self) -> &'static str {
        match self {
            FeatureFamily::Count => "cf",
            FeatureFamily::WordFreq => "wf",
            FeatureFamily::Sentiment => "se",
            FeatureFamily::Topic => "td",
            FeatureFamily::Embedding => "gwe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "cf" | "count" => Ok(FeatureFamily::Count),
            "wf" | "wordfreq" => Ok(FeatureFamily::WordFreq),
            "se" | "sentiment" => Ok(FeatureFamily::Sentiment),
            "td" | "topic" | "topics" => Ok(FeatureFamily::Topic),
            "gwe" | "embedding" | "embeddings" => Ok(FeatureFamily::Embedding),
            other => Err(Error::Config(format!("unknown feature family {other:?}"))),
        }
    }
}

/// A (family, text type) pair such as `wf_t` or `se_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FamilyKey {
    pub family: FeatureFamily,
    pub text_type: TextType,
}

impl FamilyKey {
    pub fn new(family: FeatureFamily, text_type: TextType) -> Self {
        FamilyKey { family, text_type }
    }

    pub fn id(&self) -> String {
        format!("{}_{}", self.family.code(), self.text_type.code())
    }

    /// Column-name prefix, e.g. `wf.t.`.
    pub fn prefix(&self) -> String {
        format!("{}.{}.", self.family.code(), self.text_type.code())
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (fam, tt) = s
            .rsplit_once('_')
            .ok_or_else(|| Error::Config(format!("family key {s:?} must look like wf_t")))?;
        Ok(FamilyKey::new(FeatureFamily::parse(fam)?, TextType::parse(tt)?))
    }
}

impl std::fmt::Display for FamilyKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// One family's features for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyFeatureRow<'a> {
    pub date: NaiveDate,
    pub key: FamilyKey,
    pub names: &'a [String],
    pub values: &'a [f64],
    pub missing: bool,
}

/// A family's features for every aligned day, with one shared name list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub key: FamilyKey,
    /// Bare feature names; qualify with [`FamilyKey::prefix`] for export.
    pub names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `values[i]` belongs to `dates[i]` and has `names.len()` entries.
    pub values: Vec<Vec<f64>>,
    /// True where the day had no usable articles for this family.
    pub missing: Vec<bool>,
}

impl FeatureBlock {
    pub fn row(&self, i: usize) -> DailyFeatureRow<'_> {
        DailyFeatureRow {
            date: self.dates[i],
            key: self.key,
            names: &self.names,
            values: &self.values[i],
            missing: self.missing[i],
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn qualified_names(&self) -> Vec<String> {
        let p = self.key.prefix();
        self.names.iter().map(|n| format!("{p}{n}")).collect()
    }

    /// Time series of one feature by bare name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|row| row[j]).collect())
    }

    /// Structural invariants: aligned lengths, unique names, finite values.
    pub fn check(&self) -> Result<()> {
        if self.values.len() != self.dates.len() || self.missing.len() != self.dates.len() {
            return Err(Error::InvalidInput(format!(
                "feature block {} has misaligned rows",
                self.key
            )));
        }
        let unique: BTreeSet<&String> = self.names.iter().collect();
        if unique.len() != self.names.len() {
            return Err(Error::InvalidInput(format!(
                "feature block {} has duplicate names",
                self.key
            )));
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.names.len() {
                return Err(Error::InvalidInput(format!(
                    "feature block {} row {i} has {} values for {} names",
                    self.key,
                    row.len(),
                    self.names.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite value in block {} on {} feature {}",
                    self.key, self.dates[i], self.names[j]
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Count features
// ---------------------------------------------------------------------------

/// Names of the 25 count features: 7 totals/means plus 18 section shares.
pub fn count_feature_names() -> Vec<String> {
    let mut names = vec![
        "total_words".to_string(),
        "total_sentences".to_string(),
        "unique_words".to_string(),
        "nonstop_words".to_string(),
        "mean_sentences_per_article".to_string(),
        "mean_words_per_sentence".to_string(),
        "article_count".to_string(),
    ];
    names.extend(SECTIONS.iter().map(|s| format!("section_{s}")));
    names
}

/// Count features for one day's articles over one text field. Word counts use
/// the raw tokenizer output; `nonstop_words` applies normalisation.
pub fn count_features(articles: &[NewsItem], text_type: TextType, stopwords: &Stopwords) -> Vec<f64> {
    let mut total_words = 0usize;
    let mut total_sentences = 0usize;
    let mut nonstop = 0usize;
    let mut unique: BTreeSet<String> = BTreeSet::new();
    let mut section_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for art in articles {
        let prepared = textprep::prepare(art.text(text_type), stopwords);
        total_words += prepared.raw_tokens.len();
        total_sentences += prepared.sentences;
        nonstop += prepared.tokens.len();
        unique.extend(prepared.raw_tokens);
        let canon = if SECTIONS.contains(&art.section.as_str()) {
            art.section.as_str()
        } else {
            "other"
        };
        *section_counts
            .entry(SECTIONS.iter().find(|s| **s == canon).unwrap())
            .or_default() += 1;
    }
    let n_articles = articles.len();
    let mut out = vec![
        total_words as f64,
        total_sentences as f64,
        unique.len() as f64,
        nonstop as f64,
        if n_articles > 0 {
            total_sentences as f64 / n_articles as f64
        } else {
            0.0
        },
        if total_sentences > 0 {
            total_words as f64 / total_sentences as f64
        } else {
            0.0
        },
        n_articles as f64,
    ];
    for s in SECTIONS {
        let c = section_counts.get(s).copied().unwrap_or(0);
        out.push(if n_articles > 0 {
            c as f64 / n_articles as f64
        } else {
            0.0
        });
    }
    out
}

pub fn build_count_block(
    ds: &AlignedDataset,
    text_type: TextType,
    stopwords: &Stopwords,
) -> FeatureBlock {
    let names = count_feature_names();
    let mut block = FeatureBlock {
        key: FamilyKey::new(FeatureFamily::Count, text_type),
        names,
        dates: Vec::with_capacity(ds.days.len()),
        values: Vec::with_capacity(ds.days.len()),
        missing: Vec::with_capacity(ds.days.len()),
    };
    for day in &ds.days {
        block.dates.push(day.date);
        block.values.push(count_features(&day.articles, text_type, stopwords));
        block.missing.push(day.articles.is_empty());
    }
    block
}

// ---------------------------------------------------------------------------
// Word-frequency features
// ---------------------------------------------------------------------------

/// Builds the vocabulary of words whose total frequency in `token_stream`
/// strictly exceeds `threshold`, ordered by descending frequency with
/// lexicographic tie-breaks.
pub fn build_vocabulary<'a, I>(token_stream: I, threshold: u64) -> Result<Vec<String>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in token_stream {
        *counts.entry(tok).or_default() += 1;
    }
    let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|(_, c)| *c > threshold).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if kept.is_empty() {
        return Err(Error::InvalidInput(format!(
            "vocabulary is empty at frequency threshold {threshold}"
        )));
    }
    Ok(kept.into_iter().map(|(w, _)| w.to_string()).collect())
}

/// Vocabulary over the normalised tokens of the aligned days up to and
/// including `train_end` (later days never influence it).
pub fn build_vocabulary_from_dataset(
    ds: &AlignedDataset,
    text_type: TextType,
    stopwords: &Stopwords,
    train_end: NaiveDate,
    threshold: u64,
) -> Result<Vec<String>> {
    let mut tokens: Vec<String> = Vec::new();
    for day in ds.days.iter().filter(|d| d.date <= train_end) {
        for art in &day.articles {
            let prepared = textprep::prepare(art.text(text_type), stopwords);
            tokens.extend(prepared.tokens);
        }
    }
    build_vocabulary(tokens.iter().map(|s| s.as_str()), threshold)
}

/// Relative frequency of each vocabulary word among one day's normalised
/// tokens (raw counts instead when `normalized` is false).
pub fn word_frequency_features(day_tokens: &[String], vocab: &[String], normalized: bool) -> Vec<f64> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in day_tokens {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    let total = day_tokens.len() as f64;
    vocab
        .iter()
        .map(|w| {
            let c = counts.get(w.as_str()).copied().unwrap_or(0) as f64;
            if normalized {
                if total > 0.0 {
                    c / total
                } else {
                    0.0
                }
            } else {
                c
            }
        })
        .collect()
}

pub fn build_wordfreq_block(
    ds: &AlignedDataset,
    text_type: TextType,
    stopwords: &Stopwords,
    vocab: &[String],
    normalized: bool,
) -> FeatureBlock {
    let mut block = FeatureBlock {
        key: FamilyKey::new(FeatureFamily::WordFreq, text_type),
        names: vocab.to_vec(),
        dates: Vec::with_capacity(ds.days.len()),
        values: Vec::with_capacity(ds.days.len()),
        missing: Vec::with_capacity(ds.days.len()),
    };
    for day in &ds.days {
        let mut tokens = Vec::new();
        for art in &day.articles {
            tokens.extend(textprep::prepare(art.text(text_type), stopwords).tokens);
        }
        block.dates.push(day.date);
        block.values.push(word_frequency_features(&tokens, vocab, normalized));
        block.missing.push(day.articles.is_empty());
    }
    block
}

// ---------------------------------------------------------------------------
// Sentiment features
// ---------------------------------------------------------------------------

/// Word polarity/subjectivity lexicon plus intensity modifiers.
#[derive(Debug, Clone)]
pub struct SentimentLexicon {
    words: BTreeMap<String, (f64, f64)>,
    modifiers: BTreeMap<String, f64>,
}

impl SentimentLexicon {
    /// The embedded default lexicon (a few hundred curated words).
    pub fn default_english() -> Self {
        Self::parse(DEFAULT_LEXICON, Some(DEFAULT_MODIFIERS), "<embedded>")
            .expect("embedded lexicon is valid")
    }

    pub fn from_files(lexicon_path: &str, modifiers_path: Option<&str>) -> Result<Self> {
        let lex = fs::read_to_string(lexicon_path).map_err(|e| Error::io(lexicon_path, e))?;
        let modifiers = match modifiers_path {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::parse(&lex, modifiers.as_deref(), lexicon_path)
    }

    fn parse(lexicon_csv: &str, modifiers_csv: Option<&str>, origin: &str) -> Result<Self> {
        let mut words = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().from_reader(lexicon_csv.as_bytes());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(origin, i + 2, e.to_string()))?;
            let word = rec.get(0).unwrap_or("").trim().to_lowercase();
            let pol: f64 = rec
                .get(1)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::parse(origin, i + 2, format!("bad polarity: {e}")))?;
            let subj: f64 = rec
                .get(2)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::parse(origin, i + 2, format!("bad subjectivity: {e}")))?;
            if !(-1.0..=1.0).contains(&pol) {
                return Err(Error::InvalidInput(format!(
                    "polarity {pol} for {word:?} outside [-1, 1]"
                )));
            }
            if !(0.0..=1.0).contains(&subj) {
                return Err(Error::InvalidInput(format!(
                    "subjectivity {subj} for {word:?} outside [0, 1]"
                )));
            }
            words.insert(word, (pol, subj));
        }
        if words.is_empty() {
            return Err(Error::InvalidInput(format!("empty sentiment lexicon {origin}")));
        }
        let mut modifiers = BTreeMap::new();
        if let Some(csv_text) = modifiers_csv {
            let mut rdr = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| Error::parse(origin, i + 2, e.to_string()))?;
                let word = rec.get(0).unwrap_or("").trim().to_lowercase();
                let intensity: f64 = rec
                    .get(1)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(origin, i + 2, format!("bad intensity: {e}")))?;
                if intensity <= 0.0 || !intensity.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "intensity {intensity} for modifier {word:?} must be positive"
                    )));
                }
                if words.contains_key(&word) {
                    return Err(Error::InvalidInput(format!(
                        "modifier {word:?} also appears as a scored word"
                    )));
                }
                modifiers.insert(word, intensity);
            }
        }
        Ok(SentimentLexicon { words, modifiers })
    }

    pub fn polarity(&self, word: &str) -> Option<(f64, f64)> {
        self.words.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentimentScore {
    pub polarity: f64,
    pub subjectivity: f64,
    /// Number of lexicon hits; 0 marks a neutral default score.
    pub scored_words: usize,
}

impl SentimentScore {
    pub fn is_neutral_default(&self) -> bool {
        self.scored_words == 0
    }
}

/// Scores one article's token list.
///
/// A modifier multiplies the polarity of the *next* scored word; chained
/// modifiers multiply together and any other intervening word cancels the
/// pending intensity. Per-word polarities are clamped to [-1, 1] before
/// averaging, so the mean stays in range. Zero lexicon hits yield (0, 0).
pub fn sentiment_scores(tokens: &[String], lexicon: &SentimentLexicon) -> SentimentScore {
    let mut pol_sum = 0.0;
    let mut subj_sum = 0.0;
    let mut hits = 0usize;
    let mut pending = 1.0f64;
    for tok in tokens {
        if let Some(&intensity) = lexicon.modifiers.get(tok.as_str()) {
            pending *= intensity;
            continue;
        }
        if let Some((pol, subj)) = lexicon.polarity(tok) {
            pol_sum += (pol * pending).clamp(-1.0, 1.0);
            subj_sum += subj;
            hits += 1;
        }
        pending = 1.0;
    }
    if hits == 0 {
        SentimentScore {
            polarity: 0.0,
            subjectivity: 0.0,
            scored_words: 0,
        }
    } else {
        SentimentScore {
            polarity: pol_sum / hits as f64,
            subjectivity: subj_sum / hits as f64,
            scored_words: hits,
        }
    }
}

/// Names of the 18 sentiment features: two 5-bin histograms plus
/// max/min/mean/std of each score.
pub fn sentiment_feature_names() -> Vec<String> {
    let mut names: Vec<String> = (1..=5).map(|i| format!("pol_bin_{i}")).collect();
    names.extend((1..=5).map(|i| format!("subj_bin_{i}")));
    for stat in ["max", "min", "mean", "std"] {
        names.push(format!("pol_{stat}"));
    }
    for stat in ["max", "min", "mean", "std"] {
        names.push(format!("subj_{stat}"));
    }
    names
}

fn histogram5(values: &[f64]) -> [f64; 5] {
    let mut bins = [0.0f64; 5];
    for &v in values {
        let idx = ((v * 5.0).floor() as usize).min(4);
        bins[idx] += 1.0;
    }
    let n = values.len() as f64;
    if n > 0.0 {
        for b in &mut bins {
            *b /= n;
        }
    }
    bins
}

fn summary4(values: &[f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    [max, min, crate::stats::mean(values), crate::stats::std_dev(values)]
}

/// The per-day 18-feature sentiment row over one text field. Every article
/// contributes one score (articles without lexicon hits contribute the
/// neutral default); polarity is mapped to [0, 1] via (p+1)/2 before binning.
pub fn sentiment_features(
    articles: &[NewsItem],
    text_type: TextType,
    lexicon: &SentimentLexicon,
) -> Vec<f64> {
    let scores: Vec<SentimentScore> = articles
        .iter()
        .map(|a| {
            let (tokens, _) = textprep::tokenize(a.text(text_type));
            sentiment_scores(&tokens, lexicon)
        })
        .collect();
    let pols: Vec<f64> = scores.iter().map(|s| s.polarity).collect();
    let subjs: Vec<f64> = scores.iter().map(|s| s.subjectivity).collect();
    let pol_unit: Vec<f64> = pols.iter().map(|p| (p + 1.0) / 2.0).collect();

    let mut out = Vec::with_capacity(18);
    out.extend(histogram5(&pol_unit));
    out.extend(histogram5(&subjs));
    out.extend(summary4(&pols));
    out.extend(summary4(&subjs));
    out
}

pub fn build_sentiment_block(
    ds: &AlignedDataset,
    text_type: TextType,
    lexicon: &SentimentLexicon,
) -> FeatureBlock {
    let mut block = FeatureBlock {
        key: FamilyKey::new(FeatureFamily::Sentiment, text_type),
        names: sentiment_feature_names(),
        dates: Vec::with_capacity(ds.days.len()),
        values: Vec::with_capacity(ds.days.len()),
        missing: Vec::with_capacity(ds.days.len()),
    };
    for day in &ds.days {
        block.dates.push(day.date);
        block.values.push(sentiment_features(&day.articles, text_type, lexicon));
        block.missing.push(day.articles.is_empty());
    }
    block
}

// ---------------------------------------------------------------------------
// Embedding features
// ---------------------------------------------------------------------------

/// Pre-trained word vectors loaded from the text format
/// `word v1 v2 ... vD`, one word per line, constant dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_file(path: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut dim = 0usize;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| Error::parse(origin, i + 1, "empty line"))?
                .to_lowercase();
            let vec: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, i + 1, format!("bad vector component: {e}")))?;
            if vec.is_empty() {
                return Err(Error::parse(origin, i + 1, "no vector components"));
            }
            if dim == 0 {
                dim = vec.len();
            } else if vec.len() != dim {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("dimension {} does not match table dimension {dim}", vec.len()),
                ));
            }
            vectors.insert(word, vec);
        }
        if vectors.is_empty() {
            return Err(Error::InvalidInput(format!("empty embedding table {origin}")));
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Mean vector of an article's in-vocabulary tokens; None when no token is
/// covered by the table.
pub fn article_embedding(tokens: &[String], table: &EmbeddingTable) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for tok in tokens {
        if let Some(v) = table.get(tok) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    for s in &mut sum {
        *s /= n as f64;
    }
    Some(sum)
}

/// Day vector = mean over articles of the article vectors; articles without
/// any in-vocabulary token are excluded. Returns (vector, missing).
pub fn embedding_features(
    articles: &[NewsItem],
    text_type: TextType,
    table: &EmbeddingTable,
) -> (Vec<f64>, bool) {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for art in articles {
        let (tokens, _) = textprep::tokenize(art.text(text_type));
        if let Some(v) = article_embedding(&tokens, table) {
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return (vec![0.0; table.dim()], true);
    }
    for s in &mut sum {
        *s /= n as f64;
    }
    (sum, false)
}

pub fn build_embedding_block(
    ds: &AlignedDataset,
    text_type: TextType,
    table: &EmbeddingTable,
) -> FeatureBlock {
    let names = (0..table.dim()).map(|i| format!("dim_{i}")).collect();
    let mut block = FeatureBlock {
        key: FamilyKey::new(FeatureFamily::Embedding, text_type),
        names,
        dates: Vec::with_capacity(ds.days.len()),
        values: Vec::with_capacity(ds.days.len()),
        missing: Vec::with_capacity(ds.days.len()),
    };
    for day in &ds.days {
        let (vec, missing) = embedding_features(&day.articles, text_type, table);
        block.dates.push(day.date);
        block.values.push(vec);
        block.missing.push(missing);
    }
    block
}
