//! Latent topic features via latent Dirichlet allocation, fitted with a
//! collapsed Gibbs sampler.
//!
//! The sampler keeps the four count matrices (doc-topic, topic-word, doc
//! totals, topic totals) and resamples every token assignment per sweep.
//! Topic-word and doc-topic distributions are the Dirichlet-smoothed
//! estimates averaged over post-burn-in sweeps. Inference on new documents
//! holds the topic-word distributions fixed and resamples only the document's
//! assignments. All sampling is driven by an explicit seed.

use std::collections::HashMap;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FamilyKey, FeatureBlock, FeatureFamily, TextType};
use crate::ingest::AlignedDataset;
use crate::stats::derive_seed;
use crate::textprep::{self, Stopwords};

/// Artifact schema version written by [`LdaModel::save`].
const MODEL_VERSION: u32 = 1;

/// Sweeps used when folding in a new document.
const INFER_SWEEPS: usize = 100;
const INFER_BURN_IN: usize = 50;

/// Top words per topic entering the coherence score.
const COHERENCE_TOP_WORDS: usize = 10;

/// Smoothing for co-occurrence counts in the coherence score. Kept well
/// below 1 so that top-word pairs that never share a document are penalised
/// even when both words are rare.
const COHERENCE_EPS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior; defaults to 50 / topics.
    pub alpha: Option<f64>,
    /// Symmetric topic-word prior.
    pub beta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(topics: usize) -> Self {
        LdaConfig {
            topics,
            alpha: None,
            beta: 0.01,
            sweeps: 1000,
            burn_in: 500,
            seed: 0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_sweeps(mut self, sweeps: usize) -> Self {
        self.sweeps = sweeps;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_topics(mut self, topics: usize) -> Self {
        self.topics = topics;
        self
    }

    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }

    fn validate(&self, n_docs: usize) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::Config("topic count must be at least 1".into()));
        }
        if self.topics > n_docs {
            return Err(Error::Config(format!(
                "topic count {} exceeds document count {n_docs}",
                self.topics
            )));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than sweep count {}",
                self.burn_in, self.sweeps
            )));
        }
        if self.effective_alpha() <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("Dirichlet priors must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted topic model. `phi[k][v]` is the probability of vocabulary word `v`
/// under topic `k`; rows sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub version: u32,
    pub vocab: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Fit output: the persistable model plus training-document distributions
/// and the final token-topic assignments (used for diagnostics).
#[derive(Debug, Clone)]
pub struct LdaFit {
    pub model: LdaModel,
    /// `theta[d][k]`, rows sum to 1.
    pub theta: Vec<Vec<f64>>,
    /// Final topic assignment per token, parallel to the input documents.
    pub assignments: Vec<Vec<usize>>,
}

struct GibbsState {
    ndk: Vec<usize>, // D x K
    nkv: Vec<usize>, // K x V
    nd: Vec<usize>,
    nk: Vec<usize>,
    z: Vec<Vec<usize>>,
    k: usize,
    v: usize,
}

impl GibbsState {
    fn new(docs: &[Vec<usize>], k: usize, v: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = docs.len();
        let mut state = GibbsState {
            ndk: vec![0; d * k],
            nkv: vec![0; k * v],
            nd: vec![0; d],
            nk: vec![0; k],
            z: Vec::with_capacity(d),
            k,
            v,
        };
        for (di, doc) in docs.iter().enumerate() {
            let mut zs = Vec::with_capacity(doc.len());
            for &word in doc {
                let topic = rng.gen_range(0..k);
                state.ndk[di * k + topic] += 1;
                state.nkv[topic * v + word] += 1;
                state.nd[di] += 1;
                state.nk[topic] += 1;
                zs.push(topic);
            }
            state.z.push(zs);
        }
        state
    }

    #[inline]
    fn decrement(&mut self, d: usize, word: usize, topic: usize) {
        self.ndk[d * self.k + topic] -= 1;
        self.nkv[topic * self.v + word] -= 1;
        self.nd[d] -= 1;
        self.nk[topic] -= 1;
    }

    #[inline]
    fn increment(&mut self, d: usize, word: usize, topic: usize) {
        self.ndk[d * self.k + topic] += 1;
        self.nkv[topic * self.v + word] += 1;
        self.nd[d] += 1;
        self.nk[topic] += 1;
    }
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Fits an LDA model on tokenised documents by collapsed Gibbs sampling.
pub fn fit_lda(docs: &[Vec<String>], config: &LdaConfig) -> Result<LdaFit> {
    config.validate(docs.len())?;
    let mut vocab: Vec<String> = {
        let mut set: Vec<&String> = docs.iter().flatten().collect();
        set.sort();
        set.dedup();
        set.into_iter().cloned().collect()
    };
    vocab.sort();
    if vocab.is_empty() {
        return Err(Error::InvalidInput("topic corpus has no tokens".into()));
    }
    let word_index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let indexed: Vec<Vec<usize>> = docs
        .iter()
        .map(|doc| doc.iter().map(|w| word_index[w.as_str()]).collect())
        .collect();

    let k = config.topics;
    let v = vocab.len();
    let alpha = config.effective_alpha();
    let beta = config.beta;
    let vbeta = v as f64 * beta;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = GibbsState::new(&indexed, k, v, &mut rng);

    let mut phi_acc = vec![0.0f64; k * v];
    let mut theta_acc = vec![0.0f64; docs.len() * k];
    let mut samples = 0usize;
    let mut weights = vec![0.0f64; k];

    for sweep in 0..config.sweeps {
        for (d, doc) in indexed.iter().enumerate() {
            for (i, &word) in doc.iter().enumerate() {
                let old = state.z[d][i];
                state.decrement(d, word, old);
                for t in 0..k {
                    weights[t] = (state.ndk[d * k + t] as f64 + alpha)
                        * (state.nkv[t * v + word] as f64 + beta)
                        / (state.nk[t] as f64 + vbeta);
                }
                let new = sample_index(&weights, &mut rng);
                state.z[d][i] = new;
                state.increment(d, word, new);
            }
        }
        if sweep >= config.burn_in {
            samples += 1;
            for t in 0..k {
                let denom = state.nk[t] as f64 + vbeta;
                for w in 0..v {
                    phi_acc[t * v + w] += (state.nkv[t * v + w] as f64 + beta) / denom;
                }
            }
            let kalpha = k as f64 * alpha;
            for d in 0..docs.len() {
                let denom = state.nd[d] as f64 + kalpha;
                for t in 0..k {
                    theta_acc[d * k + t] += (state.ndk[d * k + t] as f64 + alpha) / denom;
                }
            }
        }
    }

    let phi: Vec<Vec<f64>> = (0..k)
        .map(|t| (0..v).map(|w| phi_acc[t * v + w] / samples as f64).collect())
        .collect();
    let theta: Vec<Vec<f64>> = (0..docs.len())
        .map(|d| (0..k).map(|t| theta_acc[d * k + t] / samples as f64).collect())
        .collect();

    Ok(LdaFit {
        model: LdaModel {
            version: MODEL_VERSION,
            vocab,
            phi,
            topics: k,
            alpha,
            beta,
            sweeps: config.sweeps,
            burn_in: config.burn_in,
            seed: config.seed,
        },
        theta,
        assignments: state.z,
    })
}

impl LdaModel {
    pub fn save(&self, path: &str) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Numerical(format!("serialize topic model: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LdaModel =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        if model.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "topic model {path} has version {}, expected {MODEL_VERSION}",
                model.version
            )));
        }
        Ok(model)
    }

    fn word_index(&self) -> HashMap<&str, usize> {
        self.vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect()
    }
}

/// Folds a new document into a fitted model: samples assignments with the
/// topic-word distributions held fixed and returns the averaged post-burn-in
/// topic distribution. Returns `(distribution, oov)` where `oov` is true for
/// a document with no in-vocabulary tokens (uniform distribution).
pub fn infer_doc_topics(model: &LdaModel, tokens: &[String], seed: u64) -> (Vec<f64>, bool) {
    let k = model.topics;
    let index = model.word_index();
    let words: Vec<usize> = tokens.iter().filter_map(|t| index.get(t.as_str()).copied()).collect();
    if words.is_empty() {
        return (vec![1.0 / k as f64; k], true);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ndk = vec![0usize; k];
    let mut z: Vec<usize> = Vec::with_capacity(words.len());
    for _ in &words {
        let t = rng.gen_range(0..k);
        ndk[t] += 1;
        z.push(t);
    }

    let alpha = model.alpha;
    let kalpha = k as f64 * alpha;
    let n = words.len() as f64;
    let mut weights = vec![0.0f64; k];
    let mut acc = vec![0.0f64; k];
    let mut samples = 0usize;
    for sweep in 0..INFER_SWEEPS {
        for (i, &word) in words.iter().enumerate() {
            let old = z[i];
            ndk[old] -= 1;
            for t in 0..k {
                weights[t] = (ndk[t] as f64 + alpha) * model.phi[t][word];
            }
            let new = sample_index(&weights, &mut rng);
            z[i] = new;
            ndk[new] += 1;
        }
        if sweep >= INFER_BURN_IN {
            samples += 1;
            for t in 0..k {
                acc[t] += (ndk[t] as f64 + alpha) / (n + kalpha);
            }
        }
    }
    let dist: Vec<f64> = acc.iter().map(|a| a / samples as f64).collect();
    (dist, false)
}

/// Per-day topic features: the mean of the per-article inferred
/// distributions. Zero-article days yield the uniform distribution and a
/// missing flag. Article-level seeds derive from `seed`, the day ordinal and
/// the article position, so rebuilding is deterministic.
pub fn daily_topic_features(
    model: &LdaModel,
    articles_tokens: &[Vec<String>],
    seed: u64,
) -> (Vec<f64>, bool) {
    let k = model.topics;
    if articles_tokens.is_empty() {
        return (vec![1.0 / k as f64; k], true);
    }
    let mut mean = vec![0.0f64; k];
    for (i, tokens) in articles_tokens.iter().enumerate() {
        let (dist, _) = infer_doc_topics(model, tokens, derive_seed(seed, i as u64));
        for (m, d) in mean.iter_mut().zip(&dist) {
            *m += d;
        }
    }
    for m in &mut mean {
        *m /= articles_tokens.len() as f64;
    }
    (mean, false)
}

/// One normalised-token document per article of the requested text type,
/// restricted to days up to `train_end` when given.
pub fn docs_from_dataset(
    ds: &AlignedDataset,
    text_type: TextType,
    stopwords: &Stopwords,
    train_end: Option<chrono::NaiveDate>,
) -> Vec<Vec<String>> {
    let mut docs = Vec::new();
    for day in &ds.days {
        if let Some(end) = train_end {
            if day.date > end {
                continue;
            }
        }
        for art in &day.articles {
            docs.push(textprep::prepare(art.text(text_type), stopwords).tokens);
        }
    }
    docs
}

pub fn build_topic_block(
    ds: &AlignedDataset,
    text_type: TextType,
    model: &LdaModel,
    stopwords: &Stopwords,
    seed: u64,
) -> FeatureBlock {
    let names = (0..model.topics).map(|t| format!("topic_{t}")).collect();
    let mut block = FeatureBlock {
        key: FamilyKey::new(FeatureFamily::Topic, text_type),
        names,
        dates: Vec::with_capacity(ds.days.len()),
        values: Vec::with_capacity(ds.days.len()),
        missing: Vec::with_capacity(ds.days.len()),
    };
    for (day_idx, day) in ds.days.iter().enumerate() {
        let tokens: Vec<Vec<String>> = day
            .articles
            .iter()
            .map(|a| textprep::prepare(a.text(text_type), stopwords).tokens)
            .collect();
        let (values, missing) = daily_topic_features(model, &tokens, derive_seed(seed, day_idx as u64));
        block.dates.push(day.date);
        block.values.push(values);
        block.missing.push(missing);
    }
    block
}

/// Mean pairwise document-co-occurrence coherence of each topic's top words,
/// averaged over topics. Higher is better.
pub fn coherence(model: &LdaModel, docs: &[Vec<String>]) -> f64 {
    let index = model.word_index();
    // Document frequency per word and per ordered pair of top words.
    let mut doc_sets: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut ids: Vec<usize> = doc.iter().filter_map(|t| index.get(t.as_str()).copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        doc_sets.push(ids);
    }
    let mut df = vec![0usize; model.vocab.len()];
    for ids in &doc_sets {
        for &w in ids {
            df[w] += 1;
        }
    }

    let mut total = 0.0;
    for phi_row in &model.phi {
        let mut order: Vec<usize> = (0..phi_row.len()).collect();
        order.sort_by(|&a, &b| phi_row[b].partial_cmp(&phi_row[a]).unwrap().then(a.cmp(&b)));
        let top: Vec<usize> = order.into_iter().take(COHERENCE_TOP_WORDS).collect();
        let mut score = 0.0;
        let mut pairs = 0usize;
        for i in 1..top.len() {
            for j in 0..i {
                let wi = top[i];
                let wj = top[j];
                let co = doc_sets
                    .iter()
                    .filter(|ids| ids.binary_search(&wi).is_ok() && ids.binary_search(&wj).is_ok())
                    .count();
                let dj = df[wj].max(1);
                score += ((co as f64 + COHERENCE_EPS) / dj as f64).ln();
                pairs += 1;
            }
        }
        if pairs > 0 {
            total += score / pairs as f64;
        }
    }
    total / model.phi.len() as f64
}

/// Fits one model per candidate topic count and returns the candidate with
/// the best coherence (ties resolve toward the smaller count), together with
/// the per-candidate scores.
pub fn select_topic_count(
    docs: &[Vec<String>],
    candidates: &[usize],
    base: &LdaConfig,
) -> Result<(usize, Vec<(usize, f64)>)> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate topic counts".into()));
    }
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(usize, f64)> = None;
    let mut scores = Vec::new();
    for &k in &sorted {
        let config = base.clone().with_topics(k);
        let fit = fit_lda(docs, &config)?;
        let c = coherence(&fit.model, docs);
        scores.push((k, c));
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    Ok((best.expect("at least one candidate").0, scores))
}

/// Total log-likelihood of held-out documents under the model, with document
/// distributions obtained by fold-in inference. Out-of-vocabulary tokens are
/// skipped.
pub fn held_out_log_likelihood(model: &LdaModel, docs: &[Vec<String>], seed: u64) -> f64 {
    let index = model.word_index();
    let mut ll = 0.0;
    for (i, doc) in docs.iter().enumerate() {
        let (theta, oov) = infer_doc_topics(model, doc, derive_seed(seed, i as u64));
        if oov {
            continue;
        }
        for tok in doc {
            if let Some(&w) = index.get(tok.as_str()) {
                let p: f64 = (0..model.topics).map(|t| theta[t] * model.phi[t][w]).sum();
                ll += p.max(1e-300).ln();
            }
        }
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:02}")).collect()
    }

    /// Two disjoint vocabulary pools; each document draws uniformly from one.
    fn two_pool_corpus(
        docs: usize,
        pool_size: usize,
        doc_len: usize,
        seed: u64,
    ) -> (Vec<Vec<String>>, Vec<usize>) {
        let pool_a = words("wa", pool_size);
        let pool_b = words("wb", pool_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(docs);
        let mut labels = Vec::with_capacity(docs);
        for d in 0..docs {
            let pool = if d % 2 == 0 { &pool_a } else { &pool_b };
            labels.push(d % 2);
            out.push((0..doc_len).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect());
        }
        (out, labels)
    }

    #[test]
    fn single_doc_single_topic_degenerates_to_empirical_distribution() {
        let docs = vec![vec!["cat".to_string(), "cat".to_string(), "dog".to_string()]];
        let config = LdaConfig::new(1).with_sweeps(10).with_burn_in(5).with_seed(1);
        let fit = fit_lda(&docs, &config).unwrap();
        assert_eq!(fit.theta, vec![vec![1.0]]);
        // phi = (count + beta) / (n + V beta): cat appears twice of three.
        let beta = 0.01;
        let expect_cat = (2.0 + beta) / (3.0 + 2.0 * beta);
        let cat_idx = fit.model.vocab.iter().position(|w| w == "cat").unwrap();
        assert!((fit.model.phi[0][cat_idx] - expect_cat).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let docs = vec![vec!["a".to_string()]];
        assert!(fit_lda(&docs, &LdaConfig::new(0)).is_err());
        assert!(fit_lda(&docs, &LdaConfig::new(2)).is_err()); // topics > docs
        let config = LdaConfig::new(1).with_sweeps(10).with_burn_in(10);
        assert!(fit_lda(&docs, &config).is_err()); // burn-in >= sweeps
        assert!(fit_lda(&[], &LdaConfig::new(1)).is_err());
    }

    #[test]
    fn default_alpha_is_fifty_over_k() {
        assert!((LdaConfig::new(25).effective_alpha() - 2.0).abs() < 1e-12);
        assert!((LdaConfig::new(25).with_alpha(0.3).effective_alpha() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rows_are_stochastic() {
        let (docs, _) = two_pool_corpus(40, 10, 15, 7);
        let config = LdaConfig::new(3).with_sweeps(60).with_burn_in(30).with_seed(7);
        let fit = fit_lda(&docs, &config).unwrap();
        for row in &fit.model.phi {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|p| *p > 0.0));
        }
        for row in &fit.theta {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn planted_two_pool_corpus_is_recovered() {
        let (docs, _) = two_pool_corpus(200, 30, 25, 11);
        let config = LdaConfig::new(2).with_sweeps(300).with_burn_in(150).with_seed(11);
        let fit = fit_lda(&docs, &config).unwrap();
        // Greedy topic-to-pool matching on final token assignments.
        let mut counts = [[0usize; 2]; 2];
        for (doc, zs) in docs.iter().zip(&fit.assignments) {
            for (tok, &z) in doc.iter().zip(zs) {
                let pool = if tok.starts_with("wa") { 0 } else { 1 };
                counts[z][pool] += 1;
            }
        }
        let matched: usize = counts.iter().map(|row| row.iter().max().unwrap()).sum();
        let total: usize = counts.iter().flatten().sum();
        let purity = matched as f64 / total as f64;
        assert!(purity >= 0.9, "purity {purity}");
    }

    #[test]
    fn fitting_is_deterministic_for_a_seed() {
        let (docs, _) = two_pool_corpus(30, 8, 10, 3);
        let config = LdaConfig::new(2).with_sweeps(40).with_burn_in(20).with_seed(5);
        let a = fit_lda(&docs, &config).unwrap();
        let b = fit_lda(&docs, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.theta, b.theta);
        let c = fit_lda(&docs, &config.clone().with_seed(6)).unwrap();
        assert_ne!(a.model.phi, c.model.phi);
    }

    #[test]
    fn inference_recovers_training_document_distribution() {
        let (docs, _) = two_pool_corpus(100, 15, 20, 13);
        let config = LdaConfig::new(2).with_sweeps(200).with_burn_in(100).with_seed(13);
        let fit = fit_lda(&docs, &config).unwrap();
        let (dist, oov) = infer_doc_topics(&fit.model, &docs[0], 99);
        assert!(!oov);
        let tv: f64 = dist
            .iter()
            .zip(&fit.theta[0])
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.1, "total variation {tv}");
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inference_on_oov_document_is_uniform_and_flagged() {
        let (docs, _) = two_pool_corpus(20, 5, 8, 17);
        let config = LdaConfig::new(2).with_sweeps(30).with_burn_in(15).with_seed(17);
        let fit = fit_lda(&docs, &config).unwrap();
        let (dist, oov) = infer_doc_topics(&fit.model, &[
            "zz".to_string(),
        ], 1);
        assert!(oov);
        assert_eq!(dist, vec![0.5, 0.5]);
    }

    #[test]
    fn daily_features_average_article_distributions() {
        let (docs, _) = two_pool_corpus(100, 15, 20, 19);
        let config = LdaConfig::new(2).with_sweeps(150).with_burn_in(75).with_seed(19);
        let fit = fit_lda(&docs, &config).unwrap();
        // One pure pool-A article and one pure pool-B article: mean near 0.5.
        let day = vec![docs[0].clone(), docs[1].clone()];
        let (mean, missing) = daily_topic_features(&fit.model, &day, 7);
        assert!(!missing);
        assert!((mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((mean[0] - 0.5).abs() < 0.1, "mean {mean:?}");

        let (uniform, missing) = daily_topic_features(&fit.model, &[], 7);
        assert!(missing);
        assert_eq!(uniform, vec![0.5, 0.5]);
    }

    #[test]
    fn model_round_trip_preserves_inference() {
        let (docs, _) = two_pool_corpus(30, 8, 10, 23);
        let config = LdaConfig::new(2).with_sweeps(40).with_burn_in(20).with_seed(23);
        let fit = fit_lda(&docs, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lda.json");
        fit.model.save(path.to_str().unwrap()).unwrap();
        let back = LdaModel::load(path.to_str().unwrap()).unwrap();
        assert_eq!(fit.model, back);
        let (a, _) = infer_doc_topics(&fit.model, &docs[0], 42);
        let (b, _) = infer_doc_topics(&back, &docs[0], 42);
        assert_eq!(a, b);
    }

    #[test]
    fn model_version_is_checked() {
        let (docs, _) = two_pool_corpus(10, 5, 6, 29);
        let config = LdaConfig::new(1).with_sweeps(10).with_burn_in(5).with_seed(29);
        let fit = fit_lda(&docs, &config).unwrap();
        let mut bad = fit.model.clone();
        bad.version = 999;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lda.json");
        let json = serde_json::to_string(&bad).unwrap();
        std::fs::write(&path, json).unwrap();
        assert!(LdaModel::load(path.to_str().unwrap()).is_err());
    }

    #[test]
    fn coherence_prefers_the_planted_topic_count() {
        // Each pool has 60 frequent core words plus 75 rare tail words; every
        // other document carries a 20-token burst of one tail word. With the
        // true two topics the top words are all cores and co-occur broadly;
        // over-splitting surfaces near-singleton tail words whose pairs never
        // share a document, which drags the coherence down.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut docs = Vec::new();
        for pool in 0..2 {
            let cores: Vec<String> = (0..60).map(|i| format!("c{pool}{i:02}")).collect();
            let tails: Vec<String> = (0..75).map(|i| format!("t{pool}{i:02}")).collect();
            for d in 0..150 {
                let mut doc: Vec<String> = Vec::new();
                let n_core = if d % 2 == 0 { 20 } else { 10 };
                for _ in 0..n_core {
                    doc.push(cores[rng.gen_range(0..cores.len())].clone());
                }
                if d % 2 == 1 {
                    let tail = &tails[d / 2];
                    doc.extend(std::iter::repeat(tail.clone()).take(20));
                }
                docs.push(doc);
            }
        }
        let base = LdaConfig::new(2)
            .with_alpha(0.1)
            .with_sweeps(250)
            .with_burn_in(125)
            .with_seed(31);
        let (selected, scores) = select_topic_count(&docs, &[2, 10], &base).unwrap();
        assert_eq!(selected, 2, "scores: {scores:?}");
        assert_eq!(scores.len(), 2);
        // The margin should be decisive, not a numerical accident.
        assert!(scores[0].1 > scores[1].1 + 0.5, "scores: {scores:?}");
    }

    #[test]
    fn select_with_single_candidate_returns_it() {
        let (docs, _) = two_pool_corpus(20, 5, 8, 37);
        let base = LdaConfig::new(2).with_sweeps(20).with_burn_in(10).with_seed(37);
        let (selected, scores) = select_topic_count(&docs, &[3], &base).unwrap();
        assert_eq!(selected, 3);
        assert_eq!(scores.len(), 1);
    }

    #[test]
    fn held_out_likelihood_prefers_the_true_structure() {
        // kappa = 2 must beat kappa = 1 on held-out pool-structured text for
        // at least 90% of seeds.
        let mut wins = 0;
        let trials = 20;
        for seed in 0..trials {
            let (docs, _) = two_pool_corpus(100, 10, 15, 1000 + seed);
            let (train, held): (Vec<_>, Vec<_>) = (
                docs[..80].to_vec(),
                docs[80..].to_vec(),
            );
            let base = LdaConfig::new(1).with_sweeps(120).with_burn_in(60).with_seed(seed);
            let m1 = fit_lda(&train, &base).unwrap();
            let m2 = fit_lda(&train, &base.clone().with_topics(2)).unwrap();
            let l1 = held_out_log_likelihood(&m1.model, &held, seed);
            let l2 = held_out_log_likelihood(&m2.model, &held, seed);
            if l2 > l1 {
                wins += 1;
            }
        }
        assert!(
            wins as f64 / trials as f64 >= 0.9,
            "kappa=2 won only {wins}/{trials}"
        );
    }
}
