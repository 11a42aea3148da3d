//! Text preparation: tokenisation, sentence counting and stopword filtering.
//!
//! Tokens are maximal runs of alphabetic characters, lowercased; anything
//! else (digits, hyphens, apostrophes, punctuation) acts as a separator, so
//! "COVID-19" yields the single token "covid". Sentence boundaries are runs
//! of `.`, `!` or `?` followed by whitespace or end of text; a trailing
//! unterminated fragment still counts as one sentence.

use std::collections::BTreeSet;
use std::fs;

use crate::error::{Error, Result};

/// Words stripped during normalisation (lowercase, one per line).
const DEFAULT_STOPWORDS: &str = include_str!("data/stopwords.txt");

/// Minimum token length kept by [`normalize`], in characters.
pub const MIN_TOKEN_LEN: usize = 3;

#[derive(Debug, Clone)]
pub struct Stopwords {
    words: BTreeSet<String>,
}

impl Stopwords {
    /// The embedded English list (about 230 words).
    pub fn default_english() -> Self {
        Self::from_lines(DEFAULT_STOPWORDS)
    }

    /// Loads a replacement list: one word per line, `#` comments and blank
    /// lines ignored, matched case-insensitively.
    pub fn from_file(path: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sw = Self::from_lines(&text);
        if sw.words.is_empty() {
            return Err(Error::InvalidInput(format!("stopword file {path} is empty")));
        }
        Ok(sw)
    }

    fn from_lines(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Stopwords { words }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Splits `text` into lowercase alphabetic tokens and counts sentences.
pub fn tokenize(text: &str) -> (Vec<String>, usize) {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    (tokens, count_sentences(text))
}

fn count_sentences(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut tail_content = false; // non-whitespace since the last boundary
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if matches!(ch, '.' | '!' | '?') {
            let mut j = i;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?') {
                j += 1;
            }
            if j >= chars.len() || chars[j].is_whitespace() {
                if tail_content {
                    count += 1;
                }
                tail_content = false;
            }
            i = j;
        } else {
            if !ch.is_whitespace() {
                tail_content = true;
            }
            i += 1;
        }
    }
    if tail_content {
        count += 1;
    }
    count
}

/// Filters a token list down to content words: at least [`MIN_TOKEN_LEN`]
/// characters, no digits, not a stopword. Lowercases defensively so the
/// operation is idempotent and case-insensitive. Order is preserved.
pub fn normalize(tokens: &[String], stopwords: &Stopwords) -> Vec<String> {
    tokens
        .iter()
        .map(|t| t.to_lowercase())
        .filter(|t| {
            t.chars().count() >= MIN_TOKEN_LEN
                && !t.chars().any(|c| c.is_ascii_digit())
                && !stopwords.contains(t)
        })
        .collect()
}

/// Tokenises and normalises in one step, returning the kept tokens and the
/// raw token/sentence counts from before filtering.
pub fn prepare(text: &str, stopwords: &Stopwords) -> PreparedText {
    let (raw, sentences) = tokenize(text);
    let kept = normalize(&raw, stopwords);
    PreparedText {
        raw_tokens: raw,
        tokens: kept,
        sentences,
    }
}

#[derive(Debug, Clone)]
pub struct PreparedText {
    /// All lowercase alphabetic tokens, before filtering.
    pub raw_tokens: Vec<String>,
    /// Tokens surviving normalisation.
    pub tokens: Vec<String>,
    pub sentences: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_lowercases_and_drops_digits() {
        let (tokens, sentences) = tokenize("The CAT runs 42 km.");
        assert_eq!(tokens, toks(&["the", "cat", "runs", "km"]));
        assert_eq!(sentences, 1);
    }

    #[test]
    fn tokenize_empty_text() {
        let (tokens, sentences) = tokenize("");
        assert!(tokens.is_empty());
        assert_eq!(sentences, 0);
    }

    #[test]
    fn hyphenated_tokens_split_and_digit_halves_vanish() {
        let (tokens, sentences) = tokenize("COVID-19 lockdown!");
        assert_eq!(tokens, toks(&["covid", "lockdown"]));
        assert_eq!(sentences, 1);
    }

    #[test]
    fn apostrophes_split_tokens() {
        let (tokens, _) = tokenize("Britain's don't");
        assert_eq!(tokens, toks(&["britain", "s", "don", "t"]));
    }

    #[test]
    fn sentence_counting_rules() {
        assert_eq!(tokenize("One. Two! Three?").1, 3);
        assert_eq!(tokenize("Ellipsis... still one sentence").1, 2);
        assert_eq!(tokenize("no terminator at all").1, 1);
        assert_eq!(tokenize("   ").1, 0);
        assert_eq!(tokenize("Quote inside?! yes.").1, 2);
    }

    #[test]
    fn normalize_strips_stopwords_short_tokens_and_digits() {
        let sw = Stopwords::default_english();
        let raw = toks(&["the", "cat", "runs", "km", "b2b"]);
        assert_eq!(normalize(&raw, &sw), toks(&["cat", "runs"]));
    }

    #[test]
    fn normalize_of_only_stopwords_is_empty() {
        let sw = Stopwords::default_english();
        assert!(normalize(&toks(&["a", "an"]), &sw).is_empty());
    }

    #[test]
    fn normalize_is_idempotent_and_case_insensitive() {
        let sw = Stopwords::default_english();
        let raw = toks(&["The", "CAT", "Runs", "quickly", "NEVER", "alone"]);
        let once = normalize(&raw, &sw);
        let twice = normalize(&once, &sw);
        assert_eq!(once, twice);
        let lower: Vec<String> = raw.iter().map(|t| t.to_lowercase()).collect();
        assert_eq!(once, normalize(&lower, &sw));
    }

    #[test]
    fn normalized_tokens_satisfy_the_contract() {
        let sw = Stopwords::default_english();
        let text = "Prices rose 3.5% in May-2021; the under-30s weren't buying, analysts said.";
        let (raw, _) = tokenize(text);
        for t in normalize(&raw, &sw) {
            assert!(t.chars().count() >= MIN_TOKEN_LEN, "short token {t}");
            assert!(!t.chars().any(|c| c.is_ascii_digit()), "digit in {t}");
            assert!(!sw.contains(&t), "stopword {t}");
        }
    }

    #[test]
    fn default_stopword_list_is_substantial() {
        let sw = Stopwords::default_english();
        assert!(sw.len() >= 150, "only {} stopwords", sw.len());
        assert!(sw.contains("the"));
        assert!(sw.contains("very"));
    }

    #[test]
    fn stopword_file_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sw.txt");
        std::fs::write(&path, "# comment\nfoo\nBAR\n\n").unwrap();
        let sw = Stopwords::from_file(path.to_str().unwrap()).unwrap();
        assert_eq!(sw.len(), 2);
        assert!(sw.contains("foo"));
        assert!(sw.contains("bar"));
        assert!(!sw.contains("the"));
    }

    #[test]
    fn prepare_keeps_raw_and_filtered_views() {
        let sw = Stopwords::default_english();
        let p = prepare("The quick brown fox. It jumps!", &sw);
        assert_eq!(p.sentences, 2);
        assert_eq!(p.raw_tokens.len(), 6);
        assert_eq!(p.tokens, toks(&["quick", "brown", "fox", "jumps"]));
    }
}
