//! Text analysis: tokenization, stopword removal, and stemming.
//!
//! All retrieval components share one [`Analyzer`] so that documents,
//! queries, feedback utterances, and clarifying questions are mapped
//! into the same term space. Analysis is deterministic: the same text
//! always yields the same token sequence.

mod porter;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use porter::stem as porter_stem;

/// English stopwords applied by the default analyzer.
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Stemmer selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stemmer {
    None,
    #[default]
    Porter,
}

/// Serializable analyzer settings, exposed through pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    pub lowercase: bool,
    /// `None` selects the built-in English list; `Some` replaces it.
    pub stopwords: Option<Vec<String>>,
    pub stemmer: Stemmer,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            stopwords: None,
            stemmer: Stemmer::Porter,
        }
    }
}

/// Deterministic text analyzer: tokenize, filter stopwords, stem.
///
/// Tokens are maximal runs of alphanumeric characters; everything else
/// is a separator. Stopwords are matched after lowercasing and before
/// stemming.
#[derive(Debug, Clone)]
pub struct Analyzer {
    lowercase: bool,
    stopwords: BTreeSet<String>,
    stemmer: Stemmer,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::from_config(&AnalyzerConfig::default())
    }
}

impl Analyzer {
    pub fn from_config(config: &AnalyzerConfig) -> Self {
        let stopwords = match &config.stopwords {
            Some(words) => words.iter().map(|w| w.to_lowercase()).collect(),
            None => DEFAULT_STOPWORDS
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        };
        Self {
            lowercase: config.lowercase,
            stopwords,
            stemmer: config.stemmer,
        }
    }

    /// Splits text into tokens without stopword removal or stemming.
    ///
    /// This raw stream defines token positions and counts for the
    /// truncation rules used by prompt builders and response generation.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.token_spans(text)
            .into_iter()
            .map(|(start, end)| self.normalize_case(&text[start..end]))
            .collect()
    }

    /// Full analysis chain: tokenize, drop stopwords, stem.
    pub fn analyze(&self, text: &str) -> Vec<String> {
        self.tokenize(text)
            .into_iter()
            .filter(|t| !self.stopwords.contains(t.as_str()))
            .map(|t| match self.stemmer {
                Stemmer::None => t,
                Stemmer::Porter => porter::stem(&t),
            })
            .collect()
    }

    /// Number of raw tokens in `text`.
    pub fn token_count(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }

    /// Truncates `text` at the end of its `max_tokens`-th token,
    /// preserving the original bytes up to that boundary.
    pub fn truncate_tokens<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if max_tokens == 0 {
            return "";
        }
        let spans = self.token_spans(text);
        if spans.len() <= max_tokens {
            return text;
        }
        let (_, end) = spans[max_tokens - 1];
        &text[..end]
    }

    fn normalize_case(&self, token: &str) -> String {
        if self.lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        }
    }

    /// Byte ranges of each token in `text`.
    fn token_spans(&self, text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start = None;
        for (idx, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                if start.is_none() {
                    start = Some(idx);
                }
            } else if let Some(s) = start.take() {
                spans.push((s, idx));
            }
        }
        if let Some(s) = start {
            spans.push((s, text.len()));
        }
        spans
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_non_alphanumeric() {
        let analyzer = Analyzer::default();
        assert_eq!(
            analyzer.tokenize("What's the impact, really?"),
            vec!["what", "s", "the", "impact", "really"]
        );
    }

    #[test]
    fn analyze_removes_stopwords_and_stems() {
        let analyzer = Analyzer::default();
        assert_eq!(
            analyzer.analyze("ThE running dogs are barking"),
            vec!["run", "dog", "bark"]
        );
    }

    #[test]
    fn analyze_is_deterministic() {
        let analyzer = Analyzer::default();
        let text = "Solar panels convert sunlight into electricity.";
        assert_eq!(analyzer.analyze(text), analyzer.analyze(text));
    }

    #[test]
    fn stopword_only_text_analyzes_to_nothing() {
        let analyzer = Analyzer::default();
        assert!(analyzer.analyze("no").is_empty());
        assert!(analyzer.analyze("the and or").is_empty());
    }

    #[test]
    fn truncate_respects_token_boundaries() {
        let analyzer = Analyzer::default();
        let text = "alpha beta gamma delta";
        assert_eq!(analyzer.truncate_tokens(text, 2), "alpha beta");
        assert_eq!(analyzer.truncate_tokens(text, 10), text);
        assert_eq!(analyzer.truncate_tokens(text, 0), "");
        assert_eq!(analyzer.token_count(text), 4);
    }

    #[test]
    fn no_stemming_when_disabled() {
        let analyzer = Analyzer::from_config(&AnalyzerConfig {
            stemmer: Stemmer::None,
            ..AnalyzerConfig::default()
        });
        assert_eq!(analyzer.analyze("running dogs"), vec!["running", "dogs"]);
    }
}
