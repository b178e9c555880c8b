//! Feedback-aware passage reranking over a pluggable relevance scorer.
//!
//! Prompts follow two fixed templates; inputs are capped at 512
//! analyzer tokens by truncating the passage text first, since the
//! query and feedback carry the intent signal. Reranking re-scores the
//! top `depth` entries and re-sorts them; entries below the depth keep
//! their original relative order. Scores in the reranked head come from
//! the scorer and may sit on a different scale than the tail's
//! retrieval scores.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::Analyzer;
use crate::client::ModelClient;
use crate::error::{Error, Result};
use crate::index::{BM25Params, InvertedIndex, PassageStore};
use crate::model::{Passage, RankedEntry, RankedList, Utterance, WeightedQuery};

/// Maximum prompt length in analyzer tokens.
pub const MAX_PROMPT_TOKENS: usize = 512;

/// Which prompt template the reranker builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    #[default]
    MonoT5,
    CrossEncoder,
}

/// Which scorer backend the pipeline wires in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Remote,
    #[default]
    LexicalFallback,
}

/// Reranking stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    /// How many leading entries to re-score.
    pub depth: usize,
    pub scorer: ScorerKind,
    pub template: PromptTemplate,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            depth: 100,
            scorer: ScorerKind::default(),
            template: PromptTemplate::default(),
        }
    }
}

/// One scoring request: the built prompt and the passage it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreRequest {
    pub prompt: String,
    pub passage_id: String,
}

/// Relevance scoring backend: prompt in, finite score out.
pub trait RelevanceScorer: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<f64>;
}

/// Scorer backed by a remote model endpoint.
pub struct RemoteScorer {
    pub client: Arc<dyn ModelClient>,
}

impl RelevanceScorer for RemoteScorer {
    fn score(&self, request: &ScoreRequest) -> Result<f64> {
        self.client.score(&request.prompt)
    }
}

/// Offline scorer: BM25 score of the prompt's terms against the
/// requested passage.
pub struct LexicalScorer {
    pub index: Arc<InvertedIndex>,
    pub analyzer: Arc<Analyzer>,
    pub params: BM25Params,
}

impl RelevanceScorer for LexicalScorer {
    fn score(&self, request: &ScoreRequest) -> Result<f64> {
        let query = WeightedQuery::from_text(&request.prompt, &self.analyzer);
        Ok(self
            .index
            .score_passage(&query, &request.passage_id, &self.params))
    }
}

fn fit_passage<'a>(analyzer: &Analyzer, head: &str, tail: &str, passage: &'a str) -> &'a str {
    let fixed = analyzer.token_count(head) + analyzer.token_count(tail);
    analyzer.truncate_tokens(passage, MAX_PROMPT_TOKENS.saturating_sub(fixed))
}

/// Builds the sequence-to-sequence relevance prompt
/// `"Query {q} {f} Passage {p} Relevant:"`; the feedback slot and its
/// separating space are omitted when no feedback is given.
pub fn build_monot5_prompt(
    query: &WeightedQuery,
    feedback: Option<&Utterance>,
    passage: &Passage,
    analyzer: &Analyzer,
) -> String {
    let head = match feedback {
        Some(f) => format!("Query {} {} Passage", query.original_text, f.text),
        None => format!("Query {} Passage", query.original_text),
    };
    let body = fit_passage(analyzer, &head, "Relevant:", &passage.text);
    if body.is_empty() {
        format!("{head} Relevant:")
    } else {
        format!("{head} {body} Relevant:")
    }
}

/// Builds the cross-encoder pair input `"{q} [SEP] {f} [SEP] {p}"`;
/// the feedback segment is omitted when no feedback is given.
pub fn build_crossencoder_input(
    query: &WeightedQuery,
    feedback: Option<&Utterance>,
    passage: &Passage,
    analyzer: &Analyzer,
) -> String {
    let head = match feedback {
        Some(f) => format!("{} [SEP] {} [SEP]", query.original_text, f.text),
        None => format!("{} [SEP]", query.original_text),
    };
    let body = fit_passage(analyzer, &head, "", &passage.text);
    if body.is_empty() {
        head
    } else {
        format!("{head} {body}")
    }
}

/// Builds the configured template for one passage.
pub fn build_prompt(
    template: PromptTemplate,
    query: &WeightedQuery,
    feedback: Option<&Utterance>,
    passage: &Passage,
    analyzer: &Analyzer,
) -> String {
    match template {
        PromptTemplate::MonoT5 => build_monot5_prompt(query, feedback, passage, analyzer),
        PromptTemplate::CrossEncoder => {
            build_crossencoder_input(query, feedback, passage, analyzer)
        }
    }
}

/// Re-scores the top `cfg.depth` entries and re-sorts them by
/// (score descending, prior rank ascending); the rest of the list keeps
/// its original order. A scorer failure aborts the rerank and returns
/// the original list inside [`Error::RerankerUnavailable`].
pub fn rerank(
    list: &RankedList,
    query: &WeightedQuery,
    feedback: Option<&Utterance>,
    cfg: &RerankConfig,
    scorer: &dyn RelevanceScorer,
    store: &PassageStore,
    analyzer: &Analyzer,
) -> Result<RankedList> {
    if list.is_empty() {
        return Ok(list.clone());
    }
    let depth = cfg.depth.min(list.len());
    let mut head: Vec<(usize, RankedEntry)> = Vec::with_capacity(depth);
    for (rank, entry) in list.entries[..depth].iter().enumerate() {
        let text = match store.get(&entry.passage_id) {
            Some(text) => text,
            None => {
                return Err(Error::RerankerUnavailable {
                    reason: format!("passage {} missing from store", entry.passage_id),
                    partial: list.clone(),
                })
            }
        };
        let passage = Passage {
            id: entry.passage_id.clone(),
            text: text.to_string(),
        };
        let request = ScoreRequest {
            prompt: build_prompt(cfg.template, query, feedback, &passage, analyzer),
            passage_id: entry.passage_id.clone(),
        };
        let score = scorer
            .score(&request)
            .map_err(|e| Error::RerankerUnavailable {
                reason: e.to_string(),
                partial: list.clone(),
            })?;
        if !score.is_finite() {
            return Err(Error::RerankerUnavailable {
                reason: format!("non-finite score for passage {}", entry.passage_id),
                partial: list.clone(),
            });
        }
        head.push((
            rank,
            RankedEntry {
                passage_id: entry.passage_id.clone(),
                score,
            },
        ));
    }
    head.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .expect("finite scores")
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut entries: Vec<RankedEntry> = head.into_iter().map(|(_, e)| e).collect();
    entries.extend_from_slice(&list.entries[depth..]);
    Ok(RankedList::new(entries, list.depth_limit))
}
