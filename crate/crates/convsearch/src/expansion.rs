//! Query reformulation from feedback and history: RM3 and Rocchio
//! expansion over feedback utterances, history-based term selection,
//! clarifying-answer concatenation, and the discourse-aware gate that
//! applies rewriting only to negative feedback.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::Analyzer;
use crate::client::{CompletionParams, ModelClient};
use crate::error::Result;
use crate::index::InvertedIndex;
use crate::model::{
    ConversationState, Discourse, Move, SystemKind, SystemUtterance, Utterance, WeightedQuery,
};

/// Expansion stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub rm3_max_terms: usize,
    pub rocchio_alpha: f64,
    pub rocchio_beta: f64,
    pub rocchio_gamma: f64,
    pub history_max_terms: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            rm3_max_terms: 10,
            rocchio_alpha: 1.0,
            rocchio_beta: 0.75,
            rocchio_gamma: 0.0,
            history_max_terms: 10,
        }
    }
}

/// Polarity of a feedback utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Classified feedback: polarity plus whether the feedback carries a
/// refining sub-question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLabel {
    pub polarity: Polarity,
    pub has_clarification: bool,
}

impl FeedbackLabel {
    pub fn positive() -> Self {
        Self {
            polarity: Polarity::Positive,
            has_clarification: false,
        }
    }

    pub fn negative(has_clarification: bool) -> Self {
        Self {
            polarity: Polarity::Negative,
            has_clarification,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }
}

/// Ranked feedback terms not already in the query: (term, tf·idf).
fn ranked_candidates(
    query: &WeightedQuery,
    feedback_text: &str,
    index: &InvertedIndex,
    analyzer: &Analyzer,
) -> Vec<(String, f64)> {
    let mut counts: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
    for term in analyzer.analyze(feedback_text) {
        *counts.entry(term).or_insert(0.0) += 1.0;
    }
    let mut candidates: Vec<(String, f64)> = counts
        .into_iter()
        .filter(|(term, _)| !query.terms.contains_key(term))
        .map(|(term, tf)| {
            let idf = index.idf(&term);
            (term, tf * idf)
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite tf-idf")
            .then_with(|| a.0.cmp(&b.0))
    });
    candidates
}

/// RM3-style expansion from a feedback utterance.
///
/// The top `rm3_max_terms` feedback terms by tf·idf are added with
/// weights scaled so the strongest addition carries half the weight of
/// the strongest original term. Original terms are never removed or
/// re-weighted. Feedback without content terms leaves the query
/// unchanged.
pub fn rm3_expand(
    query: &WeightedQuery,
    feedback: &Utterance,
    index: &InvertedIndex,
    cfg: &ExpansionConfig,
    analyzer: &Analyzer,
) -> WeightedQuery {
    debug_assert_eq!(feedback.discourse, Discourse::Feedback);
    let candidates = ranked_candidates(query, &feedback.text, index, analyzer);
    if candidates.is_empty() {
        return query.clone();
    }
    let max_score = candidates[0].1;
    let cap = 0.5 * query.max_weight().unwrap_or(1.0);
    let mut result = query.clone();
    for (term, score) in candidates.into_iter().take(cfg.rm3_max_terms) {
        let weight = if max_score > 0.0 {
            (score / max_score) * cap
        } else {
            cap
        };
        result.terms.insert(term, weight);
    }
    result
}

/// Rocchio expansion: alpha·query + beta·(tf·idf vector of the
/// feedback). The gamma term is omitted because no nonrelevant set
/// exists here; nonpositive weights are dropped.
pub fn rocchio_expand(
    query: &WeightedQuery,
    feedback: &Utterance,
    index: &InvertedIndex,
    cfg: &ExpansionConfig,
    analyzer: &Analyzer,
) -> WeightedQuery {
    debug_assert_eq!(feedback.discourse, Discourse::Feedback);
    let mut counts: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
    for term in analyzer.analyze(&feedback.text) {
        *counts.entry(term).or_insert(0.0) += 1.0;
    }
    if counts.is_empty() {
        return query.clone();
    }
    let mut combined: std::collections::BTreeMap<String, f64> = query
        .terms
        .iter()
        .map(|(t, w)| (t.clone(), cfg.rocchio_alpha * w))
        .collect();
    for (term, tf) in counts {
        let contribution = cfg.rocchio_beta * tf * index.idf(&term);
        *combined.entry(term).or_insert(0.0) += contribution;
    }
    combined.retain(|_, w| *w > 0.0);
    WeightedQuery {
        original_text: query.original_text.clone(),
        terms: combined,
    }
}

/// Picks expansion terms from conversation history plus feedback.
///
/// Implementations must not return terms already present in the query.
pub trait TermSelector: Send + Sync {
    /// Returns up to `max_terms` terms, best first.
    fn select_terms(
        &self,
        query: &WeightedQuery,
        history_text: &str,
        feedback_text: &str,
        max_terms: usize,
    ) -> Result<Vec<String>>;
}

/// Default selector: ranks terms of the concatenated history and
/// feedback text by tf·idf against the passage index.
pub struct TfIdfTermSelector<'a> {
    pub analyzer: &'a Analyzer,
    pub index: &'a InvertedIndex,
}

impl TermSelector for TfIdfTermSelector<'_> {
    fn select_terms(
        &self,
        query: &WeightedQuery,
        history_text: &str,
        feedback_text: &str,
        max_terms: usize,
    ) -> Result<Vec<String>> {
        let combined = format!("{history_text} {feedback_text}");
        let candidates = ranked_candidates(query, &combined, self.index, self.analyzer);
        Ok(candidates
            .into_iter()
            .take(max_terms)
            .map(|(term, _)| term)
            .collect())
    }
}

/// Space-joined text of every move in the history.
fn render_history_text(state: &ConversationState) -> String {
    state
        .history
        .iter()
        .map(Move::text)
        .collect::<Vec<_>>()
        .join(" ")
}

/// History-based expansion: adds up to `history_max_terms` selected
/// terms with unit weight. Empty history and empty feedback leave the
/// query unchanged.
pub fn history_expand(
    query: &WeightedQuery,
    feedback: &Utterance,
    state: &ConversationState,
    cfg: &ExpansionConfig,
    selector: &dyn TermSelector,
) -> Result<WeightedQuery> {
    let history_text = render_history_text(state);
    if history_text.trim().is_empty() && feedback.text.trim().is_empty() {
        return Ok(query.clone());
    }
    let terms =
        selector.select_terms(query, &history_text, &feedback.text, cfg.history_max_terms)?;
    let mut result = query.clone();
    for term in terms {
        result.terms.entry(term).or_insert(1.0);
    }
    Ok(result)
}

/// Appends the clarifying question and its answer to the query text,
/// re-deriving terms from the concatenation with unit weights.
pub fn concat_clarification(
    query: &WeightedQuery,
    cq: &SystemUtterance,
    answer: &Utterance,
    analyzer: &Analyzer,
) -> WeightedQuery {
    debug_assert_eq!(cq.kind, SystemKind::ClarifyingQuestion);
    debug_assert_eq!(answer.discourse, Discourse::Answer);
    let text = [
        query.original_text.as_str(),
        cq.text.as_str(),
        answer.text.as_str(),
    ]
    .iter()
    .filter(|part| !part.is_empty())
    .copied()
    .collect::<Vec<_>>()
    .join(" ");
    WeightedQuery::from_text_unit(&text, analyzer)
}

/// Discourse-aware gate: keep the rewritten query only for negative
/// feedback; positive feedback returns the previous query untouched.
pub fn discourse_gate(
    label: &FeedbackLabel,
    rewritten: WeightedQuery,
    previous: &WeightedQuery,
) -> WeightedQuery {
    match label.polarity {
        Polarity::Negative => rewritten,
        Polarity::Positive => previous.clone(),
    }
}

/// Query rewriting over conversational context: text plus history in,
/// standalone text out.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, query_text: &str, state: &ConversationState) -> Result<String>;
}

/// Offline rewriter: returns the input text unchanged.
pub struct PassthroughRewriter;

impl Rewriter for PassthroughRewriter {
    fn rewrite(&self, query_text: &str, _state: &ConversationState) -> Result<String> {
        Ok(query_text.to_string())
    }
}

/// Prompt template for [`CompletionRewriter`]; placeholders `{history}`
/// and `{query}`.
pub const DEFAULT_REWRITE_PROMPT: &str = include_str!("../data/prompts/rewriter.txt");

/// Rewriter backed by a completion model.
pub struct CompletionRewriter {
    pub client: Arc<dyn ModelClient>,
    pub params: CompletionParams,
    pub prompt_template: String,
}

impl CompletionRewriter {
    pub fn new(client: Arc<dyn ModelClient>) -> Self {
        Self {
            client,
            params: CompletionParams::default(),
            prompt_template: DEFAULT_REWRITE_PROMPT.to_string(),
        }
    }
}

impl Rewriter for CompletionRewriter {
    fn rewrite(&self, query_text: &str, state: &ConversationState) -> Result<String> {
        let history = state
            .history
            .iter()
            .map(|mv| match mv {
                Move::User(u) => format!("User: {}", u.text),
                Move::System(s) => format!("System: {}", s.text),
            })
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self
            .prompt_template
            .replace("{history}", &history)
            .replace("{query}", query_text);
        let rewritten = self.client.complete(&prompt, &self.params)?;
        if rewritten.is_empty() {
            return Ok(query_text.to_string());
        }
        Ok(rewritten)
    }
}
