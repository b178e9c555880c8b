//! Pipeline orchestration: assembles the configured stages and runs
//! the multi-turn, multi-round loop between the retrieval system and
//! the simulated user.
//!
//! One turn executes: optional rewrite, optional clarification
//! (question, simulated answer, concatenation), retrieval, optional
//! rerank, response generation, then up to `feedback_rounds` rounds of
//! simulated feedback, each reformulating the query and retrieving
//! again. Every intermediate ranked list is recorded.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::analysis::{Analyzer, AnalyzerConfig};
use crate::clarify::{
    generate_cq_entity, select_cq_bm25, select_cq_embedding, CQConfig, ClarificationNeed,
    EntityExtractor, QuestionPool, TextEmbedder,
};
use crate::client::CompletionParams;
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, stratify_by_feedback, EvalReport, Qrels};
use crate::expansion::{
    concat_clarification, discourse_gate, history_expand, rm3_expand, rocchio_expand,
    ExpansionConfig, FeedbackLabel, Rewriter, TermSelector, TfIdfTermSelector,
};
use crate::index::{bm25_retrieve, BM25Params, InvertedIndex, PassageStore};
use crate::model::{
    ConversationState, Discourse, InformationNeed, Move, RankedList, SystemUtterance, Utterance,
    WeightedQuery,
};
use crate::rerank::{rerank, RelevanceScorer, RerankConfig};
use crate::simulate::{should_continue, Simulator};

/// Which rewriter the pipeline applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriterKind {
    #[default]
    None,
    /// Rewrite the initial query and every feedback round.
    Remote,
    /// Rewrite the initial query, but gate feedback rounds on negative
    /// polarity.
    DiscourseGated,
}

/// Which feedback expansion the pipeline applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionKind {
    #[default]
    None,
    Rm3,
    Rocchio,
    History,
}

/// How a clarifying question is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CQMethod {
    SelectBm25,
    SelectEmbedding,
    #[default]
    GenerateEntity,
}

/// Full pipeline configuration, exposed as a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub analyzer: AnalyzerConfig,
    pub bm25: BM25Params,
    pub rewriter: RewriterKind,
    pub expansion: ExpansionKind,
    pub expansion_params: ExpansionConfig,
    pub retrieval_k: usize,
    pub rerank: Option<RerankConfig>,
    pub clarification: Option<CQConfig>,
    pub cq_method: CQMethod,
    pub feedback_rounds: u32,
    pub response_top_k: usize,
    pub stop_on_positive: bool,
    /// Feedback budget per conversation; `None` sizes it as
    /// `feedback_rounds × turns`.
    pub patience: Option<u32>,
    pub completion: CompletionParams,
    /// Remote transport for completion, scoring, and embedding roles;
    /// required when a remote stage runs without a mock script.
    pub remote: Option<crate::client::RemoteConfig>,
    pub eval_depth: usize,
    pub workers: usize,
    pub run_tag: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            analyzer: AnalyzerConfig::default(),
            bm25: BM25Params::default(),
            rewriter: RewriterKind::None,
            expansion: ExpansionKind::None,
            expansion_params: ExpansionConfig::default(),
            retrieval_k: 1000,
            rerank: None,
            clarification: None,
            cq_method: CQMethod::default(),
            feedback_rounds: 0,
            response_top_k: 3,
            stop_on_positive: false,
            patience: None,
            completion: CompletionParams::default(),
            remote: None,
            eval_depth: 1000,
            workers: 1,
            run_tag: "convsearch".into(),
        }
    }
}

impl PipelineConfig {
    /// True when any stage needs the simulated user.
    pub fn simulation_enabled(&self) -> bool {
        self.feedback_rounds > 0 || self.clarification_enabled()
    }

    pub fn clarification_enabled(&self) -> bool {
        self.clarification
            .as_ref()
            .is_some_and(|c| c.clarification_need == ClarificationNeed::Always)
    }
}

/// Turns a ranked list into the system's response text.
pub trait ResponseGenerator: Send + Sync {
    fn respond(&self, list: &RankedList, store: &PassageStore, top_k: usize) -> Result<String>;
}

/// Default deterministic responder: concatenates the top passages and
/// truncates to a token budget.
pub struct ConcatResponder {
    pub analyzer: Arc<Analyzer>,
    pub max_tokens: usize,
}

impl ConcatResponder {
    pub fn new(analyzer: Arc<Analyzer>) -> Self {
        Self {
            analyzer,
            max_tokens: 250,
        }
    }
}

impl ResponseGenerator for ConcatResponder {
    fn respond(&self, list: &RankedList, store: &PassageStore, top_k: usize) -> Result<String> {
        let mut parts = Vec::new();
        for id in list.top_ids(top_k) {
            parts.push(store.text(&id)?.to_string());
        }
        if parts.is_empty() {
            return Ok("I could not find anything relevant.".into());
        }
        let joined = parts.join(" ");
        Ok(self
            .analyzer
            .truncate_tokens(&joined, self.max_tokens)
            .to_string())
    }
}

/// Responder backed by a completion model summarizing the top passages.
pub struct CompletionResponder {
    pub client: Arc<dyn crate::client::ModelClient>,
    pub params: CompletionParams,
}

impl ResponseGenerator for CompletionResponder {
    fn respond(&self, list: &RankedList, store: &PassageStore, top_k: usize) -> Result<String> {
        let mut prompt = String::from("Summarize the following passages as a direct answer:\n");
        for id in list.top_ids(top_k) {
            prompt.push_str(store.text(&id)?);
            prompt.push('\n');
        }
        let text = self.client.complete(&prompt, &self.params)?;
        if text.is_empty() {
            return Ok("I could not find anything relevant.".into());
        }
        Ok(text)
    }
}

/// Stage implementations wired into the pipeline.
pub struct PipelineDeps {
    pub analyzer: Arc<Analyzer>,
    pub index: Arc<InvertedIndex>,
    pub store: Arc<PassageStore>,
    pub responder: Arc<dyn ResponseGenerator>,
    pub rewriter: Option<Arc<dyn Rewriter>>,
    pub scorer: Option<Arc<dyn RelevanceScorer>>,
    pub simulator: Option<Arc<Simulator>>,
    pub question_pool: Option<Arc<QuestionPool>>,
    pub embedder: Option<Arc<dyn TextEmbedder>>,
    pub extractor: Option<Arc<dyn EntityExtractor>>,
    pub term_selector: Option<Arc<dyn TermSelector>>,
}

impl PipelineDeps {
    /// Minimal offline wiring: retrieval, concatenation responder, and
    /// default entity extraction; no remote stages.
    pub fn offline(
        analyzer: Arc<Analyzer>,
        index: Arc<InvertedIndex>,
        store: Arc<PassageStore>,
    ) -> Self {
        let responder = Arc::new(ConcatResponder::new(analyzer.clone()));
        Self {
            analyzer,
            index,
            store,
            responder,
            rewriter: None,
            scorer: None,
            simulator: None,
            question_pool: None,
            embedder: None,
            extractor: Some(Arc::new(crate::clarify::CapitalizedEntityExtractor::new())),
            term_selector: None,
        }
    }

    fn simulator(&self) -> Result<&Simulator> {
        self.simulator
            .as_deref()
            .ok_or_else(|| Error::Config("simulation is enabled but no simulator is wired".into()))
    }
}

/// Everything produced by one pipeline turn.
#[derive(Debug, Clone)]
pub struct TurnResult {
    pub turn_id: String,
    pub final_list: RankedList,
    pub rounds_used: u32,
    /// Moves appended to the conversation during this turn.
    pub transcript_slice: Vec<Move>,
    /// Ranked list before feedback plus one per completed round.
    pub per_round_lists: Vec<RankedList>,
    /// Query in effect for each entry of `per_round_lists`.
    pub per_round_queries: Vec<WeightedQuery>,
    /// Classified label of each feedback round.
    pub feedback_labels: Vec<FeedbackLabel>,
}

fn stage<T>(result: Result<T>, name: &'static str) -> Result<T> {
    result.map_err(|e| e.in_stage(name))
}

fn retrieve_current(
    cfg: &PipelineConfig,
    deps: &PipelineDeps,
    query: &WeightedQuery,
    feedback: Option<&Utterance>,
) -> Result<RankedList> {
    let list = bm25_retrieve(&deps.index, query, &cfg.bm25, cfg.retrieval_k);
    match (&cfg.rerank, list.is_empty()) {
        (Some(rcfg), false) => {
            let scorer = deps.scorer.as_deref().ok_or_else(|| {
                Error::Config("reranking is enabled but no scorer is wired".into())
            })?;
            stage(
                rerank(
                    &list,
                    query,
                    feedback,
                    rcfg,
                    scorer,
                    &deps.store,
                    &deps.analyzer,
                ),
                "rerank",
            )
        }
        _ => Ok(list),
    }
}

fn respond_and_append(
    cfg: &PipelineConfig,
    deps: &PipelineDeps,
    state: &mut ConversationState,
    list: &RankedList,
    turn: u32,
) -> Result<SystemUtterance> {
    let text = stage(
        deps.responder
            .respond(list, &deps.store, cfg.response_top_k),
        "respond",
    )?;
    let response = SystemUtterance::response(text, turn, list.top_ids(cfg.response_top_k));
    state.append_move(Move::System(response.clone()))?;
    Ok(response)
}

/// Produces a clarifying question for the current query, or `None`
/// when the configured method finds nothing to ask (pool miss or no
/// salient entities).
fn ask_clarifying(
    cfg: &PipelineConfig,
    deps: &PipelineDeps,
    query: &WeightedQuery,
    turn: u32,
) -> Result<Option<SystemUtterance>> {
    let cq_cfg = cfg
        .clarification
        .as_ref()
        .expect("clarification configured");
    let outcome =
        match cfg.cq_method {
            CQMethod::SelectBm25 => {
                let pool = deps.question_pool.as_deref().ok_or_else(|| {
                    Error::Config("question selection needs a question pool".into())
                })?;
                select_cq_bm25(pool, query, turn)
            }
            CQMethod::SelectEmbedding => {
                let pool = deps.question_pool.as_deref().ok_or_else(|| {
                    Error::Config("question selection needs a question pool".into())
                })?;
                let embedder = deps
                    .embedder
                    .as_deref()
                    .ok_or_else(|| Error::Config("embedding selection needs an embedder".into()))?;
                select_cq_embedding(pool, query, embedder, turn)
            }
            CQMethod::GenerateEntity => {
                let extractor = deps.extractor.as_deref().ok_or_else(|| {
                    Error::Config("entity generation needs an entity extractor".into())
                })?;
                let preliminary =
                    bm25_retrieve(&deps.index, query, &cfg.bm25, cq_cfg.top_n_results.max(1));
                if preliminary.is_empty() {
                    return Ok(None);
                }
                generate_cq_entity(&preliminary, &deps.store, cq_cfg, extractor, turn)
            }
        };
    match outcome {
        Ok(cq) => Ok(Some(cq)),
        Err(Error::PoolMiss) | Err(Error::NoEntities) => Ok(None),
        Err(e) => Err(e.in_stage("clarification")),
    }
}

/// Applies the configured rewrite and expansion to produce the next
/// round's query. Under the discourse gate, positive feedback leaves
/// the query untouched entirely.
fn reformulate(
    cfg: &PipelineConfig,
    deps: &PipelineDeps,
    current: &WeightedQuery,
    feedback: &Utterance,
    label: &FeedbackLabel,
    state: &ConversationState,
) -> Result<WeightedQuery> {
    let gated = cfg.rewriter == RewriterKind::DiscourseGated;
    if gated && label.is_positive() {
        return Ok(current.clone());
    }
    let mut query = current.clone();
    match cfg.rewriter {
        RewriterKind::None => {}
        RewriterKind::Remote | RewriterKind::DiscourseGated => {
            let rewriter = deps.rewriter.as_deref().ok_or_else(|| {
                Error::Config("rewriting is enabled but no rewriter is wired".into())
            })?;
            let text = stage(rewriter.rewrite(&feedback.text, state), "rewrite")?;
            let rewritten = WeightedQuery::from_text(&text, &deps.analyzer);
            query = if gated {
                discourse_gate(label, rewritten, &query)
            } else {
                rewritten
            };
        }
    }
    match cfg.expansion {
        ExpansionKind::None => {}
        ExpansionKind::Rm3 => {
            query = rm3_expand(
                &query,
                feedback,
                &deps.index,
                &cfg.expansion_params,
                &deps.analyzer,
            );
        }
        ExpansionKind::Rocchio => {
            query = rocchio_expand(
                &query,
                feedback,
                &deps.index,
                &cfg.expansion_params,
                &deps.analyzer,
            );
        }
        ExpansionKind::History => {
            let default_selector;
            let selector: &dyn TermSelector = match &deps.term_selector {
                Some(s) => s.as_ref(),
                None => {
                    default_selector = TfIdfTermSelector {
                        analyzer: &deps.analyzer,
                        index: &deps.index,
                    };
                    &default_selector
                }
            };
            query = stage(
                history_expand(&query, feedback, state, &cfg.expansion_params, selector),
                "expansion",
            )?;
        }
    }
    Ok(query)
}

/// Runs one dataset turn: clarification, retrieval, response, and the
/// feedback loop. The state is mutated in place, so a failed turn still
/// leaves its partial transcript in the conversation.
pub fn run_turn(
    turn_id: &str,
    query: &Utterance,
    in_need: Option<&InformationNeed>,
    state: &mut ConversationState,
    cfg: &PipelineConfig,
    deps: &PipelineDeps,
) -> Result<TurnResult> {
    debug_assert_eq!(query.discourse, Discourse::Query);
    if cfg.simulation_enabled() && in_need.is_none() {
        return Err(Error::Config(format!(
            "turn {turn_id} has no information need but simulation is enabled"
        )));
    }
    let history_start = state.history.len();
    // A new dataset turn opens a fresh information need.
    state.satisfied = false;
    state.append_move(Move::User(query.clone()))?;
    let turn = query.turn;

    let mut query_text = query.text.clone();
    if cfg.rewriter != RewriterKind::None {
        let rewriter = deps
            .rewriter
            .as_deref()
            .ok_or_else(|| Error::Config("rewriting is enabled but no rewriter is wired".into()))?;
        query_text = stage(rewriter.rewrite(&query.text, state), "rewrite")?;
    }
    let mut current_query = WeightedQuery::from_text(&query_text, &deps.analyzer);

    if cfg.clarification_enabled() {
        if let Some(cq) = ask_clarifying(cfg, deps, &current_query, turn)? {
            state.append_move(Move::System(cq.clone()))?;
            let simulator = deps.simulator()?;
            let answer = stage(
                simulator.answer_clarifying(in_need.expect("checked above"), &cq, state),
                "simulator",
            )?;
            state.append_move(Move::User(answer.clone()))?;
            current_query = concat_clarification(&current_query, &cq, &answer, &deps.analyzer);
        }
    }

    let mut list = retrieve_current(cfg, deps, &current_query, None)?;
    let mut response = respond_and_append(cfg, deps, state, &list, turn)?;

    let mut per_round_lists = vec![list.clone()];
    let mut per_round_queries = vec![current_query.clone()];
    let mut feedback_labels = Vec::new();
    let mut rounds_used = 0u32;

    for _ in 0..cfg.feedback_rounds {
        if state.patience == 0 || state.satisfied {
            break;
        }
        let simulator = deps.simulator()?;
        let (feedback, label) = stage(
            simulator.give_feedback(in_need.expect("checked above"), &response, state),
            "simulator",
        )?;
        state.append_move(Move::User(feedback.clone()))?;
        rounds_used += 1;
        feedback_labels.push(label);
        if cfg.stop_on_positive && label.is_positive() {
            state.satisfied = true;
        }
        if !should_continue(state, &label, cfg.stop_on_positive) {
            per_round_lists.push(list.clone());
            per_round_queries.push(current_query.clone());
            break;
        }
        current_query = reformulate(cfg, deps, &current_query, &feedback, &label, state)?;
        list = retrieve_current(cfg, deps, &current_query, Some(&feedback))?;
        response = respond_and_append(cfg, deps, state, &list, turn)?;
        per_round_lists.push(list.clone());
        per_round_queries.push(current_query.clone());
    }

    Ok(TurnResult {
        turn_id: turn_id.to_string(),
        final_list: list,
        rounds_used,
        transcript_slice: state.history[history_start..].to_vec(),
        per_round_lists,
        per_round_queries,
        feedback_labels,
    })
}

/// One conversation of a topic file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub turns: Vec<TopicTurn>,
}

/// One fixed dataset turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTurn {
    pub turn_id: String,
    pub raw_query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_rewrite: Option<String>,
}

/// A set of fixed conversations to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicFile {
    pub conversations: Vec<Conversation>,
}

impl TopicFile {
    /// Validates turn-id uniqueness within each conversation.
    pub fn validate(&self) -> Result<()> {
        for conversation in &self.conversations {
            let mut seen = std::collections::BTreeSet::new();
            for turn in &conversation.turns {
                if !seen.insert(&turn.turn_id) {
                    return Err(Error::Data(format!(
                        "conversation {} repeats turn id {}",
                        conversation.conversation_id, turn.turn_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything produced by a dataset run.
#[derive(Debug, Clone)]
pub struct DatasetRun {
    /// Final ranked list per turn, in dataset order; keys are
    /// `{conversation_id}_{turn_id}`.
    pub run_lists: Vec<(String, RankedList)>,
    /// Line-delimited transcript records for all conversations.
    pub transcripts: String,
    /// Last feedback label of each turn that had feedback.
    pub labels: BTreeMap<String, FeedbackLabel>,
    /// Present when qrels were supplied.
    pub report: Option<EvalReport>,
}

impl DatasetRun {
    pub fn lists_by_turn(&self) -> BTreeMap<String, RankedList> {
        self.run_lists.iter().cloned().collect()
    }
}

struct ConversationOutcome {
    index: usize,
    results: Vec<(String, TurnResult)>,
    transcript: String,
}

fn run_conversation(
    index: usize,
    conversation: &Conversation,
    needs: &BTreeMap<(String, u32), InformationNeed>,
    cfg: &PipelineConfig,
    deps: &PipelineDeps,
) -> Result<ConversationOutcome> {
    let patience = cfg
        .patience
        .unwrap_or(cfg.feedback_rounds * conversation.turns.len() as u32);
    let mut state = ConversationState::new(conversation.conversation_id.clone(), patience);
    let mut results = Vec::new();
    for (pos, topic_turn) in conversation.turns.iter().enumerate() {
        let ordinal = (pos + 1) as u32;
        let turn_id = format!("{}_{}", conversation.conversation_id, topic_turn.turn_id);
        let query = Utterance::new(Discourse::Query, topic_turn.raw_query.clone(), ordinal);
        let key = (conversation.conversation_id.clone(), ordinal);
        let in_need = needs.get(&key);
        if cfg.simulation_enabled() && in_need.is_none() {
            return Err(Error::Config(format!(
                "no information need for conversation {} turn {} (position {ordinal})",
                conversation.conversation_id, topic_turn.turn_id
            )));
        }
        let result = run_turn(&turn_id, &query, in_need, &mut state, cfg, deps)?;
        results.push((turn_id, result));
    }
    Ok(ConversationOutcome {
        index,
        results,
        transcript: state.serialize_transcript(),
    })
}

/// Runs every conversation of a topic file through the pipeline.
///
/// Information needs are matched by conversation id and 1-based turn
/// position. Evaluation runs when qrels are given. Conversations are
/// independent; with `workers > 1` they run in a thread pool, and the
/// outputs are reassembled in dataset order. Determinism across runs
/// with a shared sequential mock client requires `workers = 1`.
pub fn run_dataset(
    topics: &TopicFile,
    ins: &[InformationNeed],
    qrels: Option<&Qrels>,
    cfg: &PipelineConfig,
    deps: &PipelineDeps,
) -> Result<DatasetRun> {
    topics.validate()?;
    if cfg.simulation_enabled() {
        deps.simulator()?;
    }
    let needs: BTreeMap<(String, u32), InformationNeed> = ins
        .iter()
        .map(|n| ((n.conversation_id.clone(), n.turn), n.clone()))
        .collect();

    let workers = cfg.workers.max(1).min(topics.conversations.len().max(1));
    let mut outcomes: Vec<ConversationOutcome> = if workers <= 1 {
        let mut out = Vec::new();
        for (index, conversation) in topics.conversations.iter().enumerate() {
            out.push(run_conversation(index, conversation, &needs, cfg, deps)?);
        }
        out
    } else {
        let collected: Mutex<Vec<Result<ConversationOutcome>>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for worker in 0..workers {
                let collected = &collected;
                let needs = &needs;
                scope.spawn(move || {
                    for (index, conversation) in topics.conversations.iter().enumerate() {
                        if index % workers != worker {
                            continue;
                        }
                        let outcome = run_conversation(index, conversation, needs, cfg, deps);
                        collected.lock().expect("collector lock").push(outcome);
                    }
                });
            }
        });
        let mut out = Vec::new();
        for outcome in collected.into_inner().expect("collector lock") {
            out.push(outcome?);
        }
        out
    };
    outcomes.sort_by_key(|o| o.index);

    let mut run_lists = Vec::new();
    let mut labels = BTreeMap::new();
    let mut transcripts = String::new();
    for outcome in outcomes {
        transcripts.push_str(&outcome.transcript);
        for (turn_id, result) in outcome.results {
            if let Some(label) = result.feedback_labels.last() {
                labels.insert(turn_id.clone(), *label);
            }
            run_lists.push((turn_id, result.final_list));
        }
    }

    let report = match qrels {
        Some(qrels) => {
            let lists: BTreeMap<String, RankedList> = run_lists.iter().cloned().collect();
            let mut report = evaluate_run(&lists, qrels, cfg.eval_depth)?;
            if !labels.is_empty() {
                let (strata, warnings) = stratify_by_feedback(&report.per_turn, &labels);
                report.strata = strata;
                report.warnings.extend(warnings);
            }
            Some(report)
        }
        None => None,
    };

    Ok(DatasetRun {
        run_lists,
        transcripts,
        labels,
        report,
    })
}
