//! Shared conversational and retrieval data model.
//!
//! A conversation is an ordered list of moves. User moves carry a
//! discourse type (query, answer to a clarifying question, feedback);
//! system moves are either ranked-result responses or clarifying
//! questions. [`ConversationState`] tracks the history together with
//! the remaining user patience, which only feedback moves consume.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::Analyzer;
use crate::error::{Error, Result};

/// A retrievable unit of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Discourse type of a user move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discourse {
    Query,
    Answer,
    Feedback,
}

/// A user move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub discourse: Discourse,
    pub text: String,
    pub turn: u32,
}

impl Utterance {
    pub fn new(discourse: Discourse, text: impl Into<String>, turn: u32) -> Self {
        Self {
            discourse,
            text: text.into(),
            turn,
        }
    }
}

/// Kind of a system move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Response,
    ClarifyingQuestion,
}

/// A system move. Responses list the passages they summarize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemUtterance {
    pub kind: SystemKind,
    pub text: String,
    pub turn: u32,
    #[serde(default)]
    pub sourced_passages: Vec<String>,
}

impl SystemUtterance {
    pub fn clarifying_question(text: impl Into<String>, turn: u32) -> Self {
        Self {
            kind: SystemKind::ClarifyingQuestion,
            text: text.into(),
            turn,
            sourced_passages: Vec::new(),
        }
    }

    pub fn response(text: impl Into<String>, turn: u32, sourced_passages: Vec<String>) -> Self {
        Self {
            kind: SystemKind::Response,
            text: text.into(),
            turn,
            sourced_passages,
        }
    }
}

/// One conversational move, from either side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Move {
    User(Utterance),
    System(SystemUtterance),
}

impl Move {
    pub fn turn(&self) -> u32 {
        match self {
            Move::User(u) => u.turn,
            Move::System(s) => s.turn,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Move::User(u) => &u.text,
            Move::System(s) => &s.text,
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(
            self,
            Move::User(Utterance {
                discourse: Discourse::Feedback,
                ..
            })
        )
    }
}

/// One-sentence description of what the user wants at a given turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationNeed {
    pub conversation_id: String,
    pub turn: u32,
    pub description: String,
}

/// Mutable per-conversation state threaded through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationState {
    pub conversation_id: String,
    pub history: Vec<Move>,
    /// Remaining feedback rounds the user will tolerate.
    pub patience: u32,
    pub current_turn: u32,
    /// Set by the orchestrator when feedback indicates satisfaction.
    pub satisfied: bool,
}

impl ConversationState {
    pub fn new(conversation_id: impl Into<String>, patience: u32) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            history: Vec::new(),
            patience,
            current_turn: 0,
            satisfied: false,
        }
    }

    /// Appends a move, enforcing turn ordering and the patience budget.
    ///
    /// Feedback moves require an open state (not satisfied, patience
    /// above zero) and consume one unit of patience. Clarifying
    /// questions, answers, queries, and responses never touch patience.
    pub fn append_move(&mut self, mv: Move) -> Result<()> {
        let turn = mv.turn();
        if turn != self.current_turn && turn != self.current_turn + 1 {
            return Err(Error::InvalidTurn {
                current: self.current_turn,
                got: turn,
            });
        }
        if mv.is_feedback() {
            if self.satisfied {
                return Err(Error::StateClosed {
                    conversation_id: self.conversation_id.clone(),
                    reason: "information need already satisfied".into(),
                });
            }
            if self.patience == 0 {
                return Err(Error::StateClosed {
                    conversation_id: self.conversation_id.clone(),
                    reason: "patience exhausted".into(),
                });
            }
            self.patience -= 1;
        }
        self.current_turn = self.current_turn.max(turn);
        self.history.push(mv);
        Ok(())
    }

    /// Serializes the history as one JSON object per line.
    pub fn serialize_transcript(&self) -> String {
        let mut out = String::new();
        for mv in &self.history {
            let record = TranscriptRecord::from_move(&self.conversation_id, mv);
            out.push_str(&serde_json::to_string(&record).expect("transcript record serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a state by replaying transcript records through
    /// [`ConversationState::append_move`].
    ///
    /// Patience is not part of the wire format, so the caller supplies
    /// the budget the conversation started with; the replay consumes
    /// one unit per feedback move, exactly as the original run did.
    pub fn from_transcript(records: &[TranscriptRecord], initial_patience: u32) -> Result<Self> {
        let conversation_id = records
            .first()
            .map(|r| r.conversation_id.clone())
            .unwrap_or_default();
        let mut state = ConversationState::new(conversation_id, initial_patience);
        for record in records {
            if record.conversation_id != state.conversation_id {
                return Err(Error::Data(format!(
                    "transcript mixes conversations {} and {}",
                    state.conversation_id, record.conversation_id
                )));
            }
            state.append_move(record.to_move()?)?;
        }
        Ok(state)
    }
}

/// Which side produced a transcript record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    System,
}

/// Wire form of one move: one JSON object per transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub conversation_id: String,
    pub turn: u32,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discourse: Option<Discourse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SystemKind>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sourced_passages: Vec<String>,
}

impl TranscriptRecord {
    pub fn from_move(conversation_id: &str, mv: &Move) -> Self {
        match mv {
            Move::User(u) => Self {
                conversation_id: conversation_id.to_string(),
                turn: u.turn,
                role: Role::User,
                discourse: Some(u.discourse),
                kind: None,
                text: u.text.clone(),
                sourced_passages: Vec::new(),
            },
            Move::System(s) => Self {
                conversation_id: conversation_id.to_string(),
                turn: s.turn,
                role: Role::System,
                discourse: None,
                kind: Some(s.kind),
                text: s.text.clone(),
                sourced_passages: s.sourced_passages.clone(),
            },
        }
    }

    pub fn to_move(&self) -> Result<Move> {
        match self.role {
            Role::User => {
                let discourse = self.discourse.ok_or_else(|| {
                    Error::Data("user transcript record missing discourse".into())
                })?;
                Ok(Move::User(Utterance::new(
                    discourse,
                    self.text.clone(),
                    self.turn,
                )))
            }
            Role::System => {
                let kind = self
                    .kind
                    .ok_or_else(|| Error::Data("system transcript record missing kind".into()))?;
                Ok(Move::System(SystemUtterance {
                    kind,
                    text: self.text.clone(),
                    turn: self.turn,
                    sourced_passages: self.sourced_passages.clone(),
                }))
            }
        }
    }
}

/// Parses line-delimited transcript records, reporting the failing line.
pub fn parse_transcript(content: &str, path: &str) -> Result<Vec<TranscriptRecord>> {
    let mut records = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TranscriptRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// A query as a bag of positively weighted terms plus its surface text.
///
/// The surface text feeds prompt templates; the term map feeds
/// retrieval. Expansion stages add or re-weight terms without touching
/// the map entries they inherit unless the algorithm says otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    pub original_text: String,
    pub terms: BTreeMap<String, f64>,
}

impl WeightedQuery {
    /// Builds a query whose term weights are raw term frequencies.
    pub fn from_text(text: &str, analyzer: &Analyzer) -> Self {
        let mut terms: BTreeMap<String, f64> = BTreeMap::new();
        for token in analyzer.analyze(text) {
            *terms.entry(token).or_insert(0.0) += 1.0;
        }
        Self {
            original_text: text.to_string(),
            terms,
        }
    }

    /// Builds a query with unit weight per distinct term.
    pub fn from_text_unit(text: &str, analyzer: &Analyzer) -> Self {
        let mut query = Self::from_text(text, analyzer);
        for weight in query.terms.values_mut() {
            *weight = 1.0;
        }
        query
    }

    pub fn max_weight(&self) -> Option<f64> {
        self.terms
            .values()
            .copied()
            .fold(None, |acc, w| Some(acc.map_or(w, |a: f64| a.max(w))))
    }
}

impl fmt::Display for WeightedQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.original_text)
    }
}

/// One scored entry of a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
}

/// Ordered retrieval output, scores non-increasing, ids distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    pub depth_limit: usize,
}

impl RankedList {
    pub fn new(entries: Vec<RankedEntry>, depth_limit: usize) -> Self {
        Self {
            entries,
            depth_limit,
        }
    }

    pub fn empty(depth_limit: usize) -> Self {
        Self {
            entries: Vec::new(),
            depth_limit,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.passage_id.as_str()).collect()
    }

    /// Ids of the first `k` entries.
    pub fn top_ids(&self, k: usize) -> Vec<String> {
        self.entries
            .iter()
            .take(k)
            .map(|e| e.passage_id.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query_move(turn: u32) -> Move {
        Move::User(Utterance::new(Discourse::Query, "solar power", turn))
    }

    fn feedback_move(turn: u32, text: &str) -> Move {
        Move::User(Utterance::new(Discourse::Feedback, text, turn))
    }

    fn response_move(turn: u32) -> Move {
        Move::System(SystemUtterance::response(
            "Solar power converts sunlight.",
            turn,
            vec!["p1".into()],
        ))
    }

    #[test]
    fn feedback_decrements_patience() {
        let mut state = ConversationState::new("c1", 2);
        state.append_move(query_move(1)).unwrap();
        state.append_move(response_move(1)).unwrap();
        state
            .append_move(feedback_move(1, "That's not it"))
            .unwrap();
        assert_eq!(state.patience, 1);
    }

    #[test]
    fn feedback_at_zero_patience_is_state_closed() {
        let mut state = ConversationState::new("c1", 0);
        state.append_move(query_move(1)).unwrap();
        state.append_move(response_move(1)).unwrap();
        let err = state.append_move(feedback_move(1, "nope")).unwrap_err();
        assert!(matches!(err, Error::StateClosed { .. }));
    }

    #[test]
    fn feedback_after_satisfied_is_state_closed() {
        let mut state = ConversationState::new("c1", 3);
        state.append_move(query_move(1)).unwrap();
        state.append_move(response_move(1)).unwrap();
        state.satisfied = true;
        let err = state.append_move(feedback_move(1, "more?")).unwrap_err();
        assert!(matches!(err, Error::StateClosed { .. }));
    }

    #[test]
    fn questions_do_not_consume_patience() {
        let mut state = ConversationState::new("c1", 1);
        state.append_move(query_move(1)).unwrap();
        state
            .append_move(Move::System(SystemUtterance::clarifying_question(
                "Which kind?",
                1,
            )))
            .unwrap();
        state
            .append_move(Move::User(Utterance::new(Discourse::Answer, "rooftop", 1)))
            .unwrap();
        assert_eq!(state.patience, 1);
    }

    #[test]
    fn turn_must_follow_current() {
        let mut state = ConversationState::new("c1", 2);
        state.append_move(query_move(1)).unwrap();
        let err = state.append_move(query_move(3)).unwrap_err();
        assert!(matches!(err, Error::InvalidTurn { current: 1, got: 3 }));
    }

    #[test]
    fn empty_history_serializes_to_zero_lines() {
        let state = ConversationState::new("c1", 2);
        assert_eq!(state.serialize_transcript(), "");
    }

    #[test]
    fn query_and_response_serialize_to_two_lines() {
        let mut state = ConversationState::new("c1", 2);
        state.append_move(query_move(1)).unwrap();
        state.append_move(response_move(1)).unwrap();
        let transcript = state.serialize_transcript();
        let lines: Vec<&str> = transcript.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"role\":\"user\""));
        assert!(lines[1].contains("\"role\":\"system\""));
    }

    #[test]
    fn transcript_round_trips() {
        let mut state = ConversationState::new("c1", 3);
        state.append_move(query_move(1)).unwrap();
        state
            .append_move(Move::System(SystemUtterance::clarifying_question(
                "Which kind?",
                1,
            )))
            .unwrap();
        state
            .append_move(Move::User(Utterance::new(Discourse::Answer, "rooftop", 1)))
            .unwrap();
        state.append_move(response_move(1)).unwrap();
        state
            .append_move(feedback_move(1, "That's not what I asked"))
            .unwrap();
        let records = parse_transcript(&state.serialize_transcript(), "mem").unwrap();
        let rebuilt = ConversationState::from_transcript(&records, 3).unwrap();
        assert_eq!(rebuilt, state);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_transcript("{\"bad\": true}", "t.jsonl").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("t.jsonl:1:"), "{msg}");
    }

    #[test]
    fn from_text_uses_term_frequencies() {
        let analyzer = Analyzer::default();
        let q = WeightedQuery::from_text("solar solar wind", &analyzer);
        assert_eq!(q.terms.get("solar"), Some(&2.0));
        assert_eq!(q.terms.get("wind"), Some(&1.0));
        assert_eq!(q.original_text, "solar solar wind");
    }

    #[test]
    fn from_text_unit_flattens_weights() {
        let analyzer = Analyzer::default();
        let q = WeightedQuery::from_text_unit("solar solar wind", &analyzer);
        assert_eq!(q.terms.get("solar"), Some(&1.0));
        assert_eq!(q.terms.get("wind"), Some(&1.0));
    }
}
