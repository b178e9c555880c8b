//! Simulated user: answers clarifying questions and gives feedback on
//! responses, conditioned on a per-turn information need and the
//! conversation history, via a completion client. Feedback polarity is
//! classified by a deterministic rule cascade whose pattern lists live
//! in a data file.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::Analyzer;
use crate::client::{CompletionParams, ModelClient};
use crate::error::{Error, Result};
use crate::expansion::FeedbackLabel;
use crate::model::{
    ConversationState, Discourse, InformationNeed, Move, SystemKind, SystemUtterance, Utterance,
};

/// Built-in task description for answering clarifying questions.
pub const DEFAULT_ANSWER_TASK: &str = include_str!("../data/prompts/answer_task.txt");
/// Built-in task description for giving feedback.
pub const DEFAULT_FEEDBACK_TASK: &str = include_str!("../data/prompts/feedback_task.txt");
/// Built-in sample transcript for answering clarifying questions.
pub const DEFAULT_ANSWER_EXAMPLES: &str = include_str!("../data/prompts/answer_examples.txt");
/// Built-in sample transcript for giving feedback.
pub const DEFAULT_FEEDBACK_EXAMPLES: &str = include_str!("../data/prompts/feedback_examples.txt");
/// Built-in classifier pattern lists.
pub const DEFAULT_FEEDBACK_PATTERNS: &str = include_str!("../data/feedback_patterns.json");

/// Substring pattern lists driving [`classify_feedback`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackPatterns {
    pub negative: Vec<String>,
    pub positive: Vec<String>,
}

impl Default for FeedbackPatterns {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_FEEDBACK_PATTERNS).expect("built-in patterns parse")
    }
}

impl FeedbackPatterns {
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        serde_json::from_str(&content).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Classifies feedback text by a deterministic rule cascade:
/// (1) a negation pattern makes it negative; (2) otherwise a question
/// mark plus at least one content term makes it negative with a
/// clarifying sub-question; (3) otherwise a gratitude pattern makes it
/// positive; (4) anything else is negative.
pub fn classify_feedback(
    text: &str,
    patterns: &FeedbackPatterns,
    analyzer: &Analyzer,
) -> FeedbackLabel {
    let lowered = text.to_lowercase();
    if patterns
        .negative
        .iter()
        .any(|p| lowered.contains(p.as_str()))
    {
        return FeedbackLabel::negative(false);
    }
    if lowered.contains('?') && !analyzer.analyze(text).is_empty() {
        return FeedbackLabel::negative(true);
    }
    if patterns
        .positive
        .iter()
        .any(|p| lowered.contains(p.as_str()))
    {
        return FeedbackLabel::positive();
    }
    FeedbackLabel::negative(false)
}

/// Deterministic prompt assembly for one simulator call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub task_description: String,
    pub information_need: String,
    pub few_shot_transcripts: Vec<String>,
    pub history_rendering: String,
}

impl PromptSpec {
    /// Renders the full prompt: task description, sample transcripts,
    /// information need, history, and the cue for the user's next line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(self.task_description.trim_end());
        out.push_str("\n\n");
        for transcript in &self.few_shot_transcripts {
            out.push_str(transcript.trim_end());
            out.push_str("\n\n");
        }
        out.push_str("Information need: ");
        out.push_str(&self.information_need);
        out.push('\n');
        out.push_str(&self.history_rendering);
        out.push_str("User:");
        out
    }
}

/// One history move per line, prefixed by the speaking side.
pub fn render_history(state: &ConversationState) -> String {
    let mut out = String::new();
    for mv in &state.history {
        match mv {
            Move::User(u) => {
                out.push_str("User: ");
                out.push_str(&u.text);
            }
            Move::System(s) => {
                out.push_str("System: ");
                out.push_str(&s.text);
            }
        }
        out.push('\n');
    }
    out
}

/// The simulated user.
pub struct Simulator {
    pub client: Arc<dyn ModelClient>,
    pub params: CompletionParams,
    pub analyzer: Arc<Analyzer>,
    pub patterns: FeedbackPatterns,
    pub answer_task: String,
    pub feedback_task: String,
    pub answer_examples: Vec<String>,
    pub feedback_examples: Vec<String>,
}

impl Simulator {
    pub fn new(client: Arc<dyn ModelClient>) -> Self {
        Self {
            client,
            params: CompletionParams::default(),
            analyzer: Arc::new(Analyzer::default()),
            patterns: FeedbackPatterns::default(),
            answer_task: DEFAULT_ANSWER_TASK.to_string(),
            feedback_task: DEFAULT_FEEDBACK_TASK.to_string(),
            answer_examples: vec![DEFAULT_ANSWER_EXAMPLES.to_string()],
            feedback_examples: vec![DEFAULT_FEEDBACK_EXAMPLES.to_string()],
        }
    }

    /// History rendering plus the pending system move, unless that move
    /// is already the last history entry.
    fn history_with_pending(state: &ConversationState, pending: &SystemUtterance) -> String {
        let mut rendering = render_history(state);
        let already_last = matches!(
            state.history.last(),
            Some(Move::System(last)) if last == pending
        );
        if !already_last {
            rendering.push_str("System: ");
            rendering.push_str(&pending.text);
            rendering.push('\n');
        }
        rendering
    }

    /// Completes a prompt, retrying once on an empty completion.
    fn complete_nonempty(&self, prompt: &str) -> Result<String> {
        for _ in 0..2 {
            let text = self
                .client
                .complete(prompt, &self.params)
                .map_err(|e| Error::SimulatorUnavailable(e.to_string()))?;
            if !text.is_empty() {
                return Ok(text);
            }
        }
        Err(Error::EmptyCompletion)
    }

    /// Answers a clarifying question in character.
    pub fn answer_clarifying(
        &self,
        in_need: &InformationNeed,
        cq: &SystemUtterance,
        state: &ConversationState,
    ) -> Result<Utterance> {
        debug_assert_eq!(cq.kind, SystemKind::ClarifyingQuestion);
        let spec = PromptSpec {
            task_description: self.answer_task.clone(),
            information_need: in_need.description.clone(),
            few_shot_transcripts: self.answer_examples.clone(),
            history_rendering: Self::history_with_pending(state, cq),
        };
        let text = self.complete_nonempty(&spec.render())?;
        Ok(Utterance::new(Discourse::Answer, text, cq.turn))
    }

    /// Judges a response, returning the feedback utterance and its
    /// classified label.
    pub fn give_feedback(
        &self,
        in_need: &InformationNeed,
        response: &SystemUtterance,
        state: &ConversationState,
    ) -> Result<(Utterance, FeedbackLabel)> {
        debug_assert_eq!(response.kind, SystemKind::Response);
        if state.patience == 0 {
            return Err(Error::StateClosed {
                conversation_id: state.conversation_id.clone(),
                reason: "patience exhausted".into(),
            });
        }
        let spec = PromptSpec {
            task_description: self.feedback_task.clone(),
            information_need: in_need.description.clone(),
            few_shot_transcripts: self.feedback_examples.clone(),
            history_rendering: Self::history_with_pending(state, response),
        };
        let text = self.complete_nonempty(&spec.render())?;
        let label = classify_feedback(&text, &self.patterns, &self.analyzer);
        Ok((
            Utterance::new(Discourse::Feedback, text, response.turn),
            label,
        ))
    }
}

/// Whether the feedback loop may run another round: false once patience
/// is exhausted, or on positive feedback when `stop_on_positive` is set.
pub fn should_continue(
    state: &ConversationState,
    label: &FeedbackLabel,
    stop_on_positive: bool,
) -> bool {
    if state.patience == 0 {
        return false;
    }
    !(stop_on_positive && label.is_positive())
}
