//! Crate-wide error type and exit-code mapping.

use std::time::Duration;

use crate::model::RankedList;

/// Errors produced by any pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("conversation {conversation_id} is closed to further feedback ({reason})")]
    StateClosed {
        conversation_id: String,
        reason: String,
    },
    #[error("move turn {got} does not follow current turn {current}")]
    InvalidTurn { current: u32, got: u32 },
    #[error("duplicate passage id {0}")]
    DuplicateDocument(String),
    #[error("collection contains no passages")]
    EmptyCollection,
    #[error("no pool question shares a term with the query")]
    PoolMiss,
    #[error("no entities above the saliency threshold")]
    NoEntities,
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("reranker unavailable ({reason}); original ranking preserved")]
    RerankerUnavailable {
        reason: String,
        /// Ranking as it stood before the failed rerank attempt.
        partial: RankedList,
    },
    #[error("simulator unavailable: {0}")]
    SimulatorUnavailable(String),
    #[error("model returned an empty completion after retry")]
    EmptyCompletion,
    #[error("mock response script exhausted")]
    MockExhausted,
    #[error("remote service returned status {status} after {attempts} attempts")]
    Remote { status: u16, attempts: u32 },
    #[error("remote request timed out after {0:?}")]
    Timeout(Duration),
    #[error("no relevance judgments for turn {0}")]
    MissingJudgments(String),
    #[error("paired samples have zero variance with unequal means")]
    DegenerateVariance,
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 0 ok, 1 configuration, 2 data, 3 remote service.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::EmbedderUnavailable(_)
            | Error::RerankerUnavailable { .. }
            | Error::SimulatorUnavailable(_)
            | Error::EmptyCompletion
            | Error::MockExhausted
            | Error::Remote { .. }
            | Error::Timeout(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(Error::Data("x".into()).exit_code(), 2);
        assert_eq!(Error::EmptyCollection.exit_code(), 2);
        assert_eq!(
            Error::Remote {
                status: 500,
                attempts: 3
            }
            .exit_code(),
            3
        );
        assert_eq!(Error::MockExhausted.exit_code(), 3);
    }

    #[test]
    fn stage_wrapping_preserves_exit_code() {
        let err = Error::Config("bad".into()).in_stage("retrieval");
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("retrieval"));
    }
}
