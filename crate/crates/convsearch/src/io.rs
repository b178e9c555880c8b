//! On-disk formats: passage collections, topic files, information
//! needs, question pools, qrels, run files, transcripts, and pipeline
//! configuration documents.
//!
//! Parse failures carry the file path and 1-based line number where
//! applicable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::model::{InformationNeed, Passage, RankedEntry, RankedList};
use crate::pipeline::{PipelineConfig, TopicFile};

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads a passage collection, auto-detected by extension: `.tsv`
/// holds `id<TAB>text` lines, `.jsonl` holds one `{"id", "text"}`
/// object per line.
pub fn load_collection(path: &Path) -> Result<Vec<Passage>> {
    let content = read_to_string(path)?;
    let extension = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match extension.as_str() {
        "tsv" => parse_collection_tsv(&content, path),
        "jsonl" => parse_collection_jsonl(&content, path),
        other => Err(Error::Config(format!(
            "unsupported collection extension {other:?} for {} (expected .tsv or .jsonl)",
            path.display()
        ))),
    }
}

fn parse_collection_tsv(content: &str, path: &Path) -> Result<Vec<Passage>> {
    let mut passages = Vec::new();
    for (number, line) in content.lines().enumerate() {
        let number = number + 1;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, number, "expected id<TAB>text"))?;
        if id.is_empty() || text.is_empty() {
            return Err(parse_error(path, number, "empty passage id or text"));
        }
        passages.push(Passage {
            id: id.to_string(),
            text: text.to_string(),
        });
    }
    Ok(passages)
}

fn parse_collection_jsonl(content: &str, path: &Path) -> Result<Vec<Passage>> {
    let mut passages = Vec::new();
    for (number, line) in content.lines().enumerate() {
        let number = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let passage: Passage =
            serde_json::from_str(line).map_err(|e| parse_error(path, number, e.to_string()))?;
        if passage.id.is_empty() || passage.text.is_empty() {
            return Err(parse_error(path, number, "empty passage id or text"));
        }
        passages.push(passage);
    }
    Ok(passages)
}

/// Loads the fixed conversations to run (JSON).
pub fn load_topics(path: &Path) -> Result<TopicFile> {
    let content = read_to_string(path)?;
    let topics: TopicFile =
        serde_json::from_str(&content).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    topics.validate()?;
    Ok(topics)
}

/// Wrapper for the information-need file (JSON).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedFile {
    pub records: Vec<InformationNeed>,
}

/// Loads the hidden information needs driving the simulated user.
pub fn load_needs(path: &Path) -> Result<Vec<InformationNeed>> {
    let content = read_to_string(path)?;
    let file: NeedFile =
        serde_json::from_str(&content).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    Ok(file.records)
}

#[derive(Debug, Deserialize)]
struct PoolLine {
    id: String,
    text: String,
}

/// Loads a clarifying-question pool: JSONL of `{"id", "text"}`.
pub fn load_question_pool(path: &Path) -> Result<Vec<(String, String)>> {
    let content = read_to_string(path)?;
    let mut questions = Vec::new();
    for (number, line) in content.lines().enumerate() {
        let number = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PoolLine =
            serde_json::from_str(line).map_err(|e| parse_error(path, number, e.to_string()))?;
        if parsed.id.is_empty() || parsed.text.is_empty() {
            return Err(parse_error(path, number, "empty question id or text"));
        }
        questions.push((parsed.id, parsed.text));
    }
    Ok(questions)
}

/// Loads relevance judgments (`topic_turn 0 passage_id grade` lines).
pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let content = read_to_string(path)?;
    Qrels::parse(&content, &path.display().to_string())
}

/// Formats ranked lists as a TREC run file: one line per entry,
/// `topic_turn Q0 passage_id rank score tag`, ranks starting at 1 and
/// scores printed with six decimals.
pub fn format_run_file<'a, I>(lists: I, tag: &str) -> String
where
    I: IntoIterator<Item = (&'a String, &'a RankedList)>,
{
    let mut out = String::new();
    for (topic, list) in lists {
        for (position, entry) in list.entries.iter().enumerate() {
            out.push_str(&format!(
                "{topic} Q0 {} {} {:.6} {tag}\n",
                entry.passage_id,
                position + 1,
                entry.score
            ));
        }
    }
    out
}

/// Parses a TREC run file back into per-turn ranked lists. Entries are
/// ordered by their rank field; ranks must start at 1 and increase by
/// one within a topic.
pub fn parse_run_file(content: &str, path: &Path) -> Result<BTreeMap<String, RankedList>> {
    let mut grouped: BTreeMap<String, Vec<(usize, RankedEntry)>> = BTreeMap::new();
    for (number, line) in content.lines().enumerate() {
        let number = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_error(
                path,
                number,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| parse_error(path, number, format!("invalid rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| parse_error(path, number, format!("invalid score {:?}", fields[4])))?;
        grouped.entry(fields[0].to_string()).or_default().push((
            rank,
            RankedEntry {
                passage_id: fields[2].to_string(),
                score,
            },
        ));
    }
    let mut lists = BTreeMap::new();
    for (topic, mut entries) in grouped {
        entries.sort_by_key(|(rank, _)| *rank);
        for (expected, (rank, _)) in entries.iter().enumerate() {
            if *rank != expected + 1 {
                return Err(Error::Data(format!(
                    "{}: topic {topic} has rank {rank} where {} was expected",
                    path.display(),
                    expected + 1
                )));
            }
        }
        let depth = entries.len();
        let entries: Vec<RankedEntry> = entries.into_iter().map(|(_, e)| e).collect();
        lists.insert(topic, RankedList::new(entries, depth));
    }
    Ok(lists)
}

/// Reads a run file from disk.
pub fn load_run_file(path: &Path) -> Result<BTreeMap<String, RankedList>> {
    let content = read_to_string(path)?;
    parse_run_file(&content, path)
}

/// A prebuilt index saved to disk: the analyzer settings it was built
/// with, the inverted index, and the passage texts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexArtifact {
    pub analyzer: crate::analysis::AnalyzerConfig,
    pub index: crate::index::InvertedIndex,
    pub store: crate::index::PassageStore,
}

/// Writes an index artifact as JSON.
pub fn save_index(path: &Path, artifact: &IndexArtifact) -> Result<()> {
    let json = serde_json::to_string(artifact)
        .map_err(|e| Error::Data(format!("cannot serialize index: {e}")))?;
    write_text(path, &json)
}

/// Reads an index artifact back.
pub fn load_index(path: &Path) -> Result<IndexArtifact> {
    let content = read_to_string(path)?;
    serde_json::from_str(&content).map_err(|e| parse_error(path, e.line(), e.to_string()))
}

/// Loads a turn-to-feedback-label map (JSON object keyed by
/// `{conversation_id}_{turn_id}`).
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, crate::expansion::FeedbackLabel>> {
    let content = read_to_string(path)?;
    serde_json::from_str(&content).map_err(|e| parse_error(path, e.line(), e.to_string()))
}

/// Loads a pipeline configuration document (JSON). Missing fields take
/// their defaults.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let content = read_to_string(path)?;
    let cfg: PipelineConfig =
        serde_json::from_str(&content).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    if cfg.feedback_rounds > 10 {
        return Err(Error::Config(format!(
            "feedback_rounds is {} but at most 10 rounds are supported",
            cfg.feedback_rounds
        )));
    }
    Ok(cfg)
}

/// Writes text to a file, creating parent directories as needed.
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}
