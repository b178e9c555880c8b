//! TREC-style effectiveness metrics, paired significance testing, and
//! feedback-stratified reporting.
//!
//! Binary measures treat grade ≥ `binary_threshold` as relevant;
//! unjudged documents count as grade 0. nDCG uses the gain 2^g − 1 and
//! the discount log2(i + 1).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::expansion::{FeedbackLabel, Polarity};
use crate::model::RankedList;

/// Graded relevance judgments keyed by turn and passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
    pub binary_threshold: u32,
}

impl Qrels {
    pub fn new(binary_threshold: u32) -> Self {
        Self {
            judgments: BTreeMap::new(),
            binary_threshold,
        }
    }

    pub fn insert(&mut self, turn: impl Into<String>, passage: impl Into<String>, grade: u32) {
        self.judgments
            .entry(turn.into())
            .or_default()
            .insert(passage.into(), grade);
    }

    /// Parses whitespace-delimited lines `topic_turn 0 passage_id grade`.
    pub fn parse(content: &str, path: &str) -> Result<Self> {
        let mut qrels = Qrels::new(2);
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |message: String| Error::Parse {
                path: path.to_string(),
                line: idx + 1,
                message,
            };
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let grade: u32 = fields[3]
                .parse()
                .map_err(|e| err(format!("bad grade {:?}: {e}", fields[3])))?;
            qrels.insert(fields[0], fields[2], grade);
        }
        Ok(qrels)
    }

    pub fn has_turn(&self, turn: &str) -> bool {
        self.judgments.contains_key(turn)
    }

    pub fn turns(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Grade of a passage for a turn; unjudged passages are grade 0.
    pub fn grade(&self, turn: &str, passage: &str) -> u32 {
        self.judgments
            .get(turn)
            .and_then(|docs| docs.get(passage))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_relevant(&self, turn: &str, passage: &str) -> bool {
        self.grade(turn, passage) >= self.binary_threshold
    }

    /// Number of judged passages at or above the binary threshold.
    pub fn judged_relevant(&self, turn: &str) -> usize {
        self.judgments.get(turn).map_or(0, |docs| {
            docs.values()
                .filter(|g| **g >= self.binary_threshold)
                .count()
        })
    }

    /// All grades for a turn, descending, for ideal-DCG computation.
    fn sorted_grades(&self, turn: &str) -> Vec<u32> {
        let mut grades: Vec<u32> = self
            .judgments
            .get(turn)
            .map_or_else(Vec::new, |docs| docs.values().copied().collect());
        grades.sort_unstable_by(|a, b| b.cmp(a));
        grades
    }

    fn require_turn(&self, turn: &str) -> Result<()> {
        if self.has_turn(turn) {
            Ok(())
        } else {
            Err(Error::MissingJudgments(turn.to_string()))
        }
    }
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Normalized discounted cumulative gain at `k`; 0 when the ideal DCG
/// is 0. Unknown turns are an error.
pub fn ndcg_at_k(list: &RankedList, qrels: &Qrels, turn: &str, k: usize) -> Result<f64> {
    qrels.require_turn(turn)?;
    let actual = dcg(list
        .entries
        .iter()
        .take(k)
        .map(|e| qrels.grade(turn, &e.passage_id)));
    let ideal = dcg(qrels.sorted_grades(turn).into_iter().take(k));
    if ideal == 0.0 {
        Ok(0.0)
    } else {
        Ok(actual / ideal)
    }
}

/// Mean average precision at `depth` over judged-relevant documents.
pub fn map_at_depth(list: &RankedList, qrels: &Qrels, turn: &str, depth: usize) -> Result<f64> {
    qrels.require_turn(turn)?;
    let total_relevant = qrels.judged_relevant(turn);
    if total_relevant == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, entry) in list.entries.iter().take(depth).enumerate() {
        if qrels.is_relevant(turn, &entry.passage_id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Reciprocal rank of the first relevant document within `depth`,
/// 0 when none is retrieved.
pub fn mrr_at_depth(list: &RankedList, qrels: &Qrels, turn: &str, depth: usize) -> Result<f64> {
    qrels.require_turn(turn)?;
    for (i, entry) in list.entries.iter().take(depth).enumerate() {
        if qrels.is_relevant(turn, &entry.passage_id) {
            return Ok(1.0 / (i + 1) as f64);
        }
    }
    Ok(0.0)
}

/// Fraction of judged-relevant documents retrieved within `depth`.
pub fn recall_at_depth(list: &RankedList, qrels: &Qrels, turn: &str, depth: usize) -> Result<f64> {
    qrels.require_turn(turn)?;
    let total_relevant = qrels.judged_relevant(turn);
    if total_relevant == 0 {
        return Ok(0.0);
    }
    let retrieved = list
        .entries
        .iter()
        .take(depth)
        .filter(|e| qrels.is_relevant(turn, &e.passage_id))
        .count();
    Ok(retrieved as f64 / total_relevant as f64)
}

/// One turn's metric values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub recall: f64,
    pub map: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub ndcg_at_3: f64,
}

impl TurnMetrics {
    pub fn compute(list: &RankedList, qrels: &Qrels, turn: &str, depth: usize) -> Result<Self> {
        Ok(Self {
            recall: recall_at_depth(list, qrels, turn, depth)?,
            map: map_at_depth(list, qrels, turn, depth)?,
            mrr: mrr_at_depth(list, qrels, turn, depth)?,
            ndcg: ndcg_at_k(list, qrels, turn, depth)?,
            ndcg_at_3: ndcg_at_k(list, qrels, turn, 3)?,
        })
    }

    fn mean(values: &[TurnMetrics]) -> TurnMetrics {
        if values.is_empty() {
            return TurnMetrics::default();
        }
        let n = values.len() as f64;
        TurnMetrics {
            recall: values.iter().map(|m| m.recall).sum::<f64>() / n,
            map: values.iter().map(|m| m.map).sum::<f64>() / n,
            mrr: values.iter().map(|m| m.mrr).sum::<f64>() / n,
            ndcg: values.iter().map(|m| m.ndcg).sum::<f64>() / n,
            ndcg_at_3: values.iter().map(|m| m.ndcg_at_3).sum::<f64>() / n,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "recall" => Some(self.recall),
            "map" => Some(self.map),
            "mrr" => Some(self.mrr),
            "ndcg" => Some(self.ndcg),
            "ndcg_at_3" => Some(self.ndcg_at_3),
            _ => None,
        }
    }
}

/// Macro metrics of one feedback stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub metrics: TurnMetrics,
    pub turns: usize,
    /// Share of labeled turns in this stratum, in percent.
    pub percent: f64,
}

/// Per-turn and macro-averaged effectiveness, with optional strata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_turn: BTreeMap<String, TurnMetrics>,
    #[serde(rename = "macro")]
    pub macro_metrics: TurnMetrics,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub strata: BTreeMap<String, Stratum>,
    /// Turns with zero judged-relevant documents.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flagged_turns: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Evaluates ranked lists keyed by turn id against qrels at `depth`,
/// macro-averaging at the turn level. Turns missing from the qrels are
/// skipped with a warning rather than failing the whole report.
pub fn evaluate_run(
    lists: &BTreeMap<String, RankedList>,
    qrels: &Qrels,
    depth: usize,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (turn, list) in lists {
        if !qrels.has_turn(turn) {
            report
                .warnings
                .push(format!("turn {turn} has no judgments"));
            continue;
        }
        if qrels.judged_relevant(turn) == 0 {
            report.flagged_turns.push(turn.clone());
        }
        report.per_turn.insert(
            turn.clone(),
            TurnMetrics::compute(list, qrels, turn, depth)?,
        );
    }
    let values: Vec<TurnMetrics> = report.per_turn.values().copied().collect();
    report.macro_metrics = TurnMetrics::mean(&values);
    Ok(report)
}

/// Paired two-tailed t-test over aligned per-turn metric vectors.
///
/// Returns (t, p) with n − 1 degrees of freedom. Zero variance of the
/// differences yields (0, 1) when the means are equal and an error
/// otherwise; fewer than two pairs is an error.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "paired t-test needs aligned vectors, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Data("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        if mean == 0.0 {
            return Ok((0.0, 1.0));
        }
        return Err(Error::DegenerateVariance);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
        .map_err(|e| Error::Data(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}

/// Splits per-turn metrics into positive and negative feedback strata
/// and macro-averages each. Returns the strata plus warnings for empty
/// strata and unlabeled turns.
pub fn stratify_by_feedback(
    per_turn: &BTreeMap<String, TurnMetrics>,
    labels: &BTreeMap<String, FeedbackLabel>,
) -> (BTreeMap<String, Stratum>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<TurnMetrics>> = BTreeMap::new();
    let mut labeled = 0usize;
    for (turn, metrics) in per_turn {
        match labels.get(turn) {
            Some(label) => {
                let key = match label.polarity {
                    Polarity::Positive => "positive",
                    Polarity::Negative => "negative",
                };
                grouped.entry(key).or_default().push(*metrics);
                labeled += 1;
            }
            None => warnings.push(format!("turn {turn} has no feedback label")),
        }
    }
    let mut strata = BTreeMap::new();
    for key in ["negative", "positive"] {
        match grouped.get(key) {
            Some(values) if !values.is_empty() => {
                strata.insert(
                    key.to_string(),
                    Stratum {
                        metrics: TurnMetrics::mean(values),
                        turns: values.len(),
                        percent: 100.0 * values.len() as f64 / labeled as f64,
                    },
                );
            }
            _ => warnings.push(format!("stratum {key} is empty; omitted")),
        }
    }
    (strata, warnings)
}
