//! Clarifying questions: selection from a predefined pool (lexical or
//! embedding-scored) and template-based generation from salient
//! entities in the top results.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::Analyzer;
use crate::client::ModelClient;
use crate::error::{Error, Result};
use crate::index::{build_index, BM25Params, InvertedIndex, PassageStore};
use crate::model::{Passage, RankedList, SystemUtterance, WeightedQuery};

/// Whether the pipeline asks a clarifying question each turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarificationNeed {
    #[default]
    Never,
    Always,
}

/// Clarification stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CQConfig {
    /// Entity saliency threshold; only strictly greater passes.
    pub rho: f64,
    /// Maximum number of entities in a generated question.
    pub m: usize,
    /// How many top results feed entity extraction.
    pub top_n_results: usize,
    pub clarification_need: ClarificationNeed,
}

impl Default for CQConfig {
    fn default() -> Self {
        Self {
            rho: 0.35,
            m: 3,
            top_n_results: 3,
            clarification_need: ClarificationNeed::Never,
        }
    }
}

/// A predefined pool of clarifying questions with a lexical index over
/// their texts.
#[derive(Debug, Clone)]
pub struct QuestionPool {
    /// (id, text), sorted by id.
    questions: Vec<(String, String)>,
    index: InvertedIndex,
}

impl QuestionPool {
    pub fn build<I>(questions: I, analyzer: &Analyzer) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut questions: Vec<(String, String)> = questions.into_iter().collect();
        questions.sort_by(|a, b| a.0.cmp(&b.0));
        let index = build_index(
            questions.iter().map(|(id, text)| Passage {
                id: id.clone(),
                text: text.clone(),
            }),
            analyzer,
        )?;
        Ok(Self { questions, index })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questions(&self) -> &[(String, String)] {
        &self.questions
    }

    fn text_of(&self, id: &str) -> &str {
        self.questions
            .iter()
            .find(|(qid, _)| qid == id)
            .map(|(_, text)| text.as_str())
            .expect("selected question exists in pool")
    }
}

/// Picks the pool question with the highest BM25 score for the query.
/// Ties break by ascending question id; no term overlap at all is a
/// [`Error::PoolMiss`], letting the caller fall back or skip.
pub fn select_cq_bm25(
    pool: &QuestionPool,
    query: &WeightedQuery,
    turn: u32,
) -> Result<SystemUtterance> {
    let top = bm25_top1(pool, query)?;
    Ok(SystemUtterance::clarifying_question(
        pool.text_of(&top).to_string(),
        turn,
    ))
}

fn bm25_top1(pool: &QuestionPool, query: &WeightedQuery) -> Result<String> {
    let list = crate::index::bm25_retrieve(&pool.index, query, &BM25Params::default(), 1);
    list.entries
        .first()
        .map(|e| e.passage_id.clone())
        .ok_or(Error::PoolMiss)
}

/// Text embedding backend: text in, fixed-length vector out.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Offline embedder: L2-normalized tf·idf over the vocabulary of a
/// reference index, dimensions in sorted term order.
pub struct TfIdfEmbedder {
    analyzer: Arc<Analyzer>,
    vocabulary: Vec<String>,
    idf: Vec<f64>,
}

impl TfIdfEmbedder {
    pub fn new(analyzer: Arc<Analyzer>, reference: &InvertedIndex) -> Self {
        let vocabulary: Vec<String> = reference.terms().map(str::to_string).collect();
        let idf = vocabulary.iter().map(|t| reference.idf(t)).collect();
        Self {
            analyzer,
            vocabulary,
            idf,
        }
    }

    /// Embedder over the vocabulary of a question pool.
    pub fn for_pool(analyzer: Arc<Analyzer>, pool: &QuestionPool) -> Self {
        Self::new(analyzer, &pool.index)
    }
}

impl TextEmbedder for TfIdfEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        let tokens = self.analyzer.analyze(text);
        for token in &tokens {
            *counts.entry(token.as_str()).or_insert(0.0) += 1.0;
        }
        let mut vector = vec![0.0; self.vocabulary.len()];
        for (dim, term) in self.vocabulary.iter().enumerate() {
            if let Some(tf) = counts.get(term.as_str()) {
                vector[dim] = tf * self.idf[dim];
            }
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        Ok(vector)
    }
}

/// Embedder backed by a remote model endpoint.
pub struct RemoteEmbedder {
    pub client: Arc<dyn ModelClient>,
}

impl TextEmbedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.client.embed(text)
    }
}

/// Cosine similarity; zero when either vector has zero magnitude.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Picks the pool question whose embedding is closest (cosine) to the
/// query embedding. Ties break by ascending question id.
pub fn select_cq_embedding(
    pool: &QuestionPool,
    query: &WeightedQuery,
    embedder: &dyn TextEmbedder,
    turn: u32,
) -> Result<SystemUtterance> {
    if pool.is_empty() {
        return Err(Error::PoolMiss);
    }
    let wrap = |e: Error| Error::EmbedderUnavailable(e.to_string());
    let query_vec = embedder.embed(&query.original_text).map_err(wrap)?;
    let mut best: Option<(f64, &str, &str)> = None;
    for (id, text) in &pool.questions {
        let vec = embedder.embed(text).map_err(wrap)?;
        let score = cosine(&query_vec, &vec);
        if best.is_none_or(|(s, _, _)| score > s) {
            best = Some((score, id, text));
        }
    }
    let (_, _, text) = best.expect("nonempty pool");
    Ok(SystemUtterance::clarifying_question(text.to_string(), turn))
}

/// An entity mention with its saliency in the source text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientEntity {
    pub surface: String,
    pub saliency: f64,
}

/// Entity extraction backend: passage text in, salient entities out.
pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str) -> Result<Vec<SalientEntity>>;
}

/// Offline extractor: maximal runs of capitalized words, with stopword
/// boundaries trimmed; saliency is the surface's frequency normalized
/// by the most frequent surface in the text.
pub struct CapitalizedEntityExtractor {
    analyzer: Analyzer,
}

impl CapitalizedEntityExtractor {
    pub fn new() -> Self {
        Self {
            analyzer: Analyzer::default(),
        }
    }
}

impl Default for CapitalizedEntityExtractor {
    fn default() -> Self {
        Self::new()
    }
}

fn strip_edges(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

fn is_capitalized(word: &str) -> bool {
    word.chars()
        .find(|c| c.is_alphabetic())
        .is_some_and(char::is_uppercase)
}

impl EntityExtractor for CapitalizedEntityExtractor {
    fn extract(&self, text: &str) -> Result<Vec<SalientEntity>> {
        let mut runs: Vec<Vec<&str>> = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for raw in text.split_whitespace() {
            let word = strip_edges(raw);
            if !word.is_empty() && is_capitalized(word) {
                current.push(word);
                // Clause punctuation ends the mention even when the
                // next word is capitalized.
                if raw.ends_with(['.', '!', '?', ';', ':', ',']) {
                    runs.push(std::mem::take(&mut current));
                }
            } else if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            runs.push(current);
        }

        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for mut run in runs {
            while run
                .first()
                .is_some_and(|w| self.analyzer.analyze(w).is_empty())
            {
                run.remove(0);
            }
            while run
                .last()
                .is_some_and(|w| self.analyzer.analyze(w).is_empty())
            {
                run.pop();
            }
            if run.is_empty() {
                continue;
            }
            *counts.entry(run.join(" ")).or_insert(0.0) += 1.0;
        }
        let max_count = counts.values().copied().fold(0.0, f64::max);
        if max_count == 0.0 {
            return Ok(Vec::new());
        }
        Ok(counts
            .into_iter()
            .map(|(surface, count)| SalientEntity {
                surface,
                saliency: count / max_count,
            })
            .collect())
    }
}

/// Renders the clarifying-question template for 1, 2, or more entities.
pub fn render_entity_question(entities: &[SalientEntity]) -> String {
    let surfaces: Vec<&str> = entities.iter().map(|e| e.surface.as_str()).collect();
    match surfaces.len() {
        1 => format!("Are you interested in {}?", surfaces[0]),
        2 => format!("Are you interested in {} or {}?", surfaces[0], surfaces[1]),
        _ => {
            let head = surfaces[..surfaces.len() - 1].join(", ");
            format!(
                "Are you interested in {}, or {}?",
                head,
                surfaces[surfaces.len() - 1]
            )
        }
    }
}

/// Generates a clarifying question from salient entities in the top
/// `cfg.top_n_results` passages.
///
/// Entities are deduplicated by surface form keeping the maximum
/// saliency, filtered to saliency strictly above `cfg.rho`, sorted by
/// saliency descending (ties by surface), and capped at `cfg.m`.
pub fn generate_cq_entity(
    results: &RankedList,
    passages: &PassageStore,
    cfg: &CQConfig,
    extractor: &dyn EntityExtractor,
    turn: u32,
) -> Result<SystemUtterance> {
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    for id in results.top_ids(cfg.top_n_results) {
        let text = passages.text(&id)?;
        for entity in extractor.extract(text)? {
            let entry = merged.entry(entity.surface).or_insert(f64::NEG_INFINITY);
            *entry = entry.max(entity.saliency);
        }
    }
    let mut entities: Vec<SalientEntity> = merged
        .into_iter()
        .filter(|(_, saliency)| *saliency > cfg.rho)
        .map(|(surface, saliency)| SalientEntity { surface, saliency })
        .collect();
    if entities.is_empty() {
        return Err(Error::NoEntities);
    }
    entities.sort_by(|a, b| {
        b.saliency
            .partial_cmp(&a.saliency)
            .expect("finite saliency")
            .then_with(|| a.surface.cmp(&b.surface))
    });
    entities.truncate(cfg.m.max(1));
    Ok(SystemUtterance::clarifying_question(
        render_entity_question(&entities),
        turn,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RankedEntry;

    fn pool_from(texts: &[(&str, &str)], analyzer: &Analyzer) -> QuestionPool {
        QuestionPool::build(
            texts
                .iter()
                .map(|(id, text)| (id.to_string(), text.to_string())),
            analyzer,
        )
        .unwrap()
    }

    struct FnExtractor(Vec<SalientEntity>);

    impl EntityExtractor for FnExtractor {
        fn extract(&self, _text: &str) -> Result<Vec<SalientEntity>> {
            Ok(self.0.clone())
        }
    }

    fn entity(surface: &str, saliency: f64) -> SalientEntity {
        SalientEntity {
            surface: surface.to_string(),
            saliency,
        }
    }

    fn single_result_list() -> RankedList {
        RankedList::new(
            vec![RankedEntry {
                passage_id: "p1".into(),
                score: 1.0,
            }],
            10,
        )
    }

    fn single_store() -> PassageStore {
        PassageStore::from_passages(vec![Passage {
            id: "p1".into(),
            text: "body".into(),
        }])
        .unwrap()
    }

    #[test]
    fn pool_of_one_is_selected() {
        let analyzer = Analyzer::default();
        let pool = pool_from(&[("q1", "Do you mean solar power?")], &analyzer);
        let query = WeightedQuery::from_text("solar", &analyzer);
        let cq = select_cq_bm25(&pool, &query, 1).unwrap();
        assert_eq!(cq.text, "Do you mean solar power?");
        assert_eq!(cq.kind, crate::model::SystemKind::ClarifyingQuestion);
    }

    #[test]
    fn bm25_selection_prefers_overlapping_question() {
        let analyzer = Analyzer::default();
        let pool = pool_from(
            &[
                ("q1", "Do you mean wind turbines?"),
                ("q2", "Do you mean solar panels?"),
            ],
            &analyzer,
        );
        let query = WeightedQuery::from_text("solar", &analyzer);
        let cq = select_cq_bm25(&pool, &query, 1).unwrap();
        assert_eq!(cq.text, "Do you mean solar panels?");
    }

    #[test]
    fn bm25_selection_matches_exhaustive_argmax() {
        let analyzer = Analyzer::default();
        let topics = [
            "solar", "wind", "coal", "battery", "grid", "storage", "panel", "turbine", "hydro",
            "nuclear",
        ];
        let questions: Vec<(String, String)> = (0..50)
            .map(|i| {
                (
                    format!("q{i:02}"),
                    format!(
                        "Are you asking about {} {} systems?",
                        topics[i % topics.len()],
                        topics[(i * 3 + 1) % topics.len()]
                    ),
                )
            })
            .collect();
        let pool = QuestionPool::build(questions.clone(), &analyzer).unwrap();
        let query = WeightedQuery::from_text("nuclear storage", &analyzer);
        let selected = select_cq_bm25(&pool, &query, 1).unwrap();

        let mut best: Option<(f64, &str, &str)> = None;
        for (id, text) in &questions {
            let score = pool.index.score_passage(&query, id, &BM25Params::default());
            if score <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((s, bid, _)) => score > s || (score == s && id.as_str() < bid),
            };
            if better {
                best = Some((score, id, text));
            }
        }
        assert_eq!(selected.text, best.unwrap().2);
    }

    #[test]
    fn no_overlap_is_pool_miss() {
        let analyzer = Analyzer::default();
        let pool = pool_from(&[("q1", "Do you mean wind turbines?")], &analyzer);
        let query = WeightedQuery::from_text("volcano", &analyzer);
        assert!(matches!(
            select_cq_bm25(&pool, &query, 1).unwrap_err(),
            Error::PoolMiss
        ));
    }

    #[test]
    fn identical_text_wins_embedding_selection() {
        let analyzer = Arc::new(Analyzer::default());
        let pool = pool_from(
            &[
                ("q1", "solar rooftop panels"),
                ("q2", "offshore wind farms"),
            ],
            &analyzer,
        );
        let embedder = TfIdfEmbedder::for_pool(analyzer.clone(), &pool);
        let query = WeightedQuery::from_text("solar rooftop panels", &analyzer);
        let cq = select_cq_embedding(&pool, &query, &embedder, 1).unwrap();
        assert_eq!(cq.text, "solar rooftop panels");
    }

    #[test]
    fn orthogonal_vectors_tie_break_by_id() {
        let analyzer = Arc::new(Analyzer::default());
        let pool = pool_from(&[("q1", "alpha beta"), ("q2", "gamma delta")], &analyzer);
        let embedder = TfIdfEmbedder::for_pool(analyzer.clone(), &pool);
        let query = WeightedQuery::from_text("unrelated words", &analyzer);
        let cq = select_cq_embedding(&pool, &query, &embedder, 1).unwrap();
        assert_eq!(cq.text, "alpha beta");
    }

    #[test]
    fn embedding_selection_matches_cosine_oracle() {
        let analyzer = Arc::new(Analyzer::default());
        let words = [
            "solar", "wind", "coal", "battery", "grid", "storage", "panel", "turbine",
        ];
        let questions: Vec<(String, String)> = (0..20)
            .map(|i| {
                (
                    format!("q{i:02}"),
                    format!(
                        "{} {} {}",
                        words[i % words.len()],
                        words[(i + 2) % words.len()],
                        words[(i * 5 + 1) % words.len()]
                    ),
                )
            })
            .collect();
        let pool = QuestionPool::build(questions.clone(), &analyzer).unwrap();
        let embedder = TfIdfEmbedder::for_pool(analyzer.clone(), &pool);
        let query = WeightedQuery::from_text("battery grid storage", &analyzer);
        let selected = select_cq_embedding(&pool, &query, &embedder, 1).unwrap();

        let qv = embedder.embed(&query.original_text).unwrap();
        let mut best: Option<(f64, &str)> = None;
        for (_, text) in &questions {
            let score = cosine(&qv, &embedder.embed(text).unwrap());
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, text));
            }
        }
        assert_eq!(selected.text, best.unwrap().1);
    }

    #[test]
    fn three_entity_template() {
        let extractor = FnExtractor(vec![
            entity("solar", 0.9),
            entity("wind", 0.8),
            entity("coal", 0.5),
        ]);
        let cq = generate_cq_entity(
            &single_result_list(),
            &single_store(),
            &CQConfig::default(),
            &extractor,
            1,
        )
        .unwrap();
        assert_eq!(cq.text, "Are you interested in solar, wind, or coal?");
    }

    #[test]
    fn two_and_one_entity_templates() {
        let extractor = FnExtractor(vec![entity("solar", 0.9), entity("wind", 0.8)]);
        let cq = generate_cq_entity(
            &single_result_list(),
            &single_store(),
            &CQConfig::default(),
            &extractor,
            1,
        )
        .unwrap();
        assert_eq!(cq.text, "Are you interested in solar or wind?");

        let extractor = FnExtractor(vec![entity("solar", 0.9)]);
        let cq = generate_cq_entity(
            &single_result_list(),
            &single_store(),
            &CQConfig::default(),
            &extractor,
            1,
        )
        .unwrap();
        assert_eq!(cq.text, "Are you interested in solar?");
    }

    #[test]
    fn low_saliency_is_no_entities() {
        let extractor = FnExtractor(vec![entity("solar", 0.2), entity("wind", 0.2)]);
        let err = generate_cq_entity(
            &single_result_list(),
            &single_store(),
            &CQConfig::default(),
            &extractor,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoEntities));
    }

    #[test]
    fn entities_sorted_by_saliency_and_capped() {
        let extractor = FnExtractor(vec![
            entity("coal", 0.5),
            entity("solar", 0.9),
            entity("wind", 0.8),
            entity("hydro", 0.7),
        ]);
        let cq = generate_cq_entity(
            &single_result_list(),
            &single_store(),
            &CQConfig::default(),
            &extractor,
            1,
        )
        .unwrap();
        assert_eq!(cq.text, "Are you interested in solar, wind, or hydro?");
    }

    #[test]
    fn capitalized_extractor_finds_runs_and_normalizes() {
        let extractor = CapitalizedEntityExtractor::new();
        let entities = extractor
            .extract("The Solar Array near Lake Mead powers Las Vegas. Lake Mead is low.")
            .unwrap();
        let surfaces: Vec<&str> = entities.iter().map(|e| e.surface.as_str()).collect();
        assert!(surfaces.contains(&"Lake Mead"));
        assert!(surfaces.contains(&"Solar Array"));
        let lake = entities.iter().find(|e| e.surface == "Lake Mead").unwrap();
        assert!((lake.saliency - 1.0).abs() < 1e-12);
        let array = entities
            .iter()
            .find(|e| e.surface == "Solar Array")
            .unwrap();
        assert!((array.saliency - 0.5).abs() < 1e-12);
    }
}
