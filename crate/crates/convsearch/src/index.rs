//! Inverted index construction and BM25 retrieval.
//!
//! The index is immutable once built; retrieval accumulates scores in
//! a per-passage map so the result never depends on the order passages
//! were inserted. Ties are broken by ascending passage id to keep run
//! files deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::Analyzer;
use crate::error::{Error, Result};
use crate::model::{Passage, RankedEntry, RankedList, WeightedQuery};

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BM25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for BM25Params {
    fn default() -> Self {
        Self { k1: 4.46, b: 0.82 }
    }
}

/// One postings entry: a passage and the term's frequency in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub passage_id: String,
    pub term_frequency: u32,
}

/// Term → postings map with the document statistics BM25 needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: BTreeMap<String, u32>,
    avg_doc_length: f64,
    doc_count: usize,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    /// Analyzed token count of a passage, if indexed.
    pub fn doc_length(&self, passage_id: &str) -> Option<u32> {
        self.doc_lengths.get(passage_id).copied()
    }

    pub fn contains_doc(&self, passage_id: &str) -> bool {
        self.doc_lengths.contains_key(passage_id)
    }

    /// Number of passages containing `term`.
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Nonnegative inverse document frequency, ln(1 + (N − df + 0.5)/(df + 0.5)).
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df(term) as f64;
        let n = self.doc_count as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    /// All indexed terms in sorted order.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Frequency of `term` in one passage, 0 when absent.
    pub fn term_frequency(&self, term: &str, passage_id: &str) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.iter()
                    .find(|p| p.passage_id == passage_id)
                    .map(|p| p.term_frequency)
            })
            .unwrap_or(0)
    }

    /// BM25 score of one passage for a weighted query.
    pub fn score_passage(
        &self,
        query: &WeightedQuery,
        passage_id: &str,
        params: &BM25Params,
    ) -> f64 {
        let Some(len) = self.doc_length(passage_id) else {
            return 0.0;
        };
        let len = f64::from(len);
        let mut score = 0.0;
        for (term, &weight) in &query.terms {
            let tf = f64::from(self.term_frequency(term, passage_id));
            if tf == 0.0 {
                continue;
            }
            let norm = tf + params.k1 * (1.0 - params.b + params.b * len / self.avg_doc_length);
            score += weight * self.idf(term) * tf * (params.k1 + 1.0) / norm;
        }
        score
    }
}

/// Builds an index from a passage stream. Fails on duplicate ids or an
/// empty collection; statistics use analyzed token counts.
pub fn build_index<I>(passages: I, analyzer: &Analyzer) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = Passage>,
{
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths: BTreeMap<String, u32> = BTreeMap::new();
    for passage in passages {
        let tokens = analyzer.analyze(&passage.text);
        if doc_lengths
            .insert(passage.id.clone(), tokens.len() as u32)
            .is_some()
        {
            return Err(Error::DuplicateDocument(passage.id));
        }
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens {
            *counts.entry(token).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push(Posting {
                passage_id: passage.id.clone(),
                term_frequency: tf,
            });
        }
    }
    if doc_lengths.is_empty() {
        return Err(Error::EmptyCollection);
    }
    for list in postings.values_mut() {
        list.sort_by(|a, b| a.passage_id.cmp(&b.passage_id));
    }
    let doc_count = doc_lengths.len();
    let total: u64 = doc_lengths.values().map(|&l| u64::from(l)).sum();
    let avg_doc_length = total as f64 / doc_count as f64;
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        avg_doc_length,
        doc_count,
    })
}

/// Retrieves the top `k` passages for a weighted query.
///
/// score(d) = Σ_t weight(t) · idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·len(d)/avg_len)).
/// Entries are sorted by score descending, ties by ascending passage id.
/// A query with no indexed terms yields an empty list.
pub fn bm25_retrieve(
    index: &InvertedIndex,
    query: &WeightedQuery,
    params: &BM25Params,
    k: usize,
) -> RankedList {
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for (term, &weight) in &query.terms {
        let Some(postings) = index.postings.get(term) else {
            continue;
        };
        let idf = index.idf(term);
        for posting in postings {
            let tf = f64::from(posting.term_frequency);
            let len = f64::from(index.doc_lengths[&posting.passage_id]);
            let norm = tf + params.k1 * (1.0 - params.b + params.b * len / index.avg_doc_length);
            *scores.entry(posting.passage_id.as_str()).or_insert(0.0) +=
                weight * idf * tf * (params.k1 + 1.0) / norm;
        }
    }
    let mut entries: Vec<RankedEntry> = scores
        .into_iter()
        .map(|(passage_id, score)| RankedEntry {
            passage_id: passage_id.to_string(),
            score,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite BM25 scores")
            .then_with(|| a.passage_id.cmp(&b.passage_id))
    });
    entries.truncate(k);
    RankedList::new(entries, k)
}

/// Passage texts keyed by id, for reranking prompts, responses, and
/// entity extraction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageStore {
    passages: BTreeMap<String, String>,
}

impl PassageStore {
    pub fn from_passages<I>(passages: I) -> Result<Self>
    where
        I: IntoIterator<Item = Passage>,
    {
        let mut map = BTreeMap::new();
        for passage in passages {
            if map.insert(passage.id.clone(), passage.text).is_some() {
                return Err(Error::DuplicateDocument(passage.id));
            }
        }
        Ok(Self { passages: map })
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.passages.get(id).map(String::as_str)
    }

    /// Like [`PassageStore::get`] but a missing id is a data error.
    pub fn text(&self, id: &str) -> Result<&str> {
        self.get(id)
            .ok_or_else(|| Error::Data(format!("unknown passage id {id}")))
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.passages
            .iter()
            .map(|(id, text)| (id.as_str(), text.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            id: id.to_string(),
            text: text.to_string(),
        }
    }

    /// Brute-force scorer: re-analyzes every document and applies the
    /// BM25 formula directly, independent of the postings layout.
    fn oracle_scores(
        passages: &[Passage],
        query: &WeightedQuery,
        params: &BM25Params,
        analyzer: &Analyzer,
    ) -> Vec<(String, f64)> {
        let docs: Vec<(String, Vec<String>)> = passages
            .iter()
            .map(|p| (p.id.clone(), analyzer.analyze(&p.text)))
            .collect();
        let n = docs.len() as f64;
        let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
        let mut scored = Vec::new();
        for (id, tokens) in &docs {
            let mut score = 0.0;
            for (term, &weight) in &query.terms {
                let tf = tokens.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs
                    .iter()
                    .filter(|(_, d)| d.iter().any(|t| t == term))
                    .count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = tf + params.k1 * (1.0 - params.b + params.b * tokens.len() as f64 / avg);
                score += weight * idf * tf * (params.k1 + 1.0) / norm;
            }
            if score > 0.0 {
                scored.push((id.clone(), score));
            }
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored
    }

    #[test]
    fn one_word_passages_have_unit_average_length() {
        let analyzer = Analyzer::default();
        let index = build_index(
            vec![
                passage("p1", "solar"),
                passage("p2", "wind"),
                passage("p3", "coal"),
            ],
            &analyzer,
        )
        .unwrap();
        assert_eq!(index.doc_count(), 3);
        assert!((index.avg_doc_length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_id_rejected() {
        let analyzer = Analyzer::default();
        let err = build_index(
            vec![passage("p1", "solar"), passage("p1", "wind")],
            &analyzer,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateDocument(id) if id == "p1"));
    }

    #[test]
    fn empty_collection_rejected() {
        let analyzer = Analyzer::default();
        let err = build_index(Vec::new(), &analyzer).unwrap_err();
        assert!(matches!(err, Error::EmptyCollection));
    }

    #[test]
    fn postings_match_naive_recount() {
        let analyzer = Analyzer::default();
        let vocab = ["solar", "wind", "coal", "turbine", "panel", "grid"];
        let passages: Vec<Passage> = (0..100)
            .map(|i| {
                let words: Vec<&str> = (0..=(i % 7))
                    .map(|j| vocab[(i * 3 + j * 5) % vocab.len()])
                    .collect();
                passage(&format!("p{i:03}"), &words.join(" "))
            })
            .collect();
        let index = build_index(passages.clone(), &analyzer).unwrap();
        for term in vocab {
            let stemmed = &analyzer.analyze(term)[0];
            let mut expected: Vec<(String, u32)> = passages
                .iter()
                .filter_map(|p| {
                    let tf = analyzer
                        .analyze(&p.text)
                        .iter()
                        .filter(|t| t == &stemmed)
                        .count() as u32;
                    (tf > 0).then(|| (p.id.clone(), tf))
                })
                .collect();
            expected.sort();
            let actual: Vec<(String, u32)> = index
                .postings(stemmed)
                .unwrap_or(&[])
                .iter()
                .map(|p| (p.passage_id.clone(), p.term_frequency))
                .collect();
            assert_eq!(actual, expected, "postings for {term}");
        }
    }

    #[test]
    fn single_term_query_finds_its_document() {
        let analyzer = Analyzer::default();
        let index = build_index(
            vec![
                passage("p1", "solar panels on rooftops"),
                passage("p2", "wind turbines offshore"),
            ],
            &analyzer,
        )
        .unwrap();
        let query = WeightedQuery::from_text("turbines", &analyzer);
        let list = bm25_retrieve(&index, &query, &BM25Params::default(), 10);
        assert_eq!(list.entries[0].passage_id, "p2");
        assert_eq!(list.len(), 1);
    }

    #[test]
    fn out_of_vocabulary_query_yields_empty_list() {
        let analyzer = Analyzer::default();
        let index = build_index(vec![passage("p1", "solar")], &analyzer).unwrap();
        let query = WeightedQuery::from_text("geothermal", &analyzer);
        let list = bm25_retrieve(&index, &query, &BM25Params::default(), 10);
        assert!(list.is_empty());
    }

    #[test]
    fn retrieval_matches_exhaustive_scoring() {
        let analyzer = Analyzer::default();
        let vocab = [
            "solar", "wind", "coal", "turbine", "panel", "grid", "storage", "battery",
        ];
        let passages: Vec<Passage> = (0..20)
            .map(|i| {
                let words: Vec<&str> = (0..(2 + i % 6))
                    .map(|j| vocab[(i * 5 + j * 3) % vocab.len()])
                    .collect();
                passage(&format!("d{i:02}"), &words.join(" "))
            })
            .collect();
        let index = build_index(passages.clone(), &analyzer).unwrap();
        let params = BM25Params::default();
        let queries = [
            WeightedQuery::from_text("solar grid", &analyzer),
            WeightedQuery::from_text("battery storage capacity", &analyzer),
            WeightedQuery::from_text("wind wind turbine", &analyzer),
            {
                let mut q = WeightedQuery::from_text("coal panel", &analyzer);
                *q.terms.get_mut("coal").unwrap() = 2.5;
                q
            },
            WeightedQuery::from_text("grid", &analyzer),
        ];
        for query in &queries {
            let list = bm25_retrieve(&index, query, &params, usize::MAX);
            let expected = oracle_scores(&passages, query, &params, &analyzer);
            assert_eq!(list.len(), expected.len(), "query {query}");
            for (entry, (id, score)) in list.entries.iter().zip(&expected) {
                assert_eq!(&entry.passage_id, id, "query {query}");
                assert!(
                    (entry.score - score).abs() < 1e-9,
                    "query {query}: {} vs {}",
                    entry.score,
                    score
                );
            }
        }
    }

    #[test]
    fn retrieval_invariant_under_insertion_order() {
        let analyzer = Analyzer::default();
        let passages = vec![
            passage("a", "solar wind solar"),
            passage("b", "wind coal"),
            passage("c", "solar coal grid"),
        ];
        let mut reversed = passages.clone();
        reversed.reverse();
        let i1 = build_index(passages, &analyzer).unwrap();
        let i2 = build_index(reversed, &analyzer).unwrap();
        let query = WeightedQuery::from_text("solar coal", &analyzer);
        let params = BM25Params::default();
        assert_eq!(
            bm25_retrieve(&i1, &query, &params, 10),
            bm25_retrieve(&i2, &query, &params, 10)
        );
    }

    #[test]
    fn raising_term_weight_helps_documents_containing_it() {
        let analyzer = Analyzer::default();
        let index = build_index(
            vec![
                passage("with", "solar panels everywhere"),
                passage("without", "wind turbines offshore today"),
            ],
            &analyzer,
        )
        .unwrap();
        let params = BM25Params::default();
        let mut query = WeightedQuery::from_text("solar wind", &analyzer);
        let before = index.score_passage(&query, "with", &params)
            - index.score_passage(&query, "without", &params);
        *query.terms.get_mut("solar").unwrap() = 5.0;
        let after = index.score_passage(&query, "with", &params)
            - index.score_passage(&query, "without", &params);
        assert!(after > before);
    }

    #[test]
    fn score_passage_agrees_with_retrieval() {
        let analyzer = Analyzer::default();
        let index = build_index(
            vec![
                passage("p1", "solar panel grid"),
                passage("p2", "solar solar storage"),
            ],
            &analyzer,
        )
        .unwrap();
        let query = WeightedQuery::from_text("solar grid", &analyzer);
        let params = BM25Params::default();
        let list = bm25_retrieve(&index, &query, &params, 10);
        for entry in &list.entries {
            let direct = index.score_passage(&query, &entry.passage_id, &params);
            assert!((entry.score - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn store_round_trips_and_rejects_duplicates() {
        let store =
            PassageStore::from_passages(vec![passage("p1", "solar"), passage("p2", "wind")])
                .unwrap();
        assert_eq!(store.get("p1"), Some("solar"));
        assert!(store.get("p9").is_none());
        assert!(store.text("p9").is_err());
        let err =
            PassageStore::from_passages(vec![passage("p1", "a"), passage("p1", "b")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateDocument(_)));
    }
}
