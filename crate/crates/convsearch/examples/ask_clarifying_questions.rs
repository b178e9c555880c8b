//! Produce clarifying questions three ways: BM25 selection from a
//! question pool, embedding-similarity selection, and entity-based
//! template generation from top-ranked passages.
//!
//! Run with: cargo run --example ask_clarifying_questions

use std::path::Path;
use std::sync::Arc;

use convsearch::analysis::Analyzer;
use convsearch::clarify::{
    generate_cq_entity, select_cq_bm25, select_cq_embedding, CQConfig, CapitalizedEntityExtractor,
    QuestionPool, TfIdfEmbedder,
};
use convsearch::index::{bm25_retrieve, build_index, BM25Params, PassageStore};
use convsearch::io::{load_collection, load_question_pool};
use convsearch::model::WeightedQuery;

fn main() -> convsearch::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let passages = load_collection(&fixtures.join("collection.tsv"))?;
    let analyzer = Arc::new(Analyzer::default());
    let index = build_index(passages.clone(), &analyzer)?;
    let store = PassageStore::from_passages(passages)?;
    let pool = QuestionPool::build(
        load_question_pool(&fixtures.join("questions.jsonl"))?,
        &analyzer,
    )?;

    let query = WeightedQuery::from_text("hoover dam water levels", &analyzer);

    // 1. Lexical selection: the pool question with the highest BM25
    // score against the query terms.
    let cq = select_cq_bm25(&pool, &query, 1)?;
    println!("bm25-selected question:      {}", cq.text);

    // 2. Embedding selection: cosine similarity in a tf-idf vector
    // space fit on the pool (a remote embedding model is pluggable).
    let embedder = TfIdfEmbedder::for_pool(analyzer.clone(), &pool);
    let cq = select_cq_embedding(&pool, &query, &embedder, 1)?;
    println!("embedding-selected question: {}", cq.text);

    // 3. Entity generation: extract salient capitalized entities from
    // the top-ranked passages and fill the question template.
    let results = bm25_retrieve(&index, &query, &BM25Params::default(), 3);
    let cfg = CQConfig::default();
    let extractor = CapitalizedEntityExtractor::new();
    let cq = generate_cq_entity(&results, &store, &cfg, &extractor, 1)?;
    println!("entity-generated question:   {}", cq.text);
    Ok(())
}
