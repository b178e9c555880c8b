//! Render feedback-aware relevance prompts and rerank a candidate list
//! with the lexical fallback scorer.
//!
//! Run with: cargo run --example rerank_candidates

use std::path::Path;
use std::sync::Arc;

use convsearch::analysis::Analyzer;
use convsearch::index::{bm25_retrieve, build_index, BM25Params, PassageStore};
use convsearch::io::load_collection;
use convsearch::model::{Discourse, Passage, Utterance, WeightedQuery};
use convsearch::rerank::{
    build_crossencoder_input, build_monot5_prompt, rerank, LexicalScorer, RerankConfig,
};

fn main() -> convsearch::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let passages = load_collection(&fixtures.join("collection.tsv"))?;
    let analyzer = Arc::new(Analyzer::default());
    let index = Arc::new(build_index(passages.clone(), &analyzer)?);
    let store = PassageStore::from_passages(passages)?;
    let params = BM25Params::default();

    let query = WeightedQuery::from_text("solar panel efficiency", &analyzer);
    let feedback = Utterance::new(
        Discourse::Feedback,
        "No, I meant photovoltaic conversion of sunlight",
        1,
    );
    let passage = Passage {
        id: "p02".into(),
        text: store.text("p02")?.to_string(),
    };

    // The two prompt templates a pointwise scorer can consume. Both cap
    // the total prompt at 512 analyzer tokens, truncating the passage.
    println!(
        "monot5 prompt:\n  {}\n",
        build_monot5_prompt(&query, Some(&feedback), &passage, &analyzer)
    );
    println!(
        "cross-encoder input:\n  {}\n",
        build_crossencoder_input(&query, Some(&feedback), &passage, &analyzer)
    );

    let first_pass = bm25_retrieve(&index, &query, &params, 5);
    println!("first-pass order: {}", first_pass.ids().join(", "));

    // The lexical scorer replays BM25 over the full prompt text, so the
    // feedback terms shift the head of the list; a remote model scorer
    // plugs into the same interface.
    let scorer = LexicalScorer {
        index: index.clone(),
        analyzer: analyzer.clone(),
        params,
    };
    let cfg = RerankConfig {
        depth: 5,
        ..RerankConfig::default()
    };
    let reranked = rerank(
        &first_pass,
        &query,
        Some(&feedback),
        &cfg,
        &scorer,
        &store,
        &analyzer,
    )?;
    println!("reranked order:   {}", reranked.ids().join(", "));
    Ok(())
}
