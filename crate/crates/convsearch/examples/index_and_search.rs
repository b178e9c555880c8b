//! Build an inverted index over the bundled passage collection and run
//! BM25 queries against it, including a manually weighted query.
//!
//! Run with: cargo run --example index_and_search

use std::path::Path;

use convsearch::analysis::Analyzer;
use convsearch::index::{bm25_retrieve, build_index, BM25Params};
use convsearch::io::load_collection;
use convsearch::model::WeightedQuery;

fn main() -> convsearch::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let passages = load_collection(&fixtures.join("collection.tsv"))?;
    let analyzer = Analyzer::default();
    let index = build_index(passages.clone(), &analyzer)?;
    let params = BM25Params::default();
    println!(
        "indexed {} passages, average analyzed length {:.2} tokens\n",
        index.doc_count(),
        index.avg_doc_length()
    );

    for query_text in ["solar panel efficiency", "hoover dam water levels"] {
        let query = WeightedQuery::from_text(query_text, &analyzer);
        let results = bm25_retrieve(&index, &query, &params, 3);
        println!("query: {query_text}");
        for (rank, entry) in results.entries.iter().enumerate() {
            println!(
                "  {:>2}. {}  {:.4}",
                rank + 1,
                entry.passage_id,
                entry.score
            );
        }
        println!();
    }

    // Term weights steer retrieval without changing the query text:
    // boosting "heat" pulls the thermal-performance passage to the top.
    let mut boosted = WeightedQuery::from_text("solar panel efficiency heat", &analyzer);
    let term = analyzer.analyze("heat").remove(0);
    boosted.terms.insert(term, 3.0);
    let results = bm25_retrieve(&index, &boosted, &params, 3);
    println!("weighted query: {} (heat x3)", boosted.original_text);
    for (rank, entry) in results.entries.iter().enumerate() {
        println!(
            "  {:>2}. {}  {:.4}",
            rank + 1,
            entry.passage_id,
            entry.score
        );
    }
    Ok(())
}
