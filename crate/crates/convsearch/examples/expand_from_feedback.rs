//! Expand a query from a negative feedback utterance with RM3 and
//! Rocchio, and show how the expanded terms change retrieval.
//!
//! Run with: cargo run --example expand_from_feedback

use std::path::Path;

use convsearch::analysis::Analyzer;
use convsearch::expansion::{rm3_expand, rocchio_expand, ExpansionConfig};
use convsearch::index::{bm25_retrieve, build_index, BM25Params};
use convsearch::io::load_collection;
use convsearch::model::{Discourse, Utterance, WeightedQuery};

fn show(query: &WeightedQuery, label: &str) {
    println!("{label}:");
    for (term, weight) in &query.terms {
        println!("  {term:<14} {weight:.4}");
    }
}

fn main() -> convsearch::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let passages = load_collection(&fixtures.join("collection.tsv"))?;
    let analyzer = Analyzer::default();
    let index = build_index(passages, &analyzer)?;
    let params = BM25Params::default();
    let cfg = ExpansionConfig::default();

    let query = WeightedQuery::from_text("solar panels", &analyzer);
    let feedback = Utterance::new(
        Discourse::Feedback,
        "That's not what I asked for, I want to know about converting sunlight into electricity",
        1,
    );

    show(&query, "original query");
    println!();

    // RM3 adds the informative feedback terms at up to half the
    // strongest original weight, leaving original weights untouched.
    let rm3 = rm3_expand(&query, &feedback, &index, &cfg, &analyzer);
    show(&rm3, "after rm3 expansion");
    println!();

    // Rocchio reweights everything: alpha times the query vector plus
    // beta times the tf-idf vector of the feedback.
    let rocchio = rocchio_expand(&query, &feedback, &index, &cfg, &analyzer);
    show(&rocchio, "after rocchio expansion");
    println!();

    for (label, q) in [("original", &query), ("rm3", &rm3), ("rocchio", &rocchio)] {
        let results = bm25_retrieve(&index, q, &params, 3);
        let ids: Vec<&str> = results.ids();
        println!("top 3 with {label:<8}: {}", ids.join(", "));
    }
    Ok(())
}
