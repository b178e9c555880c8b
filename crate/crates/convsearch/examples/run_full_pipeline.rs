//! Run the complete multi-turn pipeline over the bundled fixtures:
//! retrieval, response generation, one round of simulated feedback with
//! RM3 expansion, and TREC-style evaluation.
//!
//! Run with: cargo run --example run_full_pipeline

use std::path::Path;
use std::sync::Arc;

use convsearch::analysis::Analyzer;
use convsearch::client::MockClient;
use convsearch::index::{build_index, PassageStore};
use convsearch::io::{format_run_file, load_collection, load_needs, load_qrels, load_topics};
use convsearch::pipeline::{run_dataset, ExpansionKind, PipelineConfig, PipelineDeps};
use convsearch::simulate::Simulator;

fn main() -> convsearch::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let passages = load_collection(&fixtures.join("collection.tsv"))?;
    let analyzer = Arc::new(Analyzer::default());
    let index = Arc::new(build_index(passages.clone(), &analyzer)?);
    let store = Arc::new(PassageStore::from_passages(passages)?);

    let topics = load_topics(&fixtures.join("topics.json"))?;
    let needs = load_needs(&fixtures.join("needs.json"))?;
    let qrels = load_qrels(&fixtures.join("qrels.txt"))?;

    let mut deps = PipelineDeps::offline(analyzer, index, store);
    deps.simulator = Some(Arc::new(Simulator::new(Arc::new(MockClient::from_script(
        &fixtures.join("mock_script.jsonl"),
    )?))));

    let cfg = PipelineConfig {
        feedback_rounds: 1,
        expansion: ExpansionKind::Rm3,
        retrieval_k: 10,
        response_top_k: 2,
        run_tag: "example".into(),
        ..PipelineConfig::default()
    };

    let run = run_dataset(&topics, &needs, Some(&qrels), &cfg, &deps)?;

    println!("run file:");
    print!(
        "{}",
        format_run_file(run.run_lists.iter().map(|(k, v)| (k, v)), &cfg.run_tag)
    );

    println!("\nfeedback labels:");
    for (turn, label) in &run.labels {
        println!("  {turn}: {label:?}");
    }

    let report = run.report.expect("qrels were supplied");
    println!("\nmacro nDCG@3: {:.4}", report.macro_metrics.ndcg_at_3);
    println!("macro MAP:    {:.4}", report.macro_metrics.map);

    println!("\ntranscript:\n{}", run.transcripts);
    Ok(())
}
