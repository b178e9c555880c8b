//! Score a stored run file against relevance judgments, print the
//! effectiveness table, then compare two runs with paired t-tests.
//!
//! Run with: cargo run --example evaluate_and_compare

use std::path::Path;

use convsearch::cli::{render_comparison, render_report};
use convsearch::eval::{evaluate_run, paired_ttest};
use convsearch::io::{load_qrels, load_run_file};

fn main() -> convsearch::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let qrels = load_qrels(&fixtures.join("qrels.txt"))?;
    let run = load_run_file(&fixtures.join("run_fixture.txt"))?;

    let full = evaluate_run(&run, &qrels, 1000)?;
    println!("full-depth report:\n{}", render_report(&full));

    // A shallower cutoff trims recall, MAP, and MRR; nDCG@3 is unchanged
    // because its cutoff is independent of the evaluation depth.
    let shallow = evaluate_run(&run, &qrels, 2)?;
    println!("depth-2 report:\n{}", render_report(&shallow));

    println!("full vs depth-2:\n{}", render_comparison(&full, &shallow)?);

    let recall_full: Vec<f64> = full.per_turn.values().map(|m| m.recall).collect();
    let recall_shallow: Vec<f64> = shallow.per_turn.values().map(|m| m.recall).collect();
    let (t, p) = paired_ttest(&recall_full, &recall_shallow)?;
    println!("recall paired t-test: t = {t:.4}, p = {p:.4}");
    Ok(())
}
