//! Command-line interface: `index` builds a searchable artifact,
//! `run` executes configured pipelines over a topic file, `eval`
//! scores a run against qrels, and `compare` tests two runs for
//! significant differences.
//!
//! Exit codes: 0 on success, 1 for configuration problems, 2 for data
//! problems, 3 for remote-service failures.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{Analyzer, AnalyzerConfig, Stemmer};
use crate::clarify::{CapitalizedEntityExtractor, ClarificationNeed, TfIdfEmbedder};
use crate::client::{MockClient, ModelClient, RemoteClient};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, paired_ttest, stratify_by_feedback, EvalReport};
use crate::expansion::CompletionRewriter;
use crate::index::{build_index, PassageStore};
use crate::io;
use crate::pipeline::{
    run_dataset, CQMethod, ExpansionKind, PipelineConfig, PipelineDeps, RewriterKind,
};
use crate::rerank::{LexicalScorer, RelevanceScorer, RemoteScorer, ScorerKind};
use crate::simulate::{FeedbackPatterns, Simulator};

#[derive(Parser)]
#[command(
    name = "convsearch",
    version,
    about = "Mixed-initiative conversational search with a simulated user"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)] // parsed once at startup
enum Command {
    /// Build an index artifact from a passage collection.
    Index(IndexArgs),
    /// Run the pipeline over a topic file, writing a run file and transcripts.
    Run(RunArgs),
    /// Score a run file against relevance judgments.
    Eval(EvalArgs),
    /// Compare two run files with a paired t-test.
    Compare(CompareArgs),
}

#[derive(Args)]
struct IndexArgs {
    /// Passage collection (.tsv with id<TAB>text, or .jsonl).
    #[arg(long)]
    collection: PathBuf,
    /// Output path for the index artifact (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Disable lowercasing.
    #[arg(long)]
    no_lowercase: bool,
    /// Stemmer: "porter" or "none".
    #[arg(long, default_value = "porter", value_parser = parse_stemmer)]
    stemmer: Stemmer,
    /// Custom stopword list (one word per line); default is the
    /// embedded English list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Passage collection to index on the fly.
    #[arg(long, conflicts_with = "index")]
    collection: Option<PathBuf>,
    /// Prebuilt index artifact from `convsearch index`.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Topic file with fixed conversations (JSON).
    #[arg(long)]
    topics: PathBuf,
    /// Information-need descriptions for the simulated user (JSON).
    #[arg(long)]
    needs: Option<PathBuf>,
    /// Relevance judgments; enables the evaluation report.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Clarifying-question pool (JSONL of {"id","text"}).
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Mock model script (JSONL of response strings) replacing all
    /// remote calls.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Output directory for run.txt, transcripts.jsonl, labels.json,
    /// and eval artifacts.
    #[arg(long)]
    out_dir: PathBuf,
    /// Override: feedback rounds per turn (0-10).
    #[arg(long)]
    feedback_rounds: Option<u32>,
    /// Override: rewriter ("none", "remote", "discourse_gated").
    #[arg(long, value_parser = parse_rewriter)]
    rewriter: Option<RewriterKind>,
    /// Override: expansion ("none", "rm3", "rocchio", "history").
    #[arg(long, value_parser = parse_expansion)]
    expansion: Option<ExpansionKind>,
    /// Override: retrieval depth.
    #[arg(long)]
    retrieval_k: Option<usize>,
    /// Override: passages concatenated into each response.
    #[arg(long)]
    response_top_k: Option<usize>,
    /// Override: stop a turn after positive feedback.
    #[arg(long)]
    stop_on_positive: bool,
    /// Override: conversation-level patience budget.
    #[arg(long)]
    patience: Option<u32>,
    /// Enable clarification with default settings.
    #[arg(long)]
    clarify: bool,
    /// Override: clarifying-question method ("select_bm25",
    /// "select_embedding", "generate_entity").
    #[arg(long, value_parser = parse_cq_method)]
    cq_method: Option<CQMethod>,
    /// Enable reranking ("lexical" or "remote").
    #[arg(long, value_parser = parse_scorer)]
    rerank: Option<ScorerKind>,
    /// Override: rerank depth.
    #[arg(long)]
    rerank_depth: Option<usize>,
    /// Override: parallel conversation workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Override: run tag written to the run file.
    #[arg(long)]
    run_tag: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run file to score.
    #[arg(long)]
    run: PathBuf,
    /// Relevance judgments.
    #[arg(long)]
    qrels: PathBuf,
    /// Evaluation depth.
    #[arg(long, short = 'k', default_value_t = 1000)]
    depth: usize,
    /// Binary relevance threshold for MAP/MRR/recall.
    #[arg(long, default_value_t = 2)]
    threshold: u32,
    /// Feedback labels (JSON) for stratified reporting.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Print the report as JSON instead of a text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline run file.
    #[arg(long)]
    run_a: PathBuf,
    /// Contrast run file.
    #[arg(long)]
    run_b: PathBuf,
    /// Relevance judgments.
    #[arg(long)]
    qrels: PathBuf,
    /// Evaluation depth.
    #[arg(long, short = 'k', default_value_t = 1000)]
    depth: usize,
    /// Binary relevance threshold for MAP/MRR/recall.
    #[arg(long, default_value_t = 2)]
    threshold: u32,
}

fn parse_stemmer(value: &str) -> std::result::Result<Stemmer, String> {
    match value {
        "porter" => Ok(Stemmer::Porter),
        "none" => Ok(Stemmer::None),
        other => Err(format!("unknown stemmer {other:?} (expected porter|none)")),
    }
}

fn parse_rewriter(value: &str) -> std::result::Result<RewriterKind, String> {
    match value {
        "none" => Ok(RewriterKind::None),
        "remote" => Ok(RewriterKind::Remote),
        "discourse_gated" | "discourse-gated" => Ok(RewriterKind::DiscourseGated),
        other => Err(format!(
            "unknown rewriter {other:?} (expected none|remote|discourse_gated)"
        )),
    }
}

fn parse_expansion(value: &str) -> std::result::Result<ExpansionKind, String> {
    match value {
        "none" => Ok(ExpansionKind::None),
        "rm3" => Ok(ExpansionKind::Rm3),
        "rocchio" => Ok(ExpansionKind::Rocchio),
        "history" => Ok(ExpansionKind::History),
        other => Err(format!(
            "unknown expansion {other:?} (expected none|rm3|rocchio|history)"
        )),
    }
}

fn parse_cq_method(value: &str) -> std::result::Result<CQMethod, String> {
    match value {
        "select_bm25" | "select-bm25" => Ok(CQMethod::SelectBm25),
        "select_embedding" | "select-embedding" => Ok(CQMethod::SelectEmbedding),
        "generate_entity" | "generate-entity" => Ok(CQMethod::GenerateEntity),
        other => Err(format!(
            "unknown method {other:?} (expected select_bm25|select_embedding|generate_entity)"
        )),
    }
}

fn parse_scorer(value: &str) -> std::result::Result<ScorerKind, String> {
    match value {
        "lexical" => Ok(ScorerKind::LexicalFallback),
        "remote" => Ok(ScorerKind::Remote),
        other => Err(format!(
            "unknown scorer {other:?} (expected lexical|remote)"
        )),
    }
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Index(args) => cmd_index(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Compare(args) => cmd_compare(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn cmd_index(args: &IndexArgs) -> Result<()> {
    let stopwords = match &args.stopwords {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?
                .lines()
                .map(str::to_string)
                .filter(|w| !w.is_empty())
                .collect(),
        ),
        None => None,
    };
    let analyzer_cfg = AnalyzerConfig {
        lowercase: !args.no_lowercase,
        stopwords,
        stemmer: args.stemmer,
    };
    let analyzer = Analyzer::from_config(&analyzer_cfg);
    let passages = io::load_collection(&args.collection)?;
    let index = build_index(passages.clone(), &analyzer)?;
    let store = PassageStore::from_passages(passages)?;
    let count = store.len();
    log::info!("indexed {count} passages, {} terms", index.terms().count());
    io::save_index(
        &args.out,
        &io::IndexArtifact {
            analyzer: analyzer_cfg,
            index,
            store,
        },
    )?;
    println!("indexed {count} passages into {}", args.out.display());
    Ok(())
}

fn apply_overrides(cfg: &mut PipelineConfig, args: &RunArgs) {
    if let Some(rounds) = args.feedback_rounds {
        cfg.feedback_rounds = rounds;
    }
    if let Some(rewriter) = args.rewriter {
        cfg.rewriter = rewriter;
    }
    if let Some(expansion) = args.expansion {
        cfg.expansion = expansion;
    }
    if let Some(k) = args.retrieval_k {
        cfg.retrieval_k = k;
    }
    if let Some(k) = args.response_top_k {
        cfg.response_top_k = k;
    }
    if args.stop_on_positive {
        cfg.stop_on_positive = true;
    }
    if args.patience.is_some() {
        cfg.patience = args.patience;
    }
    if args.clarify {
        let mut cq = cfg.clarification.take().unwrap_or_default();
        cq.clarification_need = ClarificationNeed::Always;
        cfg.clarification = Some(cq);
    }
    if let Some(method) = args.cq_method {
        cfg.cq_method = method;
    }
    if let Some(scorer) = args.rerank {
        let mut rerank = cfg.rerank.take().unwrap_or_default();
        rerank.scorer = scorer;
        cfg.rerank = Some(rerank);
    }
    if let Some(depth) = args.rerank_depth {
        let mut rerank = cfg.rerank.take().unwrap_or_default();
        rerank.depth = depth;
        cfg.rerank = Some(rerank);
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if let Some(tag) = &args.run_tag {
        cfg.run_tag = tag.clone();
    }
}

/// True when any configured stage calls a model endpoint.
fn needs_client(cfg: &PipelineConfig) -> bool {
    cfg.simulation_enabled()
        || cfg.rewriter != RewriterKind::None
        || cfg
            .rerank
            .as_ref()
            .is_some_and(|r| r.scorer == ScorerKind::Remote)
}

fn build_client(
    cfg: &PipelineConfig,
    mock_script: Option<&Path>,
) -> Result<Option<Arc<dyn ModelClient>>> {
    if let Some(path) = mock_script {
        return Ok(Some(Arc::new(MockClient::from_script(path)?)));
    }
    if !needs_client(cfg) {
        return Ok(None);
    }
    let remote = cfg.remote.clone().ok_or_else(|| {
        Error::Config(
            "a remote stage is enabled but the config has no \"remote\" section \
             and no --mock-script was given"
                .into(),
        )
    })?;
    Ok(Some(Arc::new(RemoteClient::new(remote)?)))
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => io::load_config(path)?,
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut cfg, args);
    if cfg.feedback_rounds > 10 {
        return Err(Error::Config(format!(
            "feedback_rounds is {} but at most 10 rounds are supported",
            cfg.feedback_rounds
        )));
    }

    let (analyzer, index, store) = match (&args.index, &args.collection) {
        (Some(path), _) => {
            let artifact = io::load_index(path)?;
            (
                Arc::new(Analyzer::from_config(&artifact.analyzer)),
                Arc::new(artifact.index),
                Arc::new(artifact.store),
            )
        }
        (None, Some(path)) => {
            let analyzer = Arc::new(Analyzer::from_config(&cfg.analyzer));
            let passages = io::load_collection(path)?;
            let index = Arc::new(build_index(passages.clone(), &analyzer)?);
            let store = Arc::new(PassageStore::from_passages(passages)?);
            (analyzer, index, store)
        }
        (None, None) => {
            return Err(Error::Config(
                "either --index or --collection is required".into(),
            ))
        }
    };

    let topics = io::load_topics(&args.topics)?;
    let needs = match &args.needs {
        Some(path) => io::load_needs(path)?,
        None => Vec::new(),
    };
    let qrels = match &args.qrels {
        Some(path) => Some(io::load_qrels(path)?),
        None => None,
    };

    let client = build_client(&cfg, args.mock_script.as_deref())?;
    let mut deps = PipelineDeps::offline(analyzer.clone(), index.clone(), store);
    if let Some(client) = &client {
        let mut simulator = Simulator::new(client.clone());
        simulator.params = cfg.completion;
        simulator.patterns = FeedbackPatterns::default();
        deps.simulator = Some(Arc::new(simulator));
        if cfg.rewriter != RewriterKind::None {
            deps.rewriter = Some(Arc::new(CompletionRewriter::new(client.clone())));
        }
    }
    if let Some(rerank_cfg) = &cfg.rerank {
        let scorer: Arc<dyn RelevanceScorer> = match rerank_cfg.scorer {
            ScorerKind::Remote => {
                let client = client
                    .clone()
                    .ok_or_else(|| Error::Config("remote reranking needs a client".into()))?;
                Arc::new(RemoteScorer { client })
            }
            ScorerKind::LexicalFallback => Arc::new(LexicalScorer {
                index: index.clone(),
                analyzer: analyzer.clone(),
                params: cfg.bm25,
            }),
        };
        deps.scorer = Some(scorer);
    }
    if let Some(path) = &args.questions {
        let questions = io::load_question_pool(path)?;
        let pool = Arc::new(crate::clarify::QuestionPool::build(questions, &analyzer)?);
        deps.embedder = Some(Arc::new(TfIdfEmbedder::for_pool(analyzer.clone(), &pool)));
        deps.question_pool = Some(pool);
    } else {
        deps.embedder = Some(Arc::new(TfIdfEmbedder::new(analyzer.clone(), &index)));
    }
    deps.extractor = Some(Arc::new(CapitalizedEntityExtractor::new()));

    let dataset = run_dataset(&topics, &needs, qrels.as_ref(), &cfg, &deps)?;

    let run_text = io::format_run_file(dataset.run_lists.iter().map(|(k, v)| (k, v)), &cfg.run_tag);
    io::write_text(&args.out_dir.join("run.txt"), &run_text)?;
    io::write_text(
        &args.out_dir.join("transcripts.jsonl"),
        &dataset.transcripts,
    )?;
    let labels_json = serde_json::to_string_pretty(&dataset.labels)
        .map_err(|e| Error::Data(format!("cannot serialize labels: {e}")))?;
    io::write_text(&args.out_dir.join("labels.json"), &labels_json)?;
    if let Some(report) = &dataset.report {
        let report_json = serde_json::to_string_pretty(report)
            .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
        io::write_text(&args.out_dir.join("eval.json"), &report_json)?;
        io::write_text(&args.out_dir.join("eval.txt"), &render_report(report))?;
    }
    println!(
        "wrote {} ranked lists to {}",
        dataset.run_lists.len(),
        args.out_dir.display()
    );
    Ok(())
}

/// Renders an evaluation report as a fixed-width text table.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "turn", "recall", "map", "mrr", "ndcg", "ndcg@3"
    ));
    for (turn, metrics) in &report.per_turn {
        out.push_str(&format!(
            "{:<24} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}\n",
            turn, metrics.recall, metrics.map, metrics.mrr, metrics.ndcg, metrics.ndcg_at_3
        ));
    }
    let m = &report.macro_metrics;
    out.push_str(&format!(
        "{:<24} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}\n",
        "macro", m.recall, m.map, m.mrr, m.ndcg, m.ndcg_at_3
    ));
    for (name, stratum) in &report.strata {
        let label = format!("feedback={name}");
        let m = &stratum.metrics;
        out.push_str(&format!(
            "{:<24} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}  ({} turns, {:.1}%)\n",
            label, m.recall, m.map, m.mrr, m.ndcg, m.ndcg_at_3, stratum.turns, stratum.percent
        ));
    }
    if !report.flagged_turns.is_empty() {
        out.push_str(&format!(
            "flagged (no judged relevant): {}\n",
            report.flagged_turns.join(" ")
        ));
    }
    for warning in &report.warnings {
        out.push_str(&format!("warning: {warning}\n"));
    }
    out
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let lists = io::load_run_file(&args.run)?;
    let mut qrels = io::load_qrels(&args.qrels)?;
    qrels.binary_threshold = args.threshold;
    let mut report = evaluate_run(&lists, &qrels, args.depth)?;
    if let Some(path) = &args.labels {
        let labels = io::load_labels(path)?;
        let (strata, warnings) = stratify_by_feedback(&report.per_turn, &labels);
        report.strata = strata;
        report.warnings.extend(warnings);
    }
    if args.json {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
        println!("{json}");
    } else {
        print!("{}", render_report(&report));
    }
    Ok(())
}

const COMPARED_METRICS: [(&str, &str); 5] = [
    ("recall", "recall"),
    ("map", "map"),
    ("mrr", "mrr"),
    ("ndcg", "ndcg"),
    ("ndcg_at_3", "ndcg@3"),
];

/// Renders the comparison of two evaluated runs, including paired
/// t-tests over the turns common to both.
pub fn render_comparison(report_a: &EvalReport, report_b: &EvalReport) -> Result<String> {
    let shared: Vec<&String> = report_a
        .per_turn
        .keys()
        .filter(|turn| report_b.per_turn.contains_key(*turn))
        .collect();
    if shared.len() < 2 {
        return Err(Error::Data(format!(
            "runs share only {} turn(s); at least 2 are needed for a paired test",
            shared.len()
        )));
    }
    let mut out = String::new();
    out.push_str(&format!("turns compared: {}\n", shared.len()));
    out.push_str(&format!(
        "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "metric", "run_a", "run_b", "delta", "t", "p"
    ));
    for (key, shown) in COMPARED_METRICS {
        let a: Vec<f64> = shared
            .iter()
            .map(|turn| report_a.per_turn[*turn].get(key).expect("known metric"))
            .collect();
        let b: Vec<f64> = shared
            .iter()
            .map(|turn| report_b.per_turn[*turn].get(key).expect("known metric"))
            .collect();
        let mean_a = a.iter().sum::<f64>() / a.len() as f64;
        let mean_b = b.iter().sum::<f64>() / b.len() as f64;
        // Differences are taken b - a so the sign of t matches delta.
        let (t, p) = paired_ttest(&b, &a)?;
        out.push_str(&format!(
            "{:<10} {:>10.6} {:>10.6} {:>+10.6} {:>10.4} {:>10.6}\n",
            shown,
            mean_a,
            mean_b,
            mean_b - mean_a,
            t,
            p
        ));
    }
    Ok(out)
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let lists_a = io::load_run_file(&args.run_a)?;
    let lists_b = io::load_run_file(&args.run_b)?;
    let mut qrels = io::load_qrels(&args.qrels)?;
    qrels.binary_threshold = args.threshold;
    let report_a = evaluate_run(&lists_a, &qrels, args.depth)?;
    let report_b = evaluate_run(&lists_b, &qrels, args.depth)?;
    print!("{}", render_comparison(&report_a, &report_b)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Qrels;
    use std::collections::BTreeMap;

    #[test]
    fn enum_parsers_accept_documented_values() {
        assert_eq!(parse_rewriter("remote").unwrap(), RewriterKind::Remote);
        assert_eq!(
            parse_rewriter("discourse_gated").unwrap(),
            RewriterKind::DiscourseGated
        );
        assert_eq!(parse_expansion("rm3").unwrap(), ExpansionKind::Rm3);
        assert_eq!(
            parse_cq_method("generate_entity").unwrap(),
            CQMethod::GenerateEntity
        );
        assert_eq!(
            parse_scorer("lexical").unwrap(),
            ScorerKind::LexicalFallback
        );
        assert!(parse_rewriter("bogus").is_err());
    }

    #[test]
    fn comparison_of_identical_reports_is_null() {
        let mut lists = BTreeMap::new();
        lists.insert(
            "c1_1".to_string(),
            crate::model::RankedList::new(
                vec![crate::model::RankedEntry {
                    passage_id: "p1".into(),
                    score: 1.0,
                }],
                10,
            ),
        );
        lists.insert(
            "c1_2".to_string(),
            crate::model::RankedList::new(
                vec![crate::model::RankedEntry {
                    passage_id: "p2".into(),
                    score: 1.0,
                }],
                10,
            ),
        );
        let mut qrels = Qrels::new(2);
        qrels.insert("c1_1", "p1", 3);
        qrels.insert("c1_2", "p1", 3);
        let report = evaluate_run(&lists, &qrels, 10).unwrap();
        let rendered = render_comparison(&report, &report).unwrap();
        for line in rendered.lines().skip(2) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(fields[3], "+0.000000", "{line}");
            assert_eq!(fields[5], "1.000000", "{line}");
        }
    }
}
