use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sentrank::RetrievalModel;
use sentrank_cli::config::CorpusFormat;
use sentrank_cli::{commands, CliError, Outcome, Overrides, Settings};

#[derive(Parser)]
#[command(name = "sentrank", version, about = "Sentence-level evidence aggregation for document reranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist the inverted index
    Index,
    /// Retrieve a baseline run (base model + RM3)
    Search,
    /// Rerank the baseline run with fixed aggregation parameters
    Rerank,
    /// Cross-validated grid search over cached sentence scores
    Tune,
    /// Evaluate one run, or compare two with a paired t-test
    Eval {
        run: PathBuf,
        other: Option<PathBuf>,
    },
    /// Check an external scorer against the golden transcript
    ScorerCheck {
        /// Require scores identical to the golden responses
        #[arg(long)]
        strict: bool,
        /// Scorer command line (defaults to the configured one)
        #[arg(last = true)]
        command: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<String>,
    #[arg(long, global = true, value_parser = parse_format)]
    corpus_format: Option<CorpusFormat>,
    #[arg(long, global = true)]
    topics: Option<String>,
    #[arg(long, global = true)]
    qrels: Option<String>,
    #[arg(long, global = true)]
    folds: Option<String>,
    #[arg(long, global = true)]
    index: Option<String>,
    #[arg(long, global = true)]
    cache: Option<String>,
    /// Baseline run (written by search, read by rerank and tune)
    #[arg(long, global = true)]
    baseline: Option<String>,
    /// Output of rerank
    #[arg(long, global = true)]
    rerank_run: Option<String>,
    /// Output of tune
    #[arg(long, global = true)]
    tuned_run: Option<String>,
    /// Directory for JSON reports
    #[arg(long, global = true)]
    report_dir: Option<String>,
    #[arg(long, global = true, value_parser = parse_model)]
    model: Option<RetrievalModel>,
    #[arg(long, global = true)]
    k1: Option<f64>,
    #[arg(long, global = true)]
    b: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true)]
    fb_docs: Option<usize>,
    #[arg(long, global = true)]
    fb_terms: Option<usize>,
    #[arg(long, global = true)]
    orig_weight: Option<f64>,
    /// Interpolation weight of the retrieval score
    #[arg(long, global = true)]
    a: Option<f64>,
    /// Sentence weights, comma separated, starting with 1
    #[arg(long, global = true, value_delimiter = ',')]
    w: Option<Vec<f64>>,
    /// Number of sentences for tune (1-4)
    #[arg(long, global = true)]
    tune_n: Option<usize>,
    /// Use the in-process lexical scorer
    #[arg(long, global = true)]
    lexical: bool,
    /// External scorer command line, whitespace separated
    #[arg(long, global = true)]
    scorer_cmd: Option<String>,
    #[arg(long, global = true)]
    scorer_timeout: Option<f64>,
    #[arg(long, global = true)]
    scorer_window: Option<usize>,
    #[arg(long, global = true)]
    chunk_limit: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, global = true)]
    eval_depth: Option<usize>,
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    match s {
        "trec" => Ok(CorpusFormat::Trec),
        "jsonl" => Ok(CorpusFormat::Jsonl),
        _ => Err(format!("unknown corpus format `{s}` (trec, jsonl)")),
    }
}

fn parse_model(s: &str) -> Result<RetrievalModel, String> {
    match s {
        "bm25" => Ok(RetrievalModel::Bm25),
        "ql" => Ok(RetrievalModel::Ql),
        _ => Err(format!("unknown model `{s}` (bm25, ql)")),
    }
}

impl Common {
    fn overrides(self) -> Overrides {
        Overrides {
            corpus: self.corpus,
            corpus_format: self.corpus_format,
            topics: self.topics,
            qrels: self.qrels,
            folds: self.folds,
            index: self.index,
            cache: self.cache,
            baseline_run: self.baseline,
            rerank_run: self.rerank_run,
            tuned_run: self.tuned_run,
            report_dir: self.report_dir,
            model: self.model,
            k1: self.k1,
            b: self.b,
            mu: self.mu,
            depth: self.depth,
            fb_docs: self.fb_docs,
            fb_terms: self.fb_terms,
            orig_weight: self.orig_weight,
            a: self.a,
            w: self.w,
            tune_n: self.tune_n,
            scorer_command: self
                .scorer_cmd
                .map(|c| c.split_whitespace().map(str::to_string).collect()),
            lexical: self.lexical,
            scorer_timeout_secs: self.scorer_timeout,
            scorer_window: self.scorer_window,
            chunk_limit: self.chunk_limit,
            ks: self.ks,
            eval_depth: self.eval_depth,
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let config = cli.common.config.clone();
    let settings = Settings::load(config.as_deref(), cli.common.overrides())?;
    match cli.command {
        Command::Index => commands::cmd_index(&settings),
        Command::Search => commands::cmd_search(&settings),
        Command::Rerank => commands::cmd_rerank(&settings),
        Command::Tune => commands::cmd_tune(&settings),
        Command::Eval { run, other } => commands::cmd_eval(&settings, &run, other.as_deref()),
        Command::ScorerCheck { strict, command } => {
            commands::cmd_scorer_check(&settings, Some(command).filter(|c| !c.is_empty()), strict)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", outcome.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sentrank: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
