//! One function per subcommand. Each returns an [`Outcome`]; the JSON report
//! is also written to `report_dir/<command>.json` when a report directory is
//! configured.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, Cursor};
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use sentrank::corpus::{self, CleanDocument, RawDocument, Sentence, Topic};
use sentrank::evaluate::{evaluate_run, paired_t_test, parse_qrels, parse_run, write_run, MetricReport};
use sentrank::rerank::{features_from_cache, quantize, rank_features, TopicFeatures};
use sentrank::scorer::{spawn_scorer, ScoreRequest, ScoreResponse, SessionOptions, GOLDEN_REQUESTS, GOLDEN_RESPONSES};
use sentrank::tune::{evaluate_params, grid_search, FoldSpec};
use sentrank::{
    Analyzer, DocStore, Index, LexicalScorer, Qrels, Run, ScoredDoc, SentenceCache, SentenceScorer,
};

use crate::config::{CorpusFormat, ScorerSpec, Settings};
use crate::{write_atomic, CliError};

pub const BASELINE_TAG: &str = "baseline";
pub const RERANK_TAG: &str = "sentrank";

/// What a command produced: its report, text for standard output and
/// warnings for standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Value,
    pub stdout: String,
    pub warnings: Vec<String>,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn context<E: Into<CliError>>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| match e.into() {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Adds the config echo and warnings, writes the report file and renders
/// the default standard output.
fn finish(settings: &Settings, command: &str, mut report: Value, warnings: Vec<String>) -> Result<Outcome, CliError> {
    report["command"] = json!(command);
    report["config"] = settings.echo();
    report["warnings"] = json!(warnings);
    if let Some(dir) = settings.optional("report_dir") {
        write_atomic(&dir.join(format!("{command}.json")), pretty(&report).as_bytes())?;
    }
    Ok(Outcome {
        stdout: pretty(&report),
        report,
        warnings,
    })
}

fn load_raw(settings: &Settings, path: &Path) -> Result<Vec<RawDocument>, CliError> {
    let bytes = read(path)?;
    let docs = match settings.config.corpus_format {
        CorpusFormat::Trec => corpus::parse_trec_collection(&bytes),
        CorpusFormat::Jsonl => corpus::parse_jsonl_collection(BufReader::new(Cursor::new(bytes))),
    };
    docs.map_err(context(path))
}

fn load_prepared(settings: &Settings, path: &Path) -> Result<Vec<CleanDocument>, CliError> {
    let mode = settings.segmentation();
    let limit = settings.config.chunk_limit;
    load_raw(settings, path)?
        .par_iter()
        .map(|raw| corpus::prepare(raw, limit, mode).map_err(context(path)))
        .collect()
}

fn load_topics(path: &Path) -> Result<Vec<Topic>, CliError> {
    corpus::parse_topics(&read(path)?).map_err(context(path))
}

fn load_run(path: &Path) -> Result<Run, CliError> {
    parse_run(Cursor::new(read(path)?)).map_err(context(path))
}

fn load_qrels(path: &Path) -> Result<Qrels, CliError> {
    parse_qrels(Cursor::new(read(path)?)).map_err(context(path))
}

fn load_cache(path: &Path) -> Result<SentenceCache, CliError> {
    SentenceCache::parse(Cursor::new(read(path)?)).map_err(context(path))
}

fn analyzer(settings: &Settings) -> Analyzer {
    match &settings.config.stopwords {
        Some(words) => Analyzer::with_stopwords(words.iter().map(String::as_str)),
        None => Analyzer::default(),
    }
}

/// Builds and persists the index.
pub fn cmd_index(settings: &Settings) -> Result<Outcome, CliError> {
    let corpus_path = settings.input("corpus")?;
    let index_path = settings.required("index")?;

    let raw = load_raw(settings, &corpus_path)?;
    let docs: Vec<CleanDocument> = raw.par_iter().map(corpus::clean).collect();
    let index = Index::build(&docs, analyzer(settings))?;
    write_atomic(&index_path, index.to_json()?.as_bytes())?;

    let report = json!({
        "documents": index.doc_count(),
        "total_tokens": index.total_collection_tokens(),
        "vocabulary": index.vocabulary_size(),
        "avg_doc_length": index.avg_doc_length(),
    });
    finish(settings, "index", report, Vec::new())
}

/// Quantizes scores to the precision of the run file and restores the
/// (score descending, doc id ascending) order on the quantized values, so a
/// run read back from disk ranks exactly as written.
fn as_written(results: Vec<ScoredDoc>) -> Vec<ScoredDoc> {
    let mut out: Vec<ScoredDoc> = results
        .into_iter()
        .map(|d| ScoredDoc::new(d.doc_id, quantize(d.score)))
        .collect();
    out.sort_by(sentrank::index::ranking_order);
    out
}

/// Retrieves every topic with the base model and RM3.
pub fn cmd_search(settings: &Settings) -> Result<Outcome, CliError> {
    let index_path = settings.input("index")?;
    let topics_path = settings.input("topics")?;
    let run_path = settings.required("baseline_run")?;

    let index = Index::load(&index_path).map_err(CliError::from).map_err(context(&index_path))?;
    let topics = load_topics(&topics_path)?;
    let model = settings.config.model;
    let params = settings.config.search;
    let results: Vec<Vec<ScoredDoc>> = topics
        .par_iter()
        .map(|t| index.search_rm3(t, model, &params).map(as_written))
        .collect::<Result<_, _>>()?;

    let mut run = Run::default();
    let mut warnings = Vec::new();
    let mut retrieved = 0;
    for (topic, docs) in topics.iter().zip(&results) {
        if docs.is_empty() {
            warnings.push(format!(
                "topic {}: query `{}` matches no indexed term; omitted",
                topic.topic_id, topic.title
            ));
            continue;
        }
        retrieved += docs.len();
        run.set_ranking(&topic.topic_id, docs, BASELINE_TAG);
    }
    write_atomic(&run_path, write_run(&run, None).as_bytes())?;

    let report = json!({
        "topics": topics.len(),
        "topics_with_results": run.len(),
        "documents_retrieved": retrieved,
    });
    finish(settings, "search", report, warnings)
}

/// Candidates of every run topic, paired with their topic.
fn run_topics<'a>(run: &Run, topics: &'a [Topic]) -> Result<Vec<(&'a Topic, Vec<ScoredDoc>)>, CliError> {
    let by_id: BTreeMap<&str, &Topic> = topics.iter().map(|t| (t.topic_id.as_str(), t)).collect();
    run.topics()
        .map(|id| {
            let topic = by_id
                .get(id)
                .ok_or_else(|| CliError::Data(format!("run topic {id} is not in the topics file")))?;
            Ok((*topic, run.scored(id)))
        })
        .collect()
}

/// Sentences of the candidates that the cache has no score for.
fn missing_sentences<'a>(
    candidates: &[(&'a Topic, Vec<ScoredDoc>)],
    docs: &'a DocStore,
    cache: &SentenceCache,
) -> Result<Vec<(&'a Topic, Vec<&'a Sentence>)>, CliError> {
    let mut out = Vec::new();
    for (topic, cands) in candidates {
        let mut missing = Vec::new();
        for c in cands {
            let doc = docs
                .get(&c.doc_id)
                .ok_or_else(|| CliError::Data(format!("run document {} is not in the corpus", c.doc_id)))?;
            missing.extend(
                doc.sentences
                    .iter()
                    .filter(|s| cache.get(&topic.topic_id, &doc.doc_id, s.index).is_none()),
            );
        }
        if !missing.is_empty() {
            out.push((*topic, missing));
        }
    }
    Ok(out)
}

fn score_topic(scorer: &mut dyn SentenceScorer, topic: &Topic, sentences: &[&Sentence]) -> Result<Vec<f64>, CliError> {
    let pairs: Vec<(&str, &str)> = sentences
        .iter()
        .map(|s| (topic.title.as_str(), s.text.as_str()))
        .collect();
    let scores = scorer.score_batch(&pairs)?;
    if scores.len() != pairs.len() {
        return Err(CliError::Scorer(format!(
            "{} scores for {} sentences",
            scores.len(),
            pairs.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(CliError::Scorer(format!("score {bad} outside [0, 1]")));
    }
    Ok(scores)
}

/// Scores the missing sentences and records them in `cache`. Returns the
/// scorer's name, or `None` when nothing needed scoring.
fn fill_cache(
    settings: &Settings,
    index: Option<&Index>,
    missing: &[(&Topic, Vec<&Sentence>)],
    cache: &mut SentenceCache,
) -> Result<Option<String>, CliError> {
    if missing.is_empty() {
        return Ok(None);
    }
    let (name, scored): (String, Vec<Vec<f64>>) = match &settings.config.scorer {
        ScorerSpec::Lexical => {
            let index = index.expect("lexical scoring loads the index");
            let scored = missing
                .par_iter()
                .map(|(topic, sentences)| score_topic(&mut LexicalScorer::new(index), topic, sentences))
                .collect::<Result<_, _>>()?;
            ("lexical".to_string(), scored)
        }
        ScorerSpec::External { command } => {
            let options = SessionOptions {
                timeout: settings.scorer_timeout(),
                window: settings.config.scorer_window,
            };
            let mut session = spawn_scorer(command, options)?;
            let scored = missing
                .iter()
                .map(|(topic, sentences)| score_topic(&mut session, topic, sentences))
                .collect::<Result<_, _>>()?;
            let name = session.name().to_string();
            let status = session.close()?;
            if !status.success() {
                return Err(CliError::Scorer(format!("scorer exited with {status} after closing")));
            }
            (name, scored)
        }
    };
    for ((topic, sentences), scores) in missing.iter().zip(scored) {
        for (s, score) in sentences.iter().zip(scores) {
            cache.insert(&topic.topic_id, &s.doc_id, s.index, score);
        }
    }
    Ok(Some(name))
}

/// Reranks the baseline run with fixed aggregation parameters.
pub fn cmd_rerank(settings: &Settings) -> Result<Outcome, CliError> {
    let params = settings
        .config
        .aggregation
        .clone()
        .ok_or_else(|| CliError::Config("rerank needs `aggregation` ({\"a\": .., \"w\": [1.0, ..]}) or --a/--w".into()))?;
    let corpus_path = settings.input("corpus")?;
    let topics_path = settings.input("topics")?;
    let baseline_path = settings.input("baseline_run")?;
    let index_path = match settings.config.scorer {
        ScorerSpec::Lexical => Some(settings.input("index")?),
        ScorerSpec::External { .. } => None,
    };
    let out_path = settings.required("rerank_run")?;
    let cache_path = settings.optional("cache");

    let topics = load_topics(&topics_path)?;
    let run = load_run(&baseline_path)?;
    let docs = DocStore::new(load_prepared(settings, &corpus_path)?);
    let mut cache = match &cache_path {
        Some(p) if p.is_file() => load_cache(p)?,
        _ => SentenceCache::new(),
    };
    let candidates = run_topics(&run, &topics)?;
    let missing = missing_sentences(&candidates, &docs, &cache)?;
    let to_score: usize = missing.iter().map(|(_, s)| s.len()).sum();

    let index = match &index_path {
        Some(p) => Some(Index::load(p).map_err(CliError::from).map_err(context(p))?),
        None => None,
    };
    let scorer = fill_cache(settings, index.as_ref(), &missing, &mut cache)?;
    if let (Some(p), Some(_)) = (&cache_path, &scorer) {
        write_atomic(p, cache.to_text().as_bytes())?;
    }

    let ranked: Vec<(String, Vec<ScoredDoc>)> = candidates
        .par_iter()
        .map(|(topic, cands)| {
            let features = features_from_cache(&topic.topic_id, cands, &docs, &cache)?;
            let docs = rank_features(&features, &params)
                .into_iter()
                .map(|d| ScoredDoc::new(d.doc_id, d.final_score))
                .collect();
            Ok((topic.topic_id.clone(), docs))
        })
        .collect::<Result<_, CliError>>()?;
    let mut out = Run::default();
    for (topic, docs) in &ranked {
        out.set_ranking(topic, docs, RERANK_TAG);
    }
    write_atomic(&out_path, write_run(&out, None).as_bytes())?;

    let report = json!({
        "topics": out.len(),
        "params": params,
        "sentences_scored": to_score,
        "cache_entries": cache.len(),
        "scorer": scorer,
    });
    finish(settings, "rerank", report, Vec::new())
}

fn parse_folds(path: &Path) -> Result<FoldSpec, CliError> {
    let text = read(path)?;
    let folds: Vec<Vec<String>> =
        serde_json::from_slice(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    FoldSpec::new(folds).map_err(CliError::from).map_err(context(path))
}

/// Cross-validated grid search over cached sentence scores, and the run
/// that reranks each held-out fold with its training folds' winner.
pub fn cmd_tune(settings: &Settings) -> Result<Outcome, CliError> {
    let corpus_path = settings.input("corpus")?;
    let baseline_path = settings.input("baseline_run")?;
    let cache_path = settings.input("cache")?;
    let folds_path = settings.input("folds")?;
    let qrels_path = settings.input("qrels")?;
    let out_path = settings.required("tuned_run")?;

    let folds = parse_folds(&folds_path)?;
    let run = load_run(&baseline_path)?;
    let qrels = load_qrels(&qrels_path)?;
    let cache = load_cache(&cache_path)?;
    let docs = DocStore::new(load_prepared(settings, &corpus_path)?);
    let depth = settings.config.eval_depth;

    let all_topics = folds.all_topics();
    let mut warnings: Vec<String> = run
        .topics()
        .filter(|t| !all_topics.contains(*t))
        .map(|t| format!("run topic {t} is in no fold; ignored"))
        .collect();
    for t in all_topics.iter().filter(|t| run.entries(t).is_none()) {
        warnings.push(format!("fold topic {t} has no baseline results"));
    }
    let features: BTreeMap<String, TopicFeatures> = all_topics
        .par_iter()
        .map(|t| Ok((t.clone(), features_from_cache(t, &run.scored(t), &docs, &cache)?)))
        .collect::<Result<_, CliError>>()?;

    let result = grid_search(&folds, settings.config.tune_n, &features, &qrels, depth)?;
    let mut tuned = Run::default();
    let mut per_fold = Vec::new();
    for fold in &result.per_fold {
        let held_out = folds.fold(fold.held_out);
        for topic in held_out {
            let docs: Vec<ScoredDoc> = rank_features(&features[topic], &fold.best_params)
                .into_iter()
                .map(|d| ScoredDoc::new(d.doc_id, d.final_score))
                .collect();
            if !docs.is_empty() {
                tuned.set_ranking(topic, &docs, RERANK_TAG);
            }
        }
        let held_out_ap = evaluate_params(&fold.best_params, held_out, &features, &qrels, depth).ok();
        per_fold.push(json!({
            "held_out": held_out,
            "params": fold.best_params,
            "training_ap": fold.training_ap,
            "held_out_ap": held_out_ap,
        }));
    }
    write_atomic(&out_path, write_run(&tuned, None).as_bytes())?;

    let metrics = evaluate_run(&tuned, &qrels, &settings.config.ks, depth)?;
    let report = json!({
        "n": result.n,
        "folds": per_fold,
        "cross_validated": {
            "mean_ap": metrics.mean_ap,
            "mean_p_at_k": metrics.mean_p_at_k,
            "topics": metrics.per_topic.len(),
        },
    });
    finish(settings, "tune", report, warnings)
}

fn metric_warnings(name: &str, report: &MetricReport) -> Vec<String> {
    report
        .excluded
        .iter()
        .map(|(t, why)| format!("{name}: topic {t} excluded ({why})"))
        .collect()
}

/// Metrics for one run, or for two runs plus a paired t-test on per-topic AP.
pub fn cmd_eval(settings: &Settings, run_a: &Path, run_b: Option<&Path>) -> Result<Outcome, CliError> {
    let qrels_path = settings.input("qrels")?;
    for p in std::iter::once(run_a).chain(run_b) {
        if !p.is_file() {
            return Err(CliError::Config(format!("run file {} does not exist", p.display())));
        }
    }
    let qrels = load_qrels(&qrels_path)?;
    let ks = &settings.config.ks;
    let depth = settings.config.eval_depth;
    let first = load_run(run_a)?;
    let a = evaluate_run(&first, &qrels, ks, depth)?;
    let mut warnings = metric_warnings(&run_a.display().to_string(), &a);
    let mut stdout = format!("# {}\n{}", run_a.display(), a.to_table());
    let mut runs = vec![json!({"run": run_a.display().to_string(), "metrics": a})];
    let mut t_test = Value::Null;

    if let Some(run_b) = run_b {
        let second = load_run(run_b)?;
        let ta: BTreeSet<&str> = first.topics().collect();
        let tb: BTreeSet<&str> = second.topics().collect();
        if ta != tb {
            let only_a: Vec<&str> = ta.difference(&tb).copied().collect();
            let only_b: Vec<&str> = tb.difference(&ta).copied().collect();
            return Err(CliError::Data(format!(
                "runs cover different topics: only in {}: {only_a:?}; only in {}: {only_b:?}",
                run_a.display(),
                run_b.display()
            )));
        }
        let b = evaluate_run(&second, &qrels, ks, depth)?;
        warnings.extend(metric_warnings(&run_b.display().to_string(), &b));
        stdout.push_str(&format!("\n# {}\n{}", run_b.display(), b.to_table()));
        let x: Vec<f64> = a.per_topic.values().map(|m| m.ap).collect();
        let y: Vec<f64> = b.per_topic.values().map(|m| m.ap).collect();
        match paired_t_test(&x, &y) {
            Ok(t) => {
                stdout.push_str(&format!(
                    "\npaired t-test on AP: t = {:.4}, p = {:.4}, n = {}{}\n",
                    t.t,
                    t.p,
                    t.n,
                    if t.degenerate { " (identical runs)" } else { "" }
                ));
                t_test = json!(t);
            }
            Err(e) => warnings.push(format!("t-test skipped: {e}")),
        }
        runs.push(json!({"run": run_b.display().to_string(), "metrics": b}));
    }

    let report = json!({ "runs": runs, "t_test": t_test });
    let mut outcome = finish(settings, "eval", report, warnings)?;
    outcome.stdout = stdout;
    Ok(outcome)
}

fn check(lines: &mut String, what: &str, ok: bool, detail: String) -> Result<(), CliError> {
    lines.push_str(&format!("{} {what}: {detail}\n", if ok { "ok  " } else { "FAIL" }));
    if ok {
        Ok(())
    } else {
        Err(CliError::Scorer(format!("{what}: {detail}")))
    }
}

/// Runs the golden transcript against an external scorer. `command`
/// overrides the configured scorer command. With `strict`, scores must equal
/// the golden responses (true only for the deterministic stub).
pub fn cmd_scorer_check(settings: &Settings, command: Option<Vec<String>>, strict: bool) -> Result<Outcome, CliError> {
    let command = match (command, &settings.config.scorer) {
        (Some(c), _) if !c.is_empty() => c,
        (_, ScorerSpec::External { command }) => command.clone(),
        _ => return Err(CliError::Usage("scorer-check needs a scorer command (after `--` or in config)".into())),
    };
    let requests: Vec<ScoreRequest> = GOLDEN_REQUESTS
        .lines()
        .map(|l| serde_json::from_str(l).expect("golden requests parse"))
        .collect();
    let golden: Vec<f64> = GOLDEN_RESPONSES
        .lines()
        .map(|l| serde_json::from_str::<ScoreResponse>(l).expect("golden responses parse").score)
        .collect();
    let pairs: Vec<(&str, &str)> = requests.iter().map(|r| (r.query.as_str(), r.text.as_str())).collect();
    let options = SessionOptions {
        timeout: settings.scorer_timeout(),
        window: settings.config.scorer_window,
    };

    let mut lines = String::new();
    let mut session = spawn_scorer(&command, options)?;
    let hs = session.handshake().clone();
    check(&mut lines, "handshake", true, format!("{} `{}`, max_tokens {}", hs.protocol, hs.name, hs.max_tokens))?;
    let first = session.score_batch(&pairs)?;
    check(&mut lines, "golden requests", true, format!("{} scores in [0, 1]", first.len()))?;
    let second = session.score_batch(&pairs)?;
    check(&mut lines, "determinism", first == second, "repeated requests return identical scores".into())?;
    if strict {
        check(&mut lines, "golden responses", first == golden, format!("{first:?}"))?;
    }
    let long = vec!["token"; 10_000].join(" ");
    let score = session.score_batch(&[("token", long.as_str())])?;
    check(&mut lines, "long input", true, format!("10000-token text scored {}", score[0]))?;
    let status = session.close()?;
    check(&mut lines, "teardown", status.success(), format!("exit {status}"))?;

    let report = json!({
        "scorer": command,
        "handshake": hs,
        "scores": first,
        "strict": strict,
    });
    let mut outcome = finish(settings, "scorer-check", report, Vec::new())?;
    outcome.stdout = lines;
    Ok(outcome)
}
