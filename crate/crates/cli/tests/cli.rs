mod support;

use std::collections::HashSet;
use std::io::Cursor;

use sentrank::evaluate::{parse_run, write_run};
use sentrank::rerank::quantize;
use sentrank::{corpus, Index, RetrievalModel, Run, ScoredDoc, SearchParams, WeightedQuery};
use support::{code, ok, read, report, run_order, sentrank};

#[path = "../../core/tests/common/mod.rs"]
mod common;

#[test]
fn index_reports_collection_statistics() {
    let dir = support::mini_workspace();
    let out = ok(dir.path(), &["index", "--config", "config.json"]);
    let docs = read(dir.path(), "corpus.trec").matches("<DOC>").count();
    let r = report(dir.path(), "index");
    assert_eq!(r["documents"], docs);
    assert_eq!(r["config"]["corpus"], "corpus.trec");
    let first = read(dir.path(), "out/reports/index.json");
    let index = read(dir.path(), "out/index.json");
    ok(dir.path(), &["index", "--config", "config.json"]);
    assert_eq!(read(dir.path(), "out/reports/index.json"), first);
    assert_eq!(read(dir.path(), "out/index.json"), index);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), first);
}

#[test]
fn missing_corpus_fails_before_writing() {
    let dir = support::mini_workspace();
    let out = sentrank(dir.path(), &["index", "--config", "config.json", "--corpus", "nope.trec"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.trec"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn duplicate_documents_are_data_errors() {
    let dir = support::mini_workspace();
    let doc = "<DOC><DOCNO>X</DOCNO><TEXT>a</TEXT></DOC>\n";
    std::fs::write(dir.path().join("dup.trec"), doc.repeat(2)).unwrap();
    let out = sentrank(dir.path(), &["index", "--config", "config.json", "--corpus", "dup.trec"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));
    assert!(!dir.path().join("out/index.json").exists());
}

#[test]
fn usage_errors_exit_1() {
    let dir = support::mini_workspace();
    assert_eq!(code(&sentrank(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&sentrank(dir.path(), &["search", "--config", "config.json", "--b", "2"])), 1);
    assert_eq!(code(&sentrank(dir.path(), &["search", "--config", "missing.json"])), 1);
    assert!(sentrank(dir.path(), &["--help"]).status.success());
}

fn base_model_run(dir: &std::path::Path, model: RetrievalModel) -> String {
    let index = Index::load(&dir.join("out/index.json")).unwrap();
    let topics = corpus::parse_topics(read(dir, "topics.txt").as_bytes()).unwrap();
    let mut run = Run::default();
    for t in topics {
        let q = WeightedQuery::from_text(index.analyzer(), &t.title).unwrap();
        let mut docs: Vec<ScoredDoc> = index
            .search(model, &q, &SearchParams::default())
            .unwrap()
            .into_iter()
            .map(|d| ScoredDoc::new(d.doc_id, quantize(d.score)))
            .collect();
        docs.sort_by(sentrank::index::ranking_order);
        run.set_ranking(&t.topic_id, &docs, "baseline");
    }
    write_run(&run, None)
}

#[test]
fn full_original_weight_equals_base_model_run() {
    let dir = support::mini_workspace();
    ok(dir.path(), &["index", "--config", "config.json"]);
    for (model, name) in [(RetrievalModel::Bm25, "bm25"), (RetrievalModel::Ql, "ql")] {
        ok(dir.path(), &["search", "--config", "config.json", "--orig-weight", "1.0", "--model", name]);
        assert_eq!(read(dir.path(), "out/baseline.run"), base_model_run(dir.path(), model), "{name}");
    }
}

#[test]
fn unmatched_topic_is_omitted_with_warning() {
    let dir = support::mini_workspace();
    ok(dir.path(), &["index", "--config", "config.json"]);
    let mut topics = read(dir.path(), "topics.txt");
    topics.push_str("<top>\n<num> Number: 999 </num>\n<title> zzzyx qwvut </title>\n</top>\n");
    std::fs::write(dir.path().join("topics.txt"), topics).unwrap();
    let out = ok(dir.path(), &["search", "--config", "config.json"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("topic 999"));
    let run = read(dir.path(), "out/baseline.run");
    assert!(!run.lines().any(|l| l.starts_with("999 ")));
    assert_eq!(report(dir.path(), "search")["topics_with_results"], 10);
}

#[test]
fn search_matches_brute_force_on_mini_corpus() {
    let dir = support::mini_workspace();
    ok(dir.path(), &["index", "--config", "config.json"]);
    ok(dir.path(), &["search", "--config", "config.json"]);
    let index = Index::load(&dir.path().join("out/index.json")).unwrap();
    let analyzer = index.analyzer().clone();
    let raw = corpus::parse_trec_collection(read(dir.path(), "corpus.trec").as_bytes()).unwrap();
    let docs: Vec<common::PlainDoc> = raw
        .iter()
        .map(|r| common::PlainDoc {
            id: r.doc_id.clone(),
            tokens: analyzer.tokenize(&corpus::clean(r).text),
        })
        .collect();
    let stop: HashSet<&str> = sentrank::index::ENGLISH_STOPWORDS.into_iter().collect();
    let run = parse_run(Cursor::new(read(dir.path(), "out/baseline.run"))).unwrap();
    let p = SearchParams::default();
    for t in corpus::parse_topics(read(dir.path(), "topics.txt").as_bytes()).unwrap() {
        let terms = analyzer.tokenize(&t.title);
        let mut q = std::collections::BTreeMap::new();
        for term in &terms {
            *q.entry(term.clone()).or_insert(0.0) += 1.0 / terms.len() as f64;
        }
        let initial = common::brute_bm25(&docs, &q, p.k1, p.b, p.depth);
        let expanded =
            common::brute_rm3_weights(&docs, &q, &initial, p.fb_docs, p.fb_terms, p.orig_weight, &stop);
        let mut want: Vec<(String, f64)> = common::brute_bm25(&docs, &expanded, p.k1, p.b, p.depth)
            .into_iter()
            .map(|(d, s)| (d, quantize(s)))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        common::compare_rankings(&run.scored(&t.topic_id), &want, 1e-6)
            .unwrap_or_else(|e| panic!("topic {}: {e}", t.topic_id));
    }
}

#[test]
fn rerank_with_full_retrieval_weight_keeps_baseline_order() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    ok(dir.path(), &["rerank", "--config", "config.json", "--a", "1", "--w", "1,0.5,0.25"]);
    assert_eq!(
        run_order(&read(dir.path(), "out/rerank.run")),
        run_order(&read(dir.path(), "out/baseline.run"))
    );
    assert!(read(dir.path(), "out/rerank.run").lines().all(|l| l.ends_with(" sentrank")));
}

#[test]
fn cached_scores_need_no_scorer_process() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    let before = read(dir.path(), "out/rerank.run");
    // A scorer that cannot be started would fail the command if launched.
    ok(
        dir.path(),
        &["rerank", "--config", "config.json", "--scorer-cmd", "/nonexistent/scorer --flag"],
    );
    assert_eq!(read(dir.path(), "out/rerank.run"), before);
    assert_eq!(report(dir.path(), "rerank")["sentences_scored"], 0);

    std::fs::remove_file(dir.path().join("out/sentences.cache")).unwrap();
    let out = sentrank(
        dir.path(),
        &["rerank", "--config", "config.json", "--scorer-cmd", "/nonexistent/scorer"],
    );
    assert_eq!(code(&out), 3);
    assert!(!dir.path().join("out/sentences.cache").exists());
}

#[test]
fn rerank_matches_scripted_recomputation() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    ok(dir.path(), &["rerank", "--config", "config.json", "--a", "0.5", "--w", "1"]);
    let index = Index::load(&dir.path().join("out/index.json")).unwrap();
    let raw = corpus::parse_trec_collection(read(dir.path(), "corpus.trec").as_bytes()).unwrap();
    let topics = corpus::parse_topics(read(dir.path(), "topics.txt").as_bytes()).unwrap();
    let baseline = parse_run(Cursor::new(read(dir.path(), "out/baseline.run"))).unwrap();
    let reranked = parse_run(Cursor::new(read(dir.path(), "out/rerank.run"))).unwrap();
    for t in &topics {
        let cands = baseline.scored(&t.topic_id);
        let min = cands.iter().map(|c| c.score).fold(f64::INFINITY, f64::min);
        let max = cands.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
        let mut want: Vec<(String, f64)> = cands
            .iter()
            .map(|c| {
                let r = raw.iter().find(|r| r.doc_id == c.doc_id).unwrap();
                let text = corpus::clean_text(&r.raw_text);
                let scores: Vec<f64> = corpus::segment(&text)
                    .iter()
                    .map(|s| quantize(sentrank::scorer::lexical_score(&t.title, &s.text, &index)))
                    .collect();
                let norm = if max > min { (c.score - min) / (max - min) } else { 1.0 };
                (c.doc_id.clone(), common::brute_final(0.5, &[1.0], norm, &scores))
            })
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got = reranked.scored(&t.topic_id);
        let got_ids: Vec<&str> = got.iter().map(|d| d.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|d| d.0.as_str()).collect();
        assert_eq!(got_ids, want_ids, "topic {}", t.topic_id);
        for (g, w) in got.iter().zip(&want) {
            assert!((g.score - w.1).abs() <= 5e-7, "{} {} vs {}", g.doc_id, g.score, w.1);
        }
    }
}

#[test]
fn zero_sentence_scores_tune_back_to_baseline() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    let zeroed: String = read(dir.path(), "out/sentences.cache")
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            format!("{} {} {} 0.000000\n", f[0], f[1], f[2])
        })
        .collect();
    std::fs::write(dir.path().join("out/sentences.cache"), zeroed).unwrap();
    ok(dir.path(), &["tune", "--config", "config.json", "--tune-n", "2"]);
    assert_eq!(
        run_order(&read(dir.path(), "out/tuned.run")),
        run_order(&read(dir.path(), "out/baseline.run"))
    );
    for fold in report(dir.path(), "tune")["folds"].as_array().unwrap() {
        assert_eq!(fold["params"]["a"], 1.0);
        assert_eq!(fold["params"]["w"], serde_json::json!([1.0, 0.0]));
    }
}

#[test]
fn identical_folds_choose_identical_params() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    // Topic 901 is a copy of 401 in every input.
    let copy = |file: &str, f: &dyn Fn(&str) -> Option<String>| {
        let text = read(dir.path(), file);
        let extra: String = text.lines().filter_map(f).collect();
        std::fs::write(dir.path().join(file), text + &extra).unwrap();
    };
    let rename = |l: &str| l.strip_prefix("401 ").map(|rest| format!("901 {rest}\n"));
    copy("out/baseline.run", &rename);
    copy("out/sentences.cache", &rename);
    copy("qrels.txt", &rename);
    std::fs::write(dir.path().join("pair.json"), r#"[["401"], ["901"]]"#).unwrap();
    let out = ok(dir.path(), &["tune", "--config", "config.json", "--folds", "pair.json"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("in no fold"));
    let folds = report(dir.path(), "tune")["folds"].as_array().unwrap().clone();
    assert_eq!(folds.len(), 2);
    assert_eq!(folds[0]["params"], folds[1]["params"]);
    assert_eq!(folds[0]["training_ap"], folds[1]["training_ap"]);
}

#[test]
fn tune_reports_missing_cache_entry() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    let cache = read(dir.path(), "out/sentences.cache");
    let (first, rest) = cache.split_once('\n').unwrap();
    std::fs::write(dir.path().join("out/sentences.cache"), rest).unwrap();
    let out = sentrank(dir.path(), &["tune", "--config", "config.json"]);
    assert_eq!(code(&out), 2);
    let f: Vec<&str> = first.split_whitespace().collect();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("topic {}, document {}, sentence {}", f[0], f[1], f[2])), "{stderr}");
    assert!(!dir.path().join("out/tuned.run").exists());
}

#[test]
fn eval_run_against_itself_is_degenerate() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    let out = ok(dir.path(), &["eval", "--config", "config.json", "out/baseline.run", "out/baseline.run"]);
    let r = report(dir.path(), "eval");
    assert_eq!(r["t_test"]["degenerate"], true);
    assert_eq!(r["t_test"]["p"], 1.0);
    assert_eq!(r["t_test"]["t"], 0.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("p = 1.0000"));
}

#[test]
fn eval_matches_brute_force_metrics() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    ok(dir.path(), &["eval", "--config", "config.json", "out/rerank.run"]);
    let r = report(dir.path(), "eval");
    let metrics = &r["runs"][0]["metrics"];
    let order = run_order(&read(dir.path(), "out/rerank.run"));
    let mut relevant: std::collections::BTreeMap<String, HashSet<String>> = Default::default();
    for line in read(dir.path(), "qrels.txt").lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let set = relevant.entry(f[0].to_string()).or_default();
        if f[3] != "0" {
            set.insert(f[2].to_string());
        }
    }
    let mut mean = 0.0;
    for (topic, ranked) in &order {
        let ap = common::brute_ap(ranked, &relevant[topic], 1000);
        mean += ap / order.len() as f64;
        assert!((metrics["per_topic"][topic]["ap"].as_f64().unwrap() - ap).abs() < 1e-12);
        for k in [10usize, 20, 30] {
            let p = common::brute_precision(ranked, &relevant[topic], k);
            let got = metrics["per_topic"][topic]["p_at_k"][k.to_string()].as_f64().unwrap();
            assert!((got - p).abs() < 1e-12);
        }
    }
    assert!((metrics["mean_ap"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn eval_excludes_unjudged_topics_and_rejects_mismatched_runs() {
    let dir = support::mini_workspace();
    support::index_search_rerank(dir.path());
    let qrels: String = read(dir.path(), "qrels.txt")
        .lines()
        .filter(|l| !l.starts_with("405 "))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(dir.path().join("partial_qrels.txt"), qrels).unwrap();
    let out = ok(
        dir.path(),
        &["eval", "--config", "config.json", "--qrels", "partial_qrels.txt", "out/baseline.run"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("topic 405 excluded"));
    let r = report(dir.path(), "eval");
    assert!(r["runs"][0]["metrics"]["per_topic"].get("405").is_none());
    assert_eq!(r["runs"][0]["metrics"]["excluded"]["405"], "no judgments");

    let short: String = read(dir.path(), "out/baseline.run")
        .lines()
        .filter(|l| !l.starts_with("410 "))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(dir.path().join("short.run"), short).unwrap();
    let out = sentrank(dir.path(), &["eval", "--config", "config.json", "out/baseline.run", "short.run"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"410\""));
}

#[test]
fn scorer_check_against_stub() {
    let dir = support::mini_workspace();
    let stub = support::stub_scorer().to_str().unwrap();
    let out = ok(dir.path(), &["scorer-check", "--strict", "--", stub]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ok   golden responses"), "{stdout}");
    assert!(stdout.contains("ok   teardown"), "{stdout}");

    let out = sentrank(dir.path(), &["scorer-check", "--", stub, "--mode", "bad-handshake"]);
    assert_eq!(code(&out), 3);
    let out = sentrank(dir.path(), &["scorer-check", "--", stub, "--mode", "out-of-range"]);
    assert_eq!(code(&out), 3);
    let out = sentrank(dir.path(), &["scorer-check", "--strict", "--", stub, "--mode", "length"]);
    assert_eq!(code(&out), 3);
    assert_eq!(code(&sentrank(dir.path(), &["scorer-check"])), 1);
}

#[test]
fn rerank_through_external_stub_matches_in_process_overlap() {
    let dir = support::mini_workspace();
    ok(dir.path(), &["index", "--config", "config.json"]);
    ok(dir.path(), &["search", "--config", "config.json", "--depth", "20"]);
    let stub = support::stub_scorer().to_str().unwrap();
    ok(dir.path(), &["rerank", "--config", "config.json", "--scorer-cmd", stub]);
    let r = report(dir.path(), "rerank");
    assert_eq!(r["scorer"], "stub");
    let cache = read(dir.path(), "out/sentences.cache");
    let raw = corpus::parse_trec_collection(read(dir.path(), "corpus.trec").as_bytes()).unwrap();
    let topics = corpus::parse_topics(read(dir.path(), "topics.txt").as_bytes()).unwrap();
    for line in cache.lines().step_by(7) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let title = &topics.iter().find(|t| t.topic_id == f[0]).unwrap().title;
        let doc = corpus::prepare(
            raw.iter().find(|d| d.doc_id == f[1]).unwrap(),
            256,
            corpus::Segmentation::Sentences,
        )
        .unwrap();
        let text = &doc.sentences[f[2].parse::<usize>().unwrap()].text;
        let want = quantize(sentrank::scorer::overlap_score(title, text));
        assert_eq!(f[3].parse::<f64>().unwrap(), want, "{line}");
    }
}
