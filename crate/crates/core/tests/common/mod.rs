//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. Nothing here touches the inverted index: documents are
//! plain token lists and every statistic is recounted on demand.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A tokenized document.
#[derive(Debug, Clone)]
pub struct PlainDoc {
    pub id: String,
    pub tokens: Vec<String>,
}

impl PlainDoc {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    fn tf(&self, term: &str) -> usize {
        self.tokens.iter().filter(|t| *t == term).count()
    }
}

pub fn vocabulary(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("w{i}")).collect()
}

/// Random corpus with ids `d000..`; document lengths in `0..=max_len`.
pub fn random_corpus(rng: &mut ChaCha8Rng, docs: usize, vocab: &[String], max_len: usize) -> Vec<PlainDoc> {
    (0..docs)
        .map(|i| {
            let len = rng.gen_range(0..=max_len);
            PlainDoc {
                id: format!("d{i:03}"),
                tokens: (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect(),
            }
        })
        .collect()
}

/// Random query with 1..=4 terms and weights in (0, 1].
pub fn random_query(rng: &mut ChaCha8Rng, vocab: &[String]) -> BTreeMap<String, f64> {
    let mut q = BTreeMap::new();
    for _ in 0..rng.gen_range(1..=4) {
        let w: f64 = rng.gen_range(0.05..=1.0);
        q.insert(vocab.choose(rng).unwrap().clone(), w);
    }
    q
}

fn sort_ranking(mut scored: Vec<(String, f64)>, depth: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(depth);
    scored
}

fn matches(doc: &PlainDoc, query: &BTreeMap<String, f64>) -> bool {
    query.keys().any(|t| doc.tf(t) > 0)
}

pub fn brute_bm25(
    docs: &[PlainDoc],
    query: &BTreeMap<String, f64>,
    k1: f64,
    b: f64,
    depth: usize,
) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avdl = docs.iter().map(|d| d.tokens.len()).sum::<usize>() as f64 / n;
    let df: BTreeMap<&String, f64> = query
        .keys()
        .map(|t| (t, docs.iter().filter(|o| o.tf(t) > 0).count() as f64))
        .collect();
    let scored = docs
        .iter()
        .filter(|d| matches(d, query))
        .map(|d| {
            let dl = d.tokens.len() as f64;
            let mut s = 0.0;
            for (term, w) in query {
                let tf = d.tf(term) as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df[term] + 0.5) / (df[term] + 0.5)).ln();
                s += w * idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avdl));
            }
            (d.id.clone(), s)
        })
        .collect();
    sort_ranking(scored, depth)
}

pub fn brute_ql(docs: &[PlainDoc], query: &BTreeMap<String, f64>, mu: f64, depth: usize) -> Vec<(String, f64)> {
    let total: usize = docs.iter().map(|d| d.tokens.len()).sum();
    let cf: BTreeMap<&String, usize> = query
        .keys()
        .map(|t| (t, docs.iter().map(|o| o.tf(t)).sum()))
        .collect();
    let scored = docs
        .iter()
        .filter(|d| matches(d, query))
        .map(|d| {
            let dl = d.tokens.len() as f64;
            let mut s = 0.0;
            for (term, w) in query {
                if cf[term] == 0 {
                    continue;
                }
                let p = (d.tf(term) as f64 + mu * cf[term] as f64 / total as f64) / (dl + mu);
                s += w * p.ln();
            }
            (d.id.clone(), s)
        })
        .collect();
    sort_ranking(scored, depth)
}

/// Relevance-model expansion recomputed from scratch. `stopwords` are never
/// chosen as expansion terms.
pub fn brute_rm3_weights(
    docs: &[PlainDoc],
    original: &BTreeMap<String, f64>,
    initial: &[(String, f64)],
    fb_docs: usize,
    fb_terms: usize,
    orig_weight: f64,
    stopwords: &HashSet<&str>,
) -> BTreeMap<String, f64> {
    let osum: f64 = original.values().sum();
    let orig: BTreeMap<String, f64> = original.iter().map(|(t, w)| (t.clone(), w / osum)).collect();
    if initial.is_empty() || orig_weight == 1.0 {
        return orig;
    }
    let fb = &initial[..initial.len().min(fb_docs)];
    let z: f64 = fb.iter().map(|(_, s)| s.exp()).sum();
    let mut p: BTreeMap<String, f64> = BTreeMap::new();
    for (id, s) in fb {
        let d = docs.iter().find(|d| &d.id == id).unwrap();
        if d.tokens.is_empty() {
            continue;
        }
        let u = s.exp() / z;
        for t in &d.tokens {
            *p.entry(t.clone()).or_default() += u / d.tokens.len() as f64;
        }
    }
    let mut terms: Vec<(String, f64)> = p
        .into_iter()
        .filter(|(t, v)| *v > 0.0 && !stopwords.contains(t.as_str()))
        .collect();
    terms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    terms.truncate(fb_terms);
    let fsum: f64 = terms.iter().map(|(_, v)| v).sum();
    if terms.is_empty() {
        return orig;
    }
    let mut out: BTreeMap<String, f64> = orig.into_iter().map(|(t, w)| (t, orig_weight * w)).collect();
    for (t, v) in terms {
        *out.entry(t).or_default() += (1.0 - orig_weight) * v / fsum;
    }
    out.retain(|_, w| *w > 0.0);
    out
}

/// AP by re-deriving precision at every cutoff.
pub fn brute_ap(ranked: &[String], relevant: &HashSet<String>, depth: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let ranked = &ranked[..ranked.len().min(depth)];
    let mut total = 0.0;
    for cut in 1..=ranked.len() {
        if relevant.contains(&ranked[cut - 1]) {
            let prefix = &ranked[..cut];
            let hits = prefix.iter().filter(|d| relevant.contains(*d)).count();
            total += hits as f64 / cut as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn brute_precision(ranked: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    let mut hits = 0;
    for (i, d) in ranked.iter().enumerate() {
        if i < k && relevant.contains(d) {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

/// Final score of the aggregation formula, written out term by term.
pub fn brute_final(a: f64, w: &[f64], norm_base: f64, sentence_scores: &[f64]) -> f64 {
    let mut sorted = sentence_scores.to_vec();
    sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let mut s = 0.0;
    for i in 0..w.len() {
        if i < sorted.len() {
            s += w[i] * sorted[i];
        }
    }
    a * norm_base + (1.0 - a) * s
}

/// Every parameter vector of the tuning grid, enumerated with nested loops.
pub fn brute_grid(n: usize) -> Vec<(f64, Vec<f64>)> {
    let steps: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut out = Vec::new();
    for &a in &steps {
        match n {
            1 => out.push((a, vec![1.0])),
            2 => {
                for &w2 in &steps {
                    out.push((a, vec![1.0, w2]));
                }
            }
            3 => {
                for &w2 in &steps {
                    for &w3 in &steps {
                        out.push((a, vec![1.0, w2, w3]));
                    }
                }
            }
            _ => panic!("unsupported n"),
        }
    }
    out
}

const WORDS: &[&str] = &[
    "river", "Bank", "flood", "U.S.", "e.g.", "3.5", "Dr.", "water", "levels", "rose", "again", "quickly",
    "\"Quoted", "'tick", "\u{201C}curly", "naïve", "café", "Ünter", "x<y", "a>b", "-", "...", "ok?", "no!",
    "End.", "42", "The", "a", "of", "storm", "Mr.", "St.", "\u{2018}single",
];
const TAGS: &[&str] = &["<p>", "</p>", "<b>", "</b>", "<HEADLINE>", "</HEADLINE>", "<br/>", "<x<y>z>"];
const SPACES: &[&str] = &[" ", " ", " ", "  ", "\n", "\t", " \n "];
const ENDS: &[&str] = &[".", "?", "!", "", ".\"", "!'"];

/// Marked-up text with sentence punctuation, abbreviations, quotes, stray
/// angle brackets, non-ASCII letters and irregular whitespace.
pub fn random_markup_text(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for _ in 0..rng.gen_range(0..12) {
        if rng.gen_bool(0.2) {
            out.push_str(TAGS.choose(rng).unwrap());
        }
        let len = if rng.gen_bool(0.1) { rng.gen_range(50..400) } else { rng.gen_range(1..15) };
        for i in 0..len {
            if i > 0 {
                out.push_str(SPACES.choose(rng).unwrap());
            }
            out.push_str(WORDS.choose(rng).unwrap());
        }
        out.push_str(ENDS.choose(rng).unwrap());
        out.push_str(SPACES.choose(rng).unwrap());
    }
    out
}

/// Checks round-trip coverage, chunk safety, token conservation and
/// determinism for one raw document.
pub fn check_segmentation(raw_text: &str, chunk_limit: usize) -> Result<(), String> {
    use sentrank::corpus::{chunk, clean_text, prepare, segment, RawDocument, Segmentation};

    let cleaned = clean_text(raw_text);
    let sentences = segment(&cleaned);
    let joined = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
    let joined = joined.split_whitespace().collect::<Vec<_>>().join(" ");
    if joined != cleaned {
        return Err(format!("round trip lost text:\n  clean:  {cleaned:?}\n  joined: {joined:?}"));
    }
    for s in &sentences {
        let parts = chunk(s, chunk_limit).map_err(|e| e.to_string())?;
        if let Some(p) = parts.iter().find(|p| p.token_count > chunk_limit) {
            return Err(format!("chunk of {} tokens exceeds {chunk_limit}", p.token_count));
        }
        let original: Vec<&str> = s.text.split_whitespace().collect();
        let rebuilt: Vec<&str> = parts.iter().flat_map(|p| p.text.split_whitespace()).collect();
        if original != rebuilt {
            return Err(format!("chunking changed tokens of {:?}", s.text));
        }
    }
    let raw = RawDocument {
        doc_id: "D".into(),
        raw_text: raw_text.to_string(),
    };
    let first = prepare(&raw, chunk_limit, Segmentation::Sentences).map_err(|e| e.to_string())?;
    let second = prepare(&raw, chunk_limit, Segmentation::Sentences).map_err(|e| e.to_string())?;
    if first != second {
        return Err("prepare is not deterministic".into());
    }
    for (i, s) in first.sentences.iter().enumerate() {
        if s.index != i || s.doc_id != "D" || s.token_count > chunk_limit {
            return Err(format!("bad unit {s:?}"));
        }
    }
    Ok(())
}

pub fn build_index(docs: &[PlainDoc]) -> sentrank::Index {
    let clean: Vec<sentrank::CleanDocument> = docs
        .iter()
        .map(|d| sentrank::CleanDocument {
            doc_id: d.id.clone(),
            text: d.text(),
            sentences: Vec::new(),
        })
        .collect();
    sentrank::Index::build(&clean, sentrank::Analyzer::default()).unwrap()
}

pub fn compare_rankings(got: &[sentrank::ScoredDoc], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} results, oracle has {}", got.len(), want.len()));
    }
    for (i, (g, (id, s))) in got.iter().zip(want).enumerate() {
        if &g.doc_id != id {
            return Err(format!("rank {i}: {} but oracle has {id}", g.doc_id));
        }
        if (g.score - s).abs() > tol {
            return Err(format!("rank {i} ({id}): score {} vs oracle {s}", g.score));
        }
    }
    Ok(())
}

/// Indexed BM25 and QL against the brute-force scorers on `corpora` random
/// corpora (≤ 200 docs, vocabulary ≤ 50, ≤ 25 queries each).
pub fn check_search_oracle(seed: u64, corpora: usize) -> Result<(), String> {
    use rand::SeedableRng;
    use sentrank::{RetrievalModel, SearchParams, WeightedQuery};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..corpora {
        let vocab = vocabulary(rng.gen_range(5..=50));
        let n = rng.gen_range(1..=200);
        let docs = random_corpus(&mut rng, n, &vocab, 40);
        if docs.iter().all(|d| d.tokens.is_empty()) {
            continue;
        }
        let index = build_index(&docs);
        let params = SearchParams {
            k1: rng.gen_range(0.1..2.0),
            b: rng.gen_range(0.0..=1.0),
            mu: rng.gen_range(10.0..2000.0),
            depth: rng.gen_range(1..=n + 5),
            ..SearchParams::default()
        };
        for qi in 0..rng.gen_range(1..=25) {
            let q = random_query(&mut rng, &vocab);
            let wq = WeightedQuery::new(q.clone()).map_err(|e| e.to_string())?;
            let bm25 = index.search(RetrievalModel::Bm25, &wq, &params).map_err(|e| e.to_string())?;
            compare_rankings(&bm25, &brute_bm25(&docs, &q, params.k1, params.b, params.depth), 1e-6)
                .map_err(|e| format!("corpus {c} query {qi} bm25: {e}"))?;
            let ql = index.search(RetrievalModel::Ql, &wq, &params).map_err(|e| e.to_string())?;
            compare_rankings(&ql, &brute_ql(&docs, &q, params.mu, params.depth), 1e-6)
                .map_err(|e| format!("corpus {c} query {qi} ql: {e}"))?;
        }
    }
    Ok(())
}

/// Random run/qrels fixtures (≤ 20 topics, ≤ 1000 docs) evaluated by
/// `evaluate_run` and by the brute-force metrics.
pub fn check_metric_oracle(seed: u64, fixtures: usize) -> Result<(), String> {
    use rand::SeedableRng;
    use sentrank::evaluate::evaluate_run;
    use sentrank::{Qrels, Run, ScoredDoc};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for f in 0..fixtures {
        let pool: Vec<String> = (0..rng.gen_range(1..=1000)).map(|i| format!("doc{i}")).collect();
        let depth = rng.gen_range(1..=1000);
        let ks = [1, 5, 10, 20, 30, rng.gen_range(1..100)];
        let mut run = Run::default();
        let mut qrels = Qrels::default();
        let mut truth: BTreeMap<String, (Vec<String>, HashSet<String>)> = BTreeMap::new();
        for t in 0..rng.gen_range(1..=20) {
            let topic = format!("{}", 100 + t);
            let mut docs = pool.clone();
            docs.shuffle(&mut rng);
            let retrieved: Vec<String> = docs[..rng.gen_range(0..=docs.len())].to_vec();
            let mut relevant = HashSet::new();
            for d in &pool {
                if rng.gen_bool(0.05) {
                    let grade = rng.gen_range(1..=3);
                    qrels.insert(&topic, d, grade);
                    relevant.insert(d.clone());
                } else if rng.gen_bool(0.05) {
                    qrels.insert(&topic, d, 0);
                }
            }
            if relevant.is_empty() {
                let d = pool.choose(&mut rng).unwrap();
                qrels.insert(&topic, d, 1);
                relevant.insert(d.clone());
            }
            let ranking: Vec<ScoredDoc> = retrieved
                .iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc::new(d.clone(), -(i as f64)))
                .collect();
            run.set_ranking(&topic, &ranking, "t");
            truth.insert(topic, (retrieved, relevant));
        }
        let report = evaluate_run(&run, &qrels, &ks, depth).map_err(|e| e.to_string())?;
        let mut mean_ap = 0.0;
        for (topic, (ranked, relevant)) in &truth {
            let got = &report.per_topic[topic];
            let ap = brute_ap(ranked, relevant, depth);
            mean_ap += ap;
            if (got.ap - ap).abs() > 1e-12 {
                return Err(format!("fixture {f} topic {topic}: AP {} vs oracle {ap}", got.ap));
            }
            for k in ks {
                let p = brute_precision(ranked, relevant, k);
                if (got.p_at_k[&k] - p).abs() > 1e-12 {
                    return Err(format!("fixture {f} topic {topic}: P@{k} {} vs oracle {p}", got.p_at_k[&k]));
                }
            }
        }
        mean_ap /= truth.len() as f64;
        if (report.mean_ap - mean_ap).abs() > 1e-12 {
            return Err(format!("fixture {f}: mean AP {} vs oracle {mean_ap}", report.mean_ap));
        }
    }
    Ok(())
}

/// Antisymmetry, location invariance, p range and the degenerate case on
/// random paired samples.
pub fn check_ttest_properties(seed: u64, samples: usize) -> Result<(), String> {
    use rand::SeedableRng;
    use sentrank::evaluate::paired_t_test;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..samples {
        let n = rng.gen_range(2..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let xy = paired_t_test(&x, &y).map_err(|e| e.to_string())?;
        let yx = paired_t_test(&y, &x).map_err(|e| e.to_string())?;
        if xy.t != -yx.t || xy.p != yx.p {
            return Err(format!("sample {s}: t {} / {}, p {} / {}", xy.t, yx.t, xy.p, yx.p));
        }
        if !(0.0..=1.0).contains(&xy.p) || xy.degenerate {
            return Err(format!("sample {s}: p = {} degenerate = {}", xy.p, xy.degenerate));
        }
        let c = rng.gen_range(-5.0..5.0);
        let xs: Vec<f64> = x.iter().map(|v| v + c).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        let shifted = paired_t_test(&xs, &ys).map_err(|e| e.to_string())?;
        if (shifted.t - xy.t).abs() > 1e-6 * xy.t.abs().max(1.0) {
            return Err(format!("sample {s}: shift by {c} moved t from {} to {}", xy.t, shifted.t));
        }
        let same = paired_t_test(&x, &x).map_err(|e| e.to_string())?;
        if !(same.degenerate && same.t == 0.0 && same.p == 1.0) {
            return Err(format!("sample {s}: x vs x gave {same:?}"));
        }
    }
    Ok(())
}

/// Training-fold winner per held-out fold by enumerating the grid and
/// reranking every topic from scratch. Ties prefer larger `a`, then smaller
/// `(w_2, ..)`.
pub fn brute_tune(
    folds: &[Vec<String>],
    n: usize,
    features: &BTreeMap<String, sentrank::rerank::TopicFeatures>,
    relevant: &BTreeMap<String, HashSet<String>>,
    depth: usize,
) -> Vec<((f64, Vec<f64>), f64)> {
    let mut winners = Vec::new();
    for held in 0..folds.len() {
        let mut training: Vec<&String> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .flat_map(|(_, f)| f)
            .collect();
        training.sort();
        let mut best: Option<((f64, Vec<f64>), f64)> = None;
        for (a, w) in brute_grid(n) {
            let mut total = 0.0;
            let mut counted = 0;
            for topic in &training {
                let rel = &relevant[*topic];
                if rel.is_empty() {
                    continue;
                }
                let mut scored: Vec<(String, f64)> = features[*topic]
                    .docs
                    .iter()
                    .map(|d| (d.doc_id.clone(), brute_final(a, &w, d.norm_base, &d.sentence_scores)))
                    .collect();
                scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
                let ranked: Vec<String> = scored.into_iter().map(|(d, _)| d).collect();
                total += brute_ap(&ranked, rel, depth);
                counted += 1;
            }
            let ap = total / counted as f64;
            let better = match &best {
                None => true,
                Some(((ba, bw), bap)) => {
                    ap > *bap
                        || (ap == *bap && a > *ba)
                        || (ap == *bap && a == *ba && w.iter().zip(bw).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y))
                }
            };
            if better {
                best = Some(((a, w), ap));
            }
        }
        winners.push(best.unwrap());
    }
    winners
}
