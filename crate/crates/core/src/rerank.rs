//! Sentence-level reranking.
//!
//! Each candidate's final score interpolates its min-max normalized
//! retrieval score with a weighted sum of its best sentence scores:
//!
//! ```text
//! final = a * norm_base + (1 - a) * sum_{i=1..n} w_i * s_i
//! ```
//!
//! where `s_1 >= s_2 >= ...` are the document's sentence scores. Documents
//! with fewer than `n` sentences contribute zero for the missing terms.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CleanDocument, Topic};
use crate::index::ScoredDoc;
use crate::scorer::{ScorerError, SentenceScorer};

pub const MAX_SENTENCES: usize = 4;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("no text for candidate document `{0}`")]
    MissingDocument(String),
    #[error("sentence score cache has no entry for topic {topic}, document {doc_id}, sentence {sentence}")]
    CacheMiss {
        topic: String,
        doc_id: String,
        sentence: usize,
    },
    #[error("cache line {line}: {message}")]
    CacheParse { line: usize, message: String },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The interpolation weight `a` and sentence weights `w_1..w_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct AggregationParams {
    n: usize,
    a: f64,
    w: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    n: Option<usize>,
    a: f64,
    w: Vec<f64>,
}

impl TryFrom<RawParams> for AggregationParams {
    type Error = RerankError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        if raw.n.is_some_and(|n| n != raw.w.len()) {
            return Err(RerankError::Argument(format!(
                "n = {} but {} weights given",
                raw.n.unwrap_or(0),
                raw.w.len()
            )));
        }
        AggregationParams::new(raw.a, raw.w)
    }
}

impl AggregationParams {
    /// `w` holds `w_1..w_n`; `w_1` must be 1 and `n` at most 4.
    pub fn new(a: f64, w: Vec<f64>) -> Result<Self, RerankError> {
        let n = w.len();
        if !(1..=MAX_SENTENCES).contains(&n) {
            return Err(RerankError::Argument(format!("n must be in 1..=4, got {n}")));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(RerankError::Argument(format!("a must be in [0, 1], got {a}")));
        }
        if w[0] != 1.0 {
            return Err(RerankError::Argument(format!("w_1 is fixed at 1, got {}", w[0])));
        }
        if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RerankError::Argument(format!("weights must be in [0, 1], got {bad}")));
        }
        Ok(AggregationParams { n, a, w })
    }

    /// Best sentence only.
    pub fn top1(a: f64) -> Result<Self, RerankError> {
        AggregationParams::new(a, vec![1.0])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// `(a, w_2, .., w_n)`
    pub fn sort_key(&self) -> Vec<f64> {
        std::iter::once(self.a).chain(self.w[1..].iter().copied()).collect()
    }
}

/// `final = a * norm_base + (1 - a) * sum_i w_i * tops_i` over the first
/// `min(n, tops.len())` sentence scores.
pub fn aggregate(params: &AggregationParams, norm_base: f64, tops: &[f64]) -> f64 {
    debug_assert!(tops.windows(2).all(|p| p[0] >= p[1]), "tops must be sorted descending");
    let sentences: f64 = params
        .w
        .iter()
        .zip(tops)
        .map(|(w, s)| w * s)
        .sum();
    params.a * norm_base + (1.0 - params.a) * sentences
}

/// Per-topic min-max normalization; a constant list maps to all ones.
pub fn minmax_normalize(scores: &[ScoredDoc]) -> Result<BTreeMap<String, f64>, RerankError> {
    if scores.is_empty() {
        return Err(RerankError::Argument("cannot normalize an empty list".into()));
    }
    let (min, max) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
        (lo.min(d.score), hi.max(d.score))
    });
    let range = max - min;
    Ok(scores
        .iter()
        .map(|d| {
            let v = if range > 0.0 { (d.score - min) / range } else { 1.0 };
            (d.doc_id.clone(), v)
        })
        .collect())
}

fn sort_descending(scores: &mut [f64]) {
    scores.sort_by(|a, b| b.total_cmp(a));
}

fn check_range(scores: &[f64]) -> Result<(), RerankError> {
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ScorerError::Protocol {
            reason: "score outside [0, 1]".into(),
            payload: bad.to_string(),
        }
        .into());
    }
    Ok(())
}

/// Scores every sentence of `doc` against the topic title, best first.
pub fn score_sentences(
    topic: &Topic,
    doc: &CleanDocument,
    scorer: &mut dyn SentenceScorer,
) -> Result<Vec<f64>, RerankError> {
    let pairs: Vec<(&str, &str)> = doc
        .sentences
        .iter()
        .map(|s| (topic.title.as_str(), s.text.as_str()))
        .collect();
    let mut scores = scorer.score_batch(&pairs)?;
    check_range(&scores)?;
    sort_descending(&mut scores);
    Ok(scores)
}

/// Rounds to the 6 decimals the cache file stores, so scores read back from
/// disk equal the ones used when they were first computed.
pub fn quantize(score: f64) -> f64 {
    format!("{score:.6}").parse().expect("formatted float parses")
}

/// Sentence scores keyed by (topic, document, sentence index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentenceCache {
    scores: BTreeMap<(String, String, usize), f64>,
}

impl SentenceCache {
    pub fn new() -> Self {
        SentenceCache::default()
    }

    pub fn get(&self, topic: &str, doc_id: &str, sentence: usize) -> Option<f64> {
        self.scores
            .get(&(topic.to_string(), doc_id.to_string(), sentence))
            .copied()
    }

    /// Stores the score rounded to 6 decimals.
    pub fn insert(&mut self, topic: &str, doc_id: &str, sentence: usize, score: f64) {
        self.scores
            .insert((topic.to_string(), doc_id.to_string(), sentence), quantize(score));
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn merge(&mut self, other: SentenceCache) {
        self.scores.extend(other.scores);
    }

    /// Reads `topic_id doc_id sentence_index score` lines.
    pub fn parse<R: BufRead>(input: R) -> Result<Self, RerankError> {
        let mut cache = SentenceCache::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let err = |message: String| RerankError::CacheParse { line: i + 1, message };
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let idx: usize = f[2]
                .parse()
                .map_err(|_| err(format!("bad sentence index `{}`", f[2])))?;
            let score: f64 = f[3]
                .parse()
                .ok()
                .filter(|s| (0.0..=1.0).contains(s))
                .ok_or_else(|| err(format!("bad score `{}`", f[3])))?;
            cache.insert(f[0], f[1], idx, score);
        }
        Ok(cache)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((topic, doc, idx), score) in &self.scores {
            let _ = writeln!(out, "{topic} {doc} {idx} {score:.6}");
        }
        out
    }
}

/// Prepared documents by id.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    docs: HashMap<String, CleanDocument>,
}

impl DocStore {
    pub fn new(docs: impl IntoIterator<Item = CleanDocument>) -> Self {
        DocStore {
            docs: docs.into_iter().map(|d| (d.doc_id.clone(), d)).collect(),
        }
    }

    pub fn get(&self, doc_id: &str) -> Option<&CleanDocument> {
        self.docs.get(doc_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// What aggregation needs to know about one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DocFeatures {
    pub doc_id: String,
    pub base_score: f64,
    pub norm_base: f64,
    /// All sentence scores, best first.
    pub sentence_scores: Vec<f64>,
}

/// Candidates of one topic in their original retrieval order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicFeatures {
    pub topic_id: String,
    pub docs: Vec<DocFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RerankedDoc {
    pub doc_id: String,
    pub base_score: f64,
    pub norm_base: f64,
    pub sentence_scores: Vec<f64>,
    pub final_score: f64,
}

fn build_features(
    topic_id: &str,
    candidates: &[ScoredDoc],
    docs: &DocStore,
    cache: &SentenceCache,
) -> Result<TopicFeatures, RerankError> {
    if candidates.is_empty() {
        return Ok(TopicFeatures {
            topic_id: topic_id.to_string(),
            docs: Vec::new(),
        });
    }
    let norm = minmax_normalize(candidates)?;
    let mut out = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let doc = docs
            .get(&cand.doc_id)
            .ok_or_else(|| RerankError::MissingDocument(cand.doc_id.clone()))?;
        let mut scores = doc
            .sentences
            .iter()
            .map(|s| {
                cache
                    .get(topic_id, &cand.doc_id, s.index)
                    .ok_or_else(|| RerankError::CacheMiss {
                        topic: topic_id.to_string(),
                        doc_id: cand.doc_id.clone(),
                        sentence: s.index,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        sort_descending(&mut scores);
        out.push(DocFeatures {
            doc_id: cand.doc_id.clone(),
            base_score: cand.score,
            norm_base: norm[&cand.doc_id],
            sentence_scores: scores,
        });
    }
    Ok(TopicFeatures {
        topic_id: topic_id.to_string(),
        docs: out,
    })
}

/// Features from cached scores only; a missing sentence score is an error.
pub fn features_from_cache(
    topic_id: &str,
    candidates: &[ScoredDoc],
    docs: &DocStore,
    cache: &SentenceCache,
) -> Result<TopicFeatures, RerankError> {
    build_features(topic_id, candidates, docs, cache)
}

/// Scores every candidate sentence missing from `cache` (one batch per
/// topic), records the scores, and returns the topic's features.
pub fn collect_features(
    topic: &Topic,
    candidates: &[ScoredDoc],
    docs: &DocStore,
    scorer: &mut dyn SentenceScorer,
    cache: &mut SentenceCache,
) -> Result<TopicFeatures, RerankError> {
    let mut missing = Vec::new();
    for cand in candidates {
        let doc = docs
            .get(&cand.doc_id)
            .ok_or_else(|| RerankError::MissingDocument(cand.doc_id.clone()))?;
        for s in &doc.sentences {
            if cache.get(&topic.topic_id, &doc.doc_id, s.index).is_none() {
                missing.push(s);
            }
        }
    }
    if !missing.is_empty() {
        let pairs: Vec<(&str, &str)> = missing
            .iter()
            .map(|s| (topic.title.as_str(), s.text.as_str()))
            .collect();
        let scores = scorer.score_batch(&pairs)?;
        if scores.len() != missing.len() {
            return Err(RerankError::Argument(format!(
                "scorer returned {} scores for {} sentences",
                scores.len(),
                missing.len()
            )));
        }
        check_range(&scores)?;
        for (s, score) in missing.iter().zip(scores) {
            cache.insert(&topic.topic_id, &s.doc_id, s.index, score);
        }
    }
    build_features(&topic.topic_id, candidates, docs, cache)
}

/// Aggregates and sorts by final score (descending, doc id ascending).
pub fn rank_features(features: &TopicFeatures, params: &AggregationParams) -> Vec<RerankedDoc> {
    let mut out: Vec<RerankedDoc> = features
        .docs
        .iter()
        .map(|d| RerankedDoc {
            doc_id: d.doc_id.clone(),
            base_score: d.base_score,
            norm_base: d.norm_base,
            sentence_scores: d.sentence_scores.clone(),
            final_score: aggregate(params, d.norm_base, &d.sentence_scores),
        })
        .collect();
    out.sort_by(|x, y| {
        y.final_score
            .total_cmp(&x.final_score)
            .then_with(|| x.doc_id.cmp(&y.doc_id))
    });
    out
}

/// Reranks one topic's candidates. Sentences already in `cache` are not
/// rescored.
pub fn rerank_topic(
    topic: &Topic,
    candidates: &[ScoredDoc],
    docs: &DocStore,
    scorer: &mut dyn SentenceScorer,
    params: &AggregationParams,
    cache: &mut SentenceCache,
) -> Result<Vec<RerankedDoc>, RerankError> {
    let features = collect_features(topic, candidates, docs, scorer, cache)?;
    Ok(rank_features(&features, params))
}
