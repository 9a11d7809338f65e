//! Immutable inverted index with BM25, Dirichlet query likelihood and RM3
//! feedback retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CleanDocument, Topic};

/// Format tag written into every persisted index.
pub const INDEX_FORMAT: &str = "sentrank-index/1";

/// Term text, term id and query weight.
type QueryTerm<'q> = (&'q str, u32, f64);

/// The 33-word English stopword list.
pub const ENGLISH_STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("empty collection")]
    EmptyCollection,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("invalid search parameter: {0}")]
    InvalidParams(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unsupported index format `{0}`")]
    Format(String),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercasing, alphanumeric-run tokenizer with an optional stopword list.
///
/// There is no stemming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    stopwords: BTreeSet<String>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer::with_stopwords(ENGLISH_STOPWORDS)
    }
}

impl Analyzer {
    pub fn without_stopwords() -> Self {
        Analyzer {
            stopwords: BTreeSet::new(),
        }
    }

    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Analyzer {
            stopwords: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.contains(term)
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !self.is_stopword(t))
            .collect()
    }
}

/// Tokenizes with the default analyzer.
pub fn tokenize(text: &str) -> Vec<String> {
    Analyzer::default().tokenize(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    pub k1: f64,
    pub b: f64,
    pub mu: f64,
    pub depth: usize,
    pub fb_docs: usize,
    pub fb_terms: usize,
    pub orig_weight: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            k1: 0.9,
            b: 0.4,
            mu: 1000.0,
            depth: 1000,
            fb_docs: 10,
            fb_terms: 10,
            orig_weight: 0.5,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        let bad = |what: &str| Err(IndexError::InvalidParams(what.to_string()));
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return bad("k1 must be > 0");
        }
        if !(0.0..=1.0).contains(&self.b) {
            return bad("b must be in [0, 1]");
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad("mu must be > 0");
        }
        if self.depth < 1 {
            return bad("depth must be >= 1");
        }
        if self.fb_docs < 1 || self.fb_terms < 1 {
            return bad("fb_docs and fb_terms must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.orig_weight) {
            return bad("orig_weight must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalModel {
    Bm25,
    Ql,
}

/// A query as a term distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuery {
    weights: BTreeMap<String, f64>,
}

impl WeightedQuery {
    /// Builds a query from explicit weights. Zero weights are dropped; at
    /// least one weight must be positive.
    pub fn new<I, S>(weights: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (term, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(IndexError::InvalidQuery(format!("weight {w} is not a finite nonnegative number")));
            }
            if w > 0.0 {
                *map.entry(term.into()).or_insert(0.0) += w;
            }
        }
        if map.is_empty() {
            return Err(IndexError::InvalidQuery("no positive weights".into()));
        }
        Ok(WeightedQuery { weights: map })
    }

    /// Term counts of the analyzed text, normalized to sum to one. `None`
    /// when the text has no terms.
    pub fn from_text(analyzer: &Analyzer, text: &str) -> Option<Self> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for term in analyzer.tokenize(text) {
            *counts.entry(term).or_insert(0.0) += 1.0;
        }
        WeightedQuery::new(counts).ok().map(|q| q.normalized())
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }

    pub fn normalized(&self) -> Self {
        let total: f64 = self.weights.values().sum();
        WeightedQuery {
            weights: self
                .weights
                .iter()
                .map(|(t, w)| (t.clone(), w / total))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        ScoredDoc {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Score descending, doc id ascending.
pub fn ranking_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`
pub fn bm25_idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Inverted index plus per-document term vectors.
///
/// Internal document numbers follow doc id order, so ascending postings are
/// also ascending by doc id.
#[derive(Debug, Clone)]
pub struct Index {
    analyzer: Analyzer,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    collection_frequency: Vec<u64>,
    doc_terms: Vec<Vec<(u32, u32)>>,
    total_tokens: u64,
}

#[derive(Serialize, Deserialize)]
struct StoredIndex {
    format: String,
    analyzer: Analyzer,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    terms: Vec<String>,
    postings: Vec<Vec<Posting>>,
}

impl Index {
    pub fn build(docs: &[CleanDocument], analyzer: Analyzer) -> Result<Self, IndexError> {
        if docs.is_empty() {
            return Err(IndexError::EmptyCollection);
        }
        let mut order: Vec<&CleanDocument> = docs.iter().collect();
        order.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        if let Some(w) = order.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
            return Err(IndexError::DuplicateDocId(w[0].doc_id.clone()));
        }

        let mut by_term: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(order.len());
        for (docnum, doc) in order.iter().enumerate() {
            let tokens = analyzer.tokenize(&doc.text);
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                by_term.entry(term).or_default().push(Posting {
                    doc: docnum as u32,
                    tf,
                });
            }
        }
        let (terms, postings) = by_term.into_iter().unzip();
        Index::assemble(
            analyzer,
            order.iter().map(|d| d.doc_id.clone()).collect(),
            doc_lengths,
            terms,
            postings,
        )
    }

    fn assemble(
        analyzer: Analyzer,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
    ) -> Result<Self, IndexError> {
        let n = doc_ids.len();
        if n == 0 {
            return Err(IndexError::EmptyCollection);
        }
        if doc_lengths.len() != n || terms.len() != postings.len() {
            return Err(IndexError::Corrupt("mismatched table sizes".into()));
        }
        let mut term_ids = HashMap::with_capacity(terms.len());
        let mut collection_frequency = Vec::with_capacity(terms.len());
        let mut doc_terms: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        let mut seen_len = vec![0u64; n];
        for (tid, (term, plist)) in terms.iter().zip(&postings).enumerate() {
            if term_ids.insert(term.clone(), tid as u32).is_some() {
                return Err(IndexError::Corrupt(format!("duplicate term `{term}`")));
            }
            let mut cf = 0u64;
            let mut prev: Option<u32> = None;
            for p in plist {
                if (p.doc as usize) >= n || prev.is_some_and(|d| d >= p.doc) || p.tf == 0 {
                    return Err(IndexError::Corrupt(format!("bad postings for `{term}`")));
                }
                prev = Some(p.doc);
                cf += u64::from(p.tf);
                seen_len[p.doc as usize] += u64::from(p.tf);
                doc_terms[p.doc as usize].push((tid as u32, p.tf));
            }
            collection_frequency.push(cf);
        }
        if seen_len
            .iter()
            .zip(&doc_lengths)
            .any(|(&s, &l)| s != u64::from(l))
        {
            return Err(IndexError::Corrupt("document lengths disagree with postings".into()));
        }
        if doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IndexError::Corrupt("document ids not strictly ascending".into()));
        }
        let total_tokens = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        Ok(Index {
            analyzer,
            doc_ids,
            doc_lengths,
            terms,
            term_ids,
            postings,
            collection_frequency,
            doc_terms,
            total_tokens,
        })
    }

    pub fn to_json(&self) -> Result<String, IndexError> {
        let stored = StoredIndex {
            format: INDEX_FORMAT.to_string(),
            analyzer: self.analyzer.clone(),
            doc_ids: self.doc_ids.clone(),
            doc_lengths: self.doc_lengths.clone(),
            terms: self.terms.clone(),
            postings: self.postings.clone(),
        };
        Ok(serde_json::to_string(&stored)?)
    }

    pub fn from_json(text: &str) -> Result<Self, IndexError> {
        let stored: StoredIndex = serde_json::from_str(text)?;
        if stored.format != INDEX_FORMAT {
            return Err(IndexError::Format(stored.format));
        }
        Index::assemble(
            stored.analyzer,
            stored.doc_ids,
            stored.doc_lengths,
            stored.terms,
            stored.postings,
        )
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Index::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn total_collection_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.total_tokens as f64 / self.doc_count() as f64
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.docnum(doc_id).map(|d| self.doc_lengths[d])
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.term_ids
            .get(term)
            .map_or(0, |&t| self.postings[t as usize].len())
    }

    pub fn collection_frequency(&self, term: &str) -> u64 {
        self.term_ids
            .get(term)
            .map_or(0, |&t| self.collection_frequency[t as usize])
    }

    /// Postings of a term as `(doc_id, tf)` in ascending doc id order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.term_ids.get(term).map_or_else(Vec::new, |&t| {
            self.postings[t as usize]
                .iter()
                .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                .collect()
        })
    }

    pub fn idf(&self, term: &str) -> f64 {
        bm25_idf(self.doc_count(), self.document_frequency(term))
    }

    fn docnum(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(doc_id))
            .ok()
    }

    /// Indexed query terms with their weights and, per candidate document,
    /// the term frequency of each of those terms.
    fn candidates<'q>(&self, query: &'q WeightedQuery) -> (Vec<QueryTerm<'q>>, BTreeMap<u32, Vec<u32>>) {
        let qterms: Vec<QueryTerm> = query
            .weights()
            .iter()
            .filter_map(|(t, &w)| self.term_ids.get(t).map(|&id| (t.as_str(), id, w)))
            .collect();
        let mut tfs: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (i, &(_, tid, _)) in qterms.iter().enumerate() {
            for p in &self.postings[tid as usize] {
                tfs.entry(p.doc).or_insert_with(|| vec![0; qterms.len()])[i] = p.tf;
            }
        }
        (qterms, tfs)
    }

    fn finish(&self, scored: Vec<(u32, f64)>, depth: usize) -> Vec<ScoredDoc> {
        let mut scored = scored;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(depth);
        scored
            .into_iter()
            .map(|(d, s)| ScoredDoc::new(self.doc_ids[d as usize].clone(), s))
            .collect()
    }

    pub fn bm25_search(
        &self,
        query: &WeightedQuery,
        params: &SearchParams,
    ) -> Result<Vec<ScoredDoc>, IndexError> {
        params.validate()?;
        let (qterms, tfs) = self.candidates(query);
        let avdl = self.avg_doc_length();
        let idfs: Vec<f64> = qterms
            .iter()
            .map(|&(_, tid, _)| bm25_idf(self.doc_count(), self.postings[tid as usize].len()))
            .collect();
        let scored = tfs
            .into_iter()
            .map(|(doc, doc_tfs)| {
                let dl = f64::from(self.doc_lengths[doc as usize]);
                let norm = params.k1 * (1.0 - params.b + params.b * dl / avdl);
                let score = qterms
                    .iter()
                    .zip(&idfs)
                    .zip(&doc_tfs)
                    .filter(|(_, &tf)| tf > 0)
                    .map(|((&(_, _, w), &idf), &tf)| {
                        let tf = f64::from(tf);
                        w * idf * tf * (params.k1 + 1.0) / (tf + norm)
                    })
                    .sum();
                (doc, score)
            })
            .collect();
        Ok(self.finish(scored, params.depth))
    }

    /// Dirichlet-smoothed query likelihood. Query terms absent from the
    /// collection have no collection probability and are skipped.
    pub fn ql_search(
        &self,
        query: &WeightedQuery,
        params: &SearchParams,
    ) -> Result<Vec<ScoredDoc>, IndexError> {
        params.validate()?;
        let (qterms, tfs) = self.candidates(query);
        let total = self.total_tokens as f64;
        let background: Vec<f64> = qterms
            .iter()
            .map(|&(_, tid, _)| params.mu * self.collection_frequency[tid as usize] as f64 / total)
            .collect();
        let scored = tfs
            .into_iter()
            .map(|(doc, doc_tfs)| {
                let dl = f64::from(self.doc_lengths[doc as usize]);
                let score = qterms
                    .iter()
                    .zip(&background)
                    .zip(&doc_tfs)
                    .map(|((&(_, _, w), &bg), &tf)| w * ((f64::from(tf) + bg) / (dl + params.mu)).ln())
                    .sum();
                (doc, score)
            })
            .collect();
        Ok(self.finish(scored, params.depth))
    }

    pub fn search(
        &self,
        model: RetrievalModel,
        query: &WeightedQuery,
        params: &SearchParams,
    ) -> Result<Vec<ScoredDoc>, IndexError> {
        match model {
            RetrievalModel::Bm25 => self.bm25_search(query, params),
            RetrievalModel::Ql => self.ql_search(query, params),
        }
    }

    /// RM3: interpolates the normalized original query with a relevance
    /// model estimated from the top `fb_docs` documents of `initial`.
    pub fn rm3_expand(
        &self,
        original: &WeightedQuery,
        initial: &[ScoredDoc],
        params: &SearchParams,
    ) -> Result<WeightedQuery, IndexError> {
        params.validate()?;
        let original = original.normalized();
        if initial.is_empty() || params.orig_weight == 1.0 {
            return Ok(original);
        }

        let feedback: Vec<(usize, f64)> = initial
            .iter()
            .take(params.fb_docs)
            .map(|d| {
                self.docnum(&d.doc_id)
                    .map(|n| (n, d.score))
                    .ok_or_else(|| IndexError::InvalidQuery(format!("unknown document `{}`", d.doc_id)))
            })
            .collect::<Result<_, _>>()?;
        // Softmax over feedback scores, shifted by the max for stability.
        let max = feedback
            .iter()
            .map(|&(_, s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = feedback.iter().map(|&(_, s)| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();

        let mut model: BTreeMap<u32, f64> = BTreeMap::new();
        for (&(doc, _), e) in feedback.iter().zip(&exps) {
            let dl = f64::from(self.doc_lengths[doc]);
            if dl == 0.0 {
                continue;
            }
            let u = e / z;
            for &(tid, tf) in &self.doc_terms[doc] {
                *model.entry(tid).or_insert(0.0) += u * f64::from(tf) / dl;
            }
        }
        let mut ranked: Vec<(&str, f64)> = model
            .into_iter()
            .map(|(tid, p)| (self.terms[tid as usize].as_str(), p))
            .filter(|&(t, p)| p > 0.0 && !self.analyzer.is_stopword(t))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(params.fb_terms);
        let fb_total: f64 = ranked.iter().map(|&(_, p)| p).sum();
        if ranked.is_empty() || fb_total <= 0.0 {
            return Ok(original);
        }

        let mut weights: BTreeMap<String, f64> = original
            .weights()
            .iter()
            .map(|(t, w)| (t.clone(), params.orig_weight * w))
            .collect();
        for (term, p) in ranked {
            *weights.entry(term.to_string()).or_insert(0.0) +=
                (1.0 - params.orig_weight) * p / fb_total;
        }
        WeightedQuery::new(weights)
    }

    /// Base retrieval, RM3 expansion, then a second retrieval with the
    /// expanded query.
    pub fn search_rm3(
        &self,
        topic: &Topic,
        model: RetrievalModel,
        params: &SearchParams,
    ) -> Result<Vec<ScoredDoc>, IndexError> {
        let Some(query) = WeightedQuery::from_text(&self.analyzer, &topic.title) else {
            return Ok(Vec::new());
        };
        let initial = self.search(model, &query, params)?;
        if initial.is_empty() {
            return Ok(initial);
        }
        let expanded = self.rm3_expand(&query, &initial, params)?;
        if expanded == query {
            return Ok(initial);
        }
        self.search(model, &expanded, params)
    }
}
