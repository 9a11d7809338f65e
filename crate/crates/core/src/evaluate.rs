//! TREC qrels and run files, AP and P@k, and the paired t-test.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::ScoredDoc;

pub const DEFAULT_EVAL_DEPTH: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Relevance judgments. Unlisted (topic, doc) pairs are not relevant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, topic: &str, doc: &str, grade: u32) {
        self.judgments
            .entry(topic.to_string())
            .or_default()
            .insert(doc.to_string(), grade);
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.judgments.contains_key(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn grade(&self, topic: &str, doc: &str) -> u32 {
        self.judgments
            .get(topic)
            .and_then(|j| j.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn relevant(&self, topic: &str) -> HashSet<&str> {
        self.judgments.get(topic).map_or_else(HashSet::new, |j| {
            j.iter()
                .filter(|(_, &g)| g > 0)
                .map(|(d, _)| d.as_str())
                .collect()
        })
    }
}

/// One line of a run: `topic Q0 doc rank score tag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Ranked results per topic. Entries of a topic are in rank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    entries: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    /// Sets a topic's ranking, taking `docs` as already ordered.
    pub fn set_ranking(&mut self, topic: &str, docs: &[ScoredDoc], tag: &str) {
        let entries = docs
            .iter()
            .enumerate()
            .map(|(i, d)| RunEntry {
                doc_id: d.doc_id.clone(),
                rank: i + 1,
                score: d.score,
                tag: tag.to_string(),
            })
            .collect();
        self.entries.insert(topic.to_string(), entries);
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self, topic: &str) -> Option<&[RunEntry]> {
        self.entries.get(topic).map(Vec::as_slice)
    }

    pub fn ranked_ids(&self, topic: &str) -> Vec<&str> {
        self.entries(topic)
            .unwrap_or_default()
            .iter()
            .map(|e| e.doc_id.as_str())
            .collect()
    }

    /// The ranking of a topic as scored documents, in rank order.
    pub fn scored(&self, topic: &str) -> Vec<ScoredDoc> {
        self.entries(topic)
            .unwrap_or_default()
            .iter()
            .map(|e| ScoredDoc::new(e.doc_id.clone(), e.score))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

pub fn parse_qrels<R: BufRead>(input: R) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let f = fields(&line);
        if f.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse { line: i + 1, message };
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", f.len())));
        }
        let grade: i64 = f[3]
            .parse()
            .map_err(|_| err(format!("non-numeric grade `{}`", f[3])))?;
        // Negative grades (e.g. -1 for "spam") count as not relevant.
        qrels.insert(f[0], f[2], grade.max(0) as u32);
    }
    Ok(qrels)
}

pub fn parse_run<R: BufRead>(input: R) -> Result<Run, EvalError> {
    let mut raw: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let f = fields(&line);
        if f.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse { line: i + 1, message };
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| err(format!("non-numeric rank `{}`", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| err(format!("non-numeric score `{}`", f[4])))?;
        raw.entry(f[0].to_string()).or_default().push((
            i + 1,
            RunEntry {
                doc_id: f[2].to_string(),
                rank,
                score,
                tag: f[5].to_string(),
            },
        ));
    }

    let mut run = Run::default();
    for (topic, mut rows) in raw {
        rows.sort_by_key(|(_, e)| e.rank);
        let mut seen = HashSet::new();
        for (pos, (line, e)) in rows.iter().enumerate() {
            let err = |message: String| EvalError::Parse { line: *line, message };
            if e.rank != pos + 1 {
                return Err(err(format!("non-consecutive rank {} for topic {topic}", e.rank)));
            }
            if pos > 0 && e.score > rows[pos - 1].1.score {
                return Err(err(format!("score increases with rank for topic {topic}")));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(err(format!("duplicate document {} for topic {topic}", e.doc_id)));
            }
        }
        run.entries
            .insert(topic, rows.into_iter().map(|(_, e)| e).collect());
    }
    Ok(run)
}

/// Renders a run: topics ascending, ranks ascending, scores with 6 decimals.
/// A `Some(tag)` replaces every entry's tag.
pub fn write_run(run: &Run, tag: Option<&str>) -> String {
    let mut out = String::new();
    for (topic, entries) in &run.entries {
        for (i, e) in entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{topic} Q0 {} {} {:.6} {}",
                e.doc_id,
                i + 1,
                e.score,
                tag.unwrap_or(&e.tag)
            );
        }
    }
    out
}

/// Average precision over the first `depth` ranked documents, divided by
/// the total number of relevant documents. Zero when nothing is relevant.
pub fn average_precision(ranked: &[&str], relevant: &HashSet<&str>, depth: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranked.iter().take(depth).enumerate() {
        if relevant.contains(doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

/// Fraction of the first `k` positions holding a relevant document; missing
/// positions count as non-relevant.
pub fn precision_at_k(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|d| relevant.contains(*d)).count();
    hits as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub ap: f64,
    pub p_at_k: BTreeMap<usize, f64>,
    pub relevant: usize,
    pub retrieved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub depth: usize,
    pub per_topic: BTreeMap<String, TopicMetrics>,
    pub mean_ap: f64,
    pub mean_p_at_k: BTreeMap<usize, f64>,
    /// Run topics left out of the means, with the reason.
    pub excluded: BTreeMap<String, String>,
}

impl MetricReport {
    /// Aligned plain-text table, one row per evaluated topic plus the mean.
    pub fn to_table(&self) -> String {
        let ks: Vec<usize> = self.mean_p_at_k.keys().copied().collect();
        let width = self
            .per_topic
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("topic".len())
            .max("all".len());
        let mut out = String::new();
        let _ = write!(out, "{:<width$}  {:>8}", "topic", "AP");
        for k in &ks {
            let _ = write!(out, "  {:>8}", format!("P{k}"));
        }
        out.push('\n');
        let mut row = |name: &str, ap: f64, ps: &BTreeMap<usize, f64>| {
            let _ = write!(out, "{name:<width$}  {ap:>8.4}");
            for k in &ks {
                let _ = write!(out, "  {:>8.4}", ps.get(k).copied().unwrap_or(0.0));
            }
            out.push('\n');
        };
        for (topic, m) in &self.per_topic {
            row(topic, m.ap, &m.p_at_k);
        }
        row("all", self.mean_ap, &self.mean_p_at_k);
        for (topic, why) in &self.excluded {
            let _ = writeln!(out, "# excluded {topic}: {why}");
        }
        out
    }
}

/// Per-topic AP and P@k for every run topic that has at least one relevant
/// judgment, with unweighted means over those topics.
pub fn evaluate_run(run: &Run, qrels: &Qrels, ks: &[usize], depth: usize) -> Result<MetricReport, EvalError> {
    if depth < 1 {
        return Err(EvalError::Argument("depth must be >= 1".into()));
    }
    if ks.contains(&0) {
        return Err(EvalError::Argument("k must be >= 1".into()));
    }
    let ks: BTreeSet<usize> = ks.iter().copied().collect();
    let mut per_topic = BTreeMap::new();
    let mut excluded = BTreeMap::new();
    for topic in run.topics() {
        if !qrels.has_topic(topic) {
            excluded.insert(topic.to_string(), "no judgments".to_string());
            continue;
        }
        let relevant = qrels.relevant(topic);
        if relevant.is_empty() {
            excluded.insert(topic.to_string(), "no relevant documents".to_string());
            continue;
        }
        let ranked = run.ranked_ids(topic);
        per_topic.insert(
            topic.to_string(),
            TopicMetrics {
                ap: average_precision(&ranked, &relevant, depth),
                p_at_k: ks
                    .iter()
                    .map(|&k| (k, precision_at_k(&ranked, &relevant, k)))
                    .collect(),
                relevant: relevant.len(),
                retrieved: ranked.len(),
            },
        );
    }
    let n = per_topic.len() as f64;
    let mean = |f: &dyn Fn(&TopicMetrics) -> f64| {
        if per_topic.is_empty() {
            0.0
        } else {
            per_topic.values().map(f).sum::<f64>() / n
        }
    };
    let mean_ap = mean(&|m| m.ap);
    let mean_p_at_k = ks
        .iter()
        .map(|&k| (k, mean(&|m: &TopicMetrics| m.p_at_k[&k])))
        .collect();
    Ok(MetricReport {
        depth,
        per_topic,
        mean_ap,
        mean_p_at_k,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// `±inf` when every difference is the same nonzero value.
    pub t: f64,
    pub p: f64,
    pub n: usize,
    pub degenerate: bool,
}

/// Two-sided paired Student's t-test on `x - y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTestResult, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::Argument(format!(
            "sample lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(EvalError::Argument("need at least 2 pairs".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTestResult {
            t: 0.0,
            p: 1.0,
            n,
            degenerate: true,
        });
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let (t, p) = if sd == 0.0 {
        (f64::INFINITY.copysign(mean), 0.0)
    } else {
        let t = mean / (sd / nf.sqrt());
        (t, student_t_two_sided_p(t, nf - 1.0))
    };
    Ok(TTestResult {
        t,
        p,
        n,
        degenerate: false,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}
