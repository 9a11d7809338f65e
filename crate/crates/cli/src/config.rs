//! Pipeline configuration: one JSON file plus command-line overrides.
//!
//! Relative paths read from a config file resolve against that file's
//! directory; relative paths given on the command line resolve against the
//! working directory. Reports echo every path exactly as it was given.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sentrank::corpus::{Segmentation, DEFAULT_CHUNK_LIMIT};
use sentrank::evaluate::DEFAULT_EVAL_DEPTH;
use sentrank::scorer::{DEFAULT_TIMEOUT, DEFAULT_WINDOW};
use sentrank::{AggregationParams, RetrievalModel, SearchParams};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// `<DOC>` / `<DOCNO>` SGML.
    Trec,
    /// One `{"id": .., "text": ..}` object per line.
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMode {
    Sentences,
    Whole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerSpec {
    /// In-process idf-weighted overlap.
    Lexical,
    /// A process speaking the sentence-scorer protocol.
    External { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Option<String>,
    pub corpus_format: CorpusFormat,
    pub topics: Option<String>,
    pub qrels: Option<String>,
    pub folds: Option<String>,
    pub index: Option<String>,
    pub cache: Option<String>,
    pub baseline_run: Option<String>,
    pub rerank_run: Option<String>,
    pub tuned_run: Option<String>,
    pub report_dir: Option<String>,
    pub model: RetrievalModel,
    pub search: SearchParams,
    pub stopwords: Option<Vec<String>>,
    pub aggregation: Option<AggregationParams>,
    pub tune_n: usize,
    pub scorer: ScorerSpec,
    pub scorer_timeout_secs: f64,
    pub scorer_window: usize,
    pub chunk_limit: usize,
    /// Defaults to `sentences` for TREC collections and `whole` for JSONL.
    pub segmentation: Option<SegmentationMode>,
    pub ks: Vec<usize>,
    pub eval_depth: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            corpus_format: CorpusFormat::Trec,
            topics: None,
            qrels: None,
            folds: None,
            index: None,
            cache: None,
            baseline_run: None,
            rerank_run: None,
            tuned_run: None,
            report_dir: None,
            model: RetrievalModel::Bm25,
            search: SearchParams::default(),
            stopwords: None,
            aggregation: None,
            tune_n: 3,
            scorer: ScorerSpec::Lexical,
            scorer_timeout_secs: DEFAULT_TIMEOUT.as_secs_f64(),
            scorer_window: DEFAULT_WINDOW,
            chunk_limit: DEFAULT_CHUNK_LIMIT,
            segmentation: None,
            ks: vec![20, 30],
            eval_depth: DEFAULT_EVAL_DEPTH,
        }
    }
}

/// Values given on the command line. `None` keeps the config file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<String>,
    pub corpus_format: Option<CorpusFormat>,
    pub topics: Option<String>,
    pub qrels: Option<String>,
    pub folds: Option<String>,
    pub index: Option<String>,
    pub cache: Option<String>,
    pub baseline_run: Option<String>,
    pub rerank_run: Option<String>,
    pub tuned_run: Option<String>,
    pub report_dir: Option<String>,
    pub model: Option<RetrievalModel>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub mu: Option<f64>,
    pub depth: Option<usize>,
    pub fb_docs: Option<usize>,
    pub fb_terms: Option<usize>,
    pub orig_weight: Option<f64>,
    pub a: Option<f64>,
    pub w: Option<Vec<f64>>,
    pub tune_n: Option<usize>,
    pub scorer_command: Option<Vec<String>>,
    pub lexical: bool,
    pub scorer_timeout_secs: Option<f64>,
    pub scorer_window: Option<usize>,
    pub chunk_limit: Option<usize>,
    pub ks: Option<Vec<usize>>,
    pub eval_depth: Option<usize>,
}

/// The effective configuration and where its relative paths resolve.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: PipelineConfig,
    config_dir: PathBuf,
    from_flags: Vec<&'static str>,
}

fn set<T>(slot: &mut T, value: Option<T>) -> bool {
    match value {
        Some(v) => {
            *slot = v;
            true
        }
        None => false,
    }
}

impl Settings {
    /// Reads `path` (if any) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let (config, config_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let config: PipelineConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (config, dir)
            }
            None => (PipelineConfig::default(), PathBuf::new()),
        };
        let mut settings = Settings {
            config,
            config_dir,
            from_flags: Vec::new(),
        };
        settings.apply(overrides)?;
        settings.validate()?;
        Ok(settings)
    }

    fn apply(&mut self, o: Overrides) -> Result<(), CliError> {
        let c = &mut self.config;
        let paths: [(&'static str, &mut Option<String>, Option<String>); 10] = [
            ("corpus", &mut c.corpus, o.corpus),
            ("topics", &mut c.topics, o.topics),
            ("qrels", &mut c.qrels, o.qrels),
            ("folds", &mut c.folds, o.folds),
            ("index", &mut c.index, o.index),
            ("cache", &mut c.cache, o.cache),
            ("baseline_run", &mut c.baseline_run, o.baseline_run),
            ("rerank_run", &mut c.rerank_run, o.rerank_run),
            ("tuned_run", &mut c.tuned_run, o.tuned_run),
            ("report_dir", &mut c.report_dir, o.report_dir),
        ];
        for (name, slot, value) in paths {
            if let Some(v) = value {
                *slot = Some(v);
                self.from_flags.push(name);
            }
        }
        set(&mut c.corpus_format, o.corpus_format);
        set(&mut c.model, o.model);
        set(&mut c.search.k1, o.k1);
        set(&mut c.search.b, o.b);
        set(&mut c.search.mu, o.mu);
        set(&mut c.search.depth, o.depth);
        set(&mut c.search.fb_docs, o.fb_docs);
        set(&mut c.search.fb_terms, o.fb_terms);
        set(&mut c.search.orig_weight, o.orig_weight);
        set(&mut c.tune_n, o.tune_n);
        set(&mut c.scorer_timeout_secs, o.scorer_timeout_secs);
        set(&mut c.scorer_window, o.scorer_window);
        set(&mut c.chunk_limit, o.chunk_limit);
        set(&mut c.ks, o.ks);
        set(&mut c.eval_depth, o.eval_depth);
        if o.lexical && o.scorer_command.is_some() {
            return Err(CliError::Usage("--lexical and --scorer-cmd are mutually exclusive".into()));
        }
        if o.lexical {
            c.scorer = ScorerSpec::Lexical;
        }
        if let Some(command) = o.scorer_command {
            c.scorer = ScorerSpec::External { command };
        }
        if o.a.is_some() || o.w.is_some() {
            let current = c.aggregation.as_ref();
            let a = o.a.or(current.map(AggregationParams::a)).ok_or_else(|| {
                CliError::Config("--w needs an interpolation weight (--a or aggregation.a)".into())
            })?;
            let w = o
                .w
                .or_else(|| current.map(|p| p.weights().to_vec()))
                .unwrap_or_else(|| vec![1.0]);
            c.aggregation = Some(
                AggregationParams::new(a, w).map_err(|e| CliError::Config(format!("aggregation: {e}")))?,
            );
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        c.search
            .validate()
            .map_err(|e| CliError::Config(format!("search: {e}")))?;
        if !(1..=4).contains(&c.tune_n) {
            return Err(CliError::Config(format!("tune_n must be in 1..=4, got {}", c.tune_n)));
        }
        if c.chunk_limit < 1 {
            return Err(CliError::Config("chunk_limit must be >= 1".into()));
        }
        if c.ks.is_empty() || c.ks.contains(&0) {
            return Err(CliError::Config("ks must be a non-empty list of positive ranks".into()));
        }
        if c.eval_depth < 1 {
            return Err(CliError::Config("eval_depth must be >= 1".into()));
        }
        if !(c.scorer_timeout_secs.is_finite() && c.scorer_timeout_secs > 0.0) {
            return Err(CliError::Config("scorer_timeout_secs must be > 0".into()));
        }
        if c.scorer_window < 1 {
            return Err(CliError::Config("scorer_window must be >= 1".into()));
        }
        if let ScorerSpec::External { command } = &c.scorer {
            if command.is_empty() {
                return Err(CliError::Config("external scorer command is empty".into()));
            }
        }
        Ok(())
    }

    fn resolve(&self, name: &str, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() || self.from_flags.contains(&name) {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    fn value(&self, name: &str) -> Option<&String> {
        let c = &self.config;
        match name {
            "corpus" => c.corpus.as_ref(),
            "topics" => c.topics.as_ref(),
            "qrels" => c.qrels.as_ref(),
            "folds" => c.folds.as_ref(),
            "index" => c.index.as_ref(),
            "cache" => c.cache.as_ref(),
            "baseline_run" => c.baseline_run.as_ref(),
            "rerank_run" => c.rerank_run.as_ref(),
            "tuned_run" => c.tuned_run.as_ref(),
            "report_dir" => c.report_dir.as_ref(),
            _ => None,
        }
    }

    /// Resolved path of a setting the command cannot do without.
    pub fn required(&self, name: &str) -> Result<PathBuf, CliError> {
        self.optional(name)
            .ok_or_else(|| CliError::Config(format!("`{name}` is not set (config key or --{})", flag(name))))
    }

    pub fn optional(&self, name: &str) -> Option<PathBuf> {
        self.value(name).map(|v| self.resolve(name, v))
    }

    /// A required input that must already exist.
    pub fn input(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.required(name)?;
        if !path.is_file() {
            return Err(CliError::Config(format!("{name} file {} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn segmentation(&self) -> Segmentation {
        match (self.config.segmentation, self.config.corpus_format) {
            (Some(SegmentationMode::Sentences), _) | (None, CorpusFormat::Trec) => Segmentation::Sentences,
            (Some(SegmentationMode::Whole), _) | (None, CorpusFormat::Jsonl) => Segmentation::Whole,
        }
    }

    pub fn scorer_timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.config.scorer_timeout_secs)
    }

    /// The effective configuration as JSON, for reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}

fn flag(name: &str) -> String {
    match name {
        "baseline_run" => "baseline".into(),
        other => other.replace('_', "-"),
    }
}
