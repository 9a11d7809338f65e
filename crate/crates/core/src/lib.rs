//! Document retrieval with sentence-level reranking.
//!
//! The pipeline retrieves candidates with BM25 or Dirichlet query likelihood
//! plus RM3 feedback ([`index`]), scores every candidate sentence with a
//! pluggable relevance scorer ([`scorer`]), and interpolates the best sentence
//! scores with the normalized retrieval score ([`rerank`]). Interpolation
//! weights are tuned by cross-validated grid search ([`tune`]) and runs are
//! evaluated with AP, P@k and a paired t-test ([`evaluate`]).

pub mod corpus;
pub mod evaluate;
pub mod index;
pub mod rerank;
pub mod scorer;
pub mod tune;

pub use corpus::{CleanDocument, RawDocument, Segmentation, Sentence, Topic};
pub use evaluate::{MetricReport, Qrels, Run, TTestResult};
pub use index::{Analyzer, Index, RetrievalModel, ScoredDoc, SearchParams, WeightedQuery};
pub use rerank::{AggregationParams, DocStore, RerankedDoc, SentenceCache};
pub use scorer::{LexicalScorer, ScorerSession, SentenceScorer};
pub use tune::{FoldSpec, TuneResult};
