//! The `sentrank` command-line pipeline: index a collection, retrieve a
//! baseline, rerank with sentence scores, tune the aggregation weights by
//! cross-validation and evaluate runs.
//!
//! Every command validates its configuration before touching the file
//! system, writes outputs through a temporary file and an atomic rename, and
//! produces a JSON report that echoes the effective configuration.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use sentrank::corpus::CorpusError;
use sentrank::evaluate::EvalError;
use sentrank::index::IndexError;
use sentrank::rerank::RerankError;
use sentrank::scorer::ScorerError;
use sentrank::tune::TuneError;

pub use commands::{cmd_eval, cmd_index, cmd_rerank, cmd_scorer_check, cmd_search, cmd_tune, Outcome};
pub use config::{Overrides, PipelineConfig, ScorerSpec, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("scorer: {0}")]
    Scorer(String),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 scorer protocol.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Scorer(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::InvalidParams(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ScorerError> for CliError {
    fn from(e: ScorerError) -> Self {
        CliError::Scorer(e.to_string())
    }
}

impl From<RerankError> for CliError {
    fn from(e: RerankError) -> Self {
        match e {
            RerankError::Scorer(s) => s.into(),
            RerankError::Argument(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TuneError> for CliError {
    fn from(e: TuneError) -> Self {
        match e {
            TuneError::Argument(_) => CliError::Config(e.to_string()),
            TuneError::Rerank(r) => r.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Writes `contents` to a temporary file next to `path`, then renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
