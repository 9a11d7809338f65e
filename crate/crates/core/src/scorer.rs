//! Sentence relevance scorers.
//!
//! Two implementations share the [`SentenceScorer`] trait: [`LexicalScorer`],
//! a deterministic idf-weighted overlap computed in process, and
//! [`ScorerSession`], a client for an external scorer process speaking the
//! line-delimited JSON protocol below.
//!
//! ```text
//! scorer -> host   {"protocol":"sentence-scorer/1","name":"...","max_tokens":512}
//! host   -> scorer {"id":0,"query":"...","text":"..."}
//! scorer -> host   {"id":0,"score":0.93}   or   {"id":0,"error":"..."}
//! ```
//!
//! The host closes the scorer's stdin to end a session; a conforming scorer
//! flushes outstanding responses and exits with status 0.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{Analyzer, Index};

pub const PROTOCOL: &str = "sentence-scorer/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_WINDOW: usize = 32;
const MIN_MAX_TOKENS: usize = 8;
const STDERR_CAP: usize = 16 * 1024;

/// Requests of the golden transcript, one JSON object per line.
pub const GOLDEN_REQUESTS: &str = include_str!("../golden/requests.jsonl");
/// Responses a stub-mode scorer produces for [`GOLDEN_REQUESTS`], in order.
pub const GOLDEN_RESPONSES: &str = include_str!("../golden/responses.jsonl");

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("failed to start scorer `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("bad scorer handshake ({reason}): {line:?}; stderr: {stderr}")]
    Handshake {
        reason: String,
        line: String,
        stderr: String,
    },
    #[error("scorer protocol violation ({reason}): {payload:?}")]
    Protocol { reason: String, payload: String },
    #[error("scorer reported an error for request {id}: {message}")]
    Reported { id: u64, message: String },
    #[error("scorer exited ({status}) with {outstanding} request(s) outstanding; stderr: {stderr}")]
    Exited {
        status: String,
        outstanding: usize,
        stderr: String,
    },
    #[error("scorer timed out after {secs} s with {outstanding} request(s) outstanding")]
    Timeout { secs: f64, outstanding: usize },
    #[error("invalid score request: {0}")]
    Request(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub query: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerHandshake {
    pub protocol: String,
    pub name: String,
    pub max_tokens: usize,
}

impl ScorerHandshake {
    pub fn parse(line: &str) -> Result<Self, String> {
        let hs: ScorerHandshake = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if hs.protocol != PROTOCOL {
            return Err(format!("protocol `{}` is not `{PROTOCOL}`", hs.protocol));
        }
        if hs.max_tokens < MIN_MAX_TOKENS {
            return Err(format!("max_tokens {} is below {MIN_MAX_TOKENS}", hs.max_tokens));
        }
        Ok(hs)
    }
}

/// Anything that turns (query, text) pairs into relevance probabilities.
pub trait SentenceScorer {
    /// Whitespace-token limit the host must truncate texts to, if any.
    fn max_tokens(&self) -> Option<usize>;

    /// Scores every pair; the output is aligned with the input and each
    /// score lies in `[0, 1]`.
    fn score_batch(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError>;
}

/// Keeps the first `max_tokens` whitespace tokens of `text`.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        text.to_string()
    } else {
        tokens[..max_tokens].join(" ")
    }
}

fn weighted_overlap(analyzer: &Analyzer, query: &str, text: &str, idf: impl Fn(&str) -> f64) -> f64 {
    let qterms: BTreeSet<String> = analyzer.tokenize(query).into_iter().collect();
    if qterms.is_empty() {
        return 0.0;
    }
    let tterms: BTreeSet<String> = analyzer.tokenize(text).into_iter().collect();
    let mut matched = 0.0;
    let mut total = 0.0;
    for t in &qterms {
        let w = idf(t);
        total += w;
        if tterms.contains(t) {
            matched += w;
        }
    }
    if total > 0.0 {
        matched / total
    } else {
        0.0
    }
}

/// Idf-weighted share of distinct query terms that occur in `text`, using
/// the index's analyzer and BM25 idf (`ln(1 + N)` for unseen terms).
pub fn lexical_score(query: &str, text: &str, index: &Index) -> f64 {
    let n = index.doc_count() as f64;
    weighted_overlap(index.analyzer(), query, text, |t| {
        if index.document_frequency(t) == 0 {
            (1.0 + n).ln()
        } else {
            index.idf(t)
        }
    })
}

/// Unit-idf overlap without stopwords: the stub scorer's formula.
pub fn overlap_score(query: &str, text: &str) -> f64 {
    weighted_overlap(&Analyzer::without_stopwords(), query, text, |_| 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct LexicalScorer<'a> {
    index: &'a Index,
}

impl<'a> LexicalScorer<'a> {
    pub fn new(index: &'a Index) -> Self {
        LexicalScorer { index }
    }
}

impl SentenceScorer for LexicalScorer<'_> {
    fn max_tokens(&self) -> Option<usize> {
        None
    }

    fn score_batch(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs
            .iter()
            .map(|(q, t)| lexical_score(q, t, self.index))
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    pub timeout: Duration,
    pub window: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            timeout: DEFAULT_TIMEOUT,
            window: DEFAULT_WINDOW,
        }
    }
}

enum Event {
    Line(String),
    Eof,
    Failed(std::io::Error),
}

/// A live connection to an external scorer process.
pub struct ScorerSession {
    child: Child,
    stdin: Option<ChildStdin>,
    events: Receiver<Event>,
    reader: Option<JoinHandle<()>>,
    stderr: Arc<Mutex<String>>,
    stderr_reader: Option<JoinHandle<()>>,
    handshake: ScorerHandshake,
    options: SessionOptions,
    next_id: u64,
    finished: bool,
}

/// Starts `command` and validates its handshake.
pub fn spawn_scorer(command: &[String], options: SessionOptions) -> Result<ScorerSession, ScorerError> {
    let (program, args) = command.split_first().ok_or_else(|| ScorerError::Spawn {
        command: String::new(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
    })?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ScorerError::Spawn {
            command: command.join(" "),
            source,
        })?;

    let stdout = child.stdout.take().expect("stdout is piped");
    let (tx, events) = mpsc::channel();
    let reader = std::thread::spawn(move || {
        let mut lines = BufReader::new(stdout);
        loop {
            let mut line = String::new();
            let event = match lines.read_line(&mut line) {
                Ok(0) => Event::Eof,
                Ok(_) => Event::Line(line.trim_end_matches(['\n', '\r']).to_string()),
                Err(e) => Event::Failed(e),
            };
            let last = !matches!(event, Event::Line(_));
            if tx.send(event).is_err() || last {
                break;
            }
        }
    });

    let stderr = Arc::new(Mutex::new(String::new()));
    let mut err_pipe = child.stderr.take().expect("stderr is piped");
    let sink = Arc::clone(&stderr);
    let stderr_reader = std::thread::spawn(move || {
        let mut buf = [0u8; 4096];
        while let Ok(n) = err_pipe.read(&mut buf) {
            if n == 0 {
                break;
            }
            let mut s = sink.lock().unwrap();
            if s.len() < STDERR_CAP {
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        }
    });

    let stdin = child.stdin.take();
    let mut session = ScorerSession {
        child,
        stdin,
        events,
        reader: Some(reader),
        stderr,
        stderr_reader: Some(stderr_reader),
        handshake: ScorerHandshake {
            protocol: String::new(),
            name: String::new(),
            max_tokens: 0,
        },
        options,
        next_id: 0,
        finished: false,
    };

    let line = match session.events.recv_timeout(options.timeout) {
        Ok(Event::Line(line)) => line,
        Ok(Event::Eof) | Ok(Event::Failed(_)) | Err(RecvTimeoutError::Disconnected) => {
            return Err(session.handshake_failure("no handshake line", String::new()));
        }
        Err(RecvTimeoutError::Timeout) => {
            return Err(session.handshake_failure("timed out waiting for handshake", String::new()));
        }
    };
    match ScorerHandshake::parse(&line) {
        Ok(hs) => {
            session.handshake = hs;
            Ok(session)
        }
        Err(reason) => Err(session.handshake_failure(&reason, line)),
    }
}

impl ScorerSession {
    pub fn handshake(&self) -> &ScorerHandshake {
        &self.handshake
    }

    pub fn name(&self) -> &str {
        &self.handshake.name
    }

    /// Diagnostics the scorer has written to its error stream so far.
    pub fn stderr(&self) -> String {
        self.stderr.lock().unwrap().clone()
    }

    fn shutdown(&mut self) -> Option<ExitStatus> {
        if self.finished {
            return None;
        }
        self.finished = true;
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(5);
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = self.child.kill();
                    break self.child.wait().ok();
                }
            }
        };
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
        if let Some(h) = self.stderr_reader.take() {
            let _ = h.join();
        }
        status
    }

    fn handshake_failure(&mut self, reason: &str, line: String) -> ScorerError {
        let _ = self.child.kill();
        self.shutdown();
        ScorerError::Handshake {
            reason: reason.to_string(),
            line,
            stderr: self.stderr(),
        }
    }

    fn exited(&mut self, outstanding: usize) -> ScorerError {
        let status = self
            .shutdown()
            .map_or_else(|| "unknown status".to_string(), |s| s.to_string());
        ScorerError::Exited {
            status,
            outstanding,
            stderr: self.stderr(),
        }
    }

    fn abort(&mut self, err: ScorerError) -> ScorerError {
        let _ = self.child.kill();
        self.shutdown();
        err
    }

    /// Closes the request stream and waits for the scorer to exit.
    pub fn close(mut self) -> Result<ExitStatus, ScorerError> {
        let status = self.shutdown();
        status.ok_or_else(|| ScorerError::Exited {
            status: "unknown status".into(),
            outstanding: 0,
            stderr: self.stderr(),
        })
    }

    fn parse_response(&self, line: &str) -> Result<(u64, f64), ScorerError> {
        let protocol = |reason: &str| ScorerError::Protocol {
            reason: reason.to_string(),
            payload: line.to_string(),
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|_| protocol("malformed JSON line"))?;
        let obj = value.as_object().ok_or_else(|| protocol("response is not an object"))?;
        let id = obj
            .get("id")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| protocol("missing or invalid id"))?;
        if let Some(message) = obj.get("error") {
            return Err(ScorerError::Reported {
                id,
                message: message
                    .as_str()
                    .map_or_else(|| message.to_string(), str::to_string),
            });
        }
        let score = obj
            .get("score")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| protocol("missing or non-numeric score"))?;
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(protocol("score outside [0, 1]"));
        }
        Ok((id, score))
    }

    fn run_batch(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        let limit = self.handshake.max_tokens;
        let window = self.options.window.max(1);
        let mut results: Vec<Option<f64>> = vec![None; pairs.len()];
        let mut pending: HashMap<u64, usize> = HashMap::new();
        let mut sent = 0;
        let mut received = 0;

        while received < pairs.len() {
            let mut wrote = false;
            while sent < pairs.len() && pending.len() < window {
                let (query, text) = pairs[sent];
                let request = ScoreRequest {
                    id: self.next_id,
                    query: query.to_string(),
                    text: truncate_tokens(text, limit),
                };
                let mut line = serde_json::to_string(&request).expect("request serializes");
                line.push('\n');
                let stdin = self.stdin.as_mut().expect("session is open");
                if stdin.write_all(line.as_bytes()).is_err() {
                    return Err(self.exited(pending.len() + 1));
                }
                pending.insert(self.next_id, sent);
                self.next_id += 1;
                sent += 1;
                wrote = true;
            }
            if wrote {
                let stdin = self.stdin.as_mut().expect("session is open");
                if stdin.flush().is_err() {
                    return Err(self.exited(pending.len()));
                }
            }

            let line = match self.events.recv_timeout(self.options.timeout) {
                Ok(Event::Line(line)) => line,
                Ok(Event::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.exited(pending.len()));
                }
                Ok(Event::Failed(e)) => return Err(self.abort(ScorerError::Io(e))),
                Err(RecvTimeoutError::Timeout) => {
                    let err = ScorerError::Timeout {
                        secs: self.options.timeout.as_secs_f64(),
                        outstanding: pending.len(),
                    };
                    return Err(self.abort(err));
                }
            };
            let (id, score) = match self.parse_response(&line) {
                Ok(r) => r,
                Err(e) => return Err(self.abort(e)),
            };
            let Some(slot) = pending.remove(&id) else {
                let err = ScorerError::Protocol {
                    reason: format!("unknown response id {id}"),
                    payload: line,
                };
                return Err(self.abort(err));
            };
            results[slot] = Some(score);
            received += 1;
        }
        Ok(results.into_iter().map(|s| s.expect("every slot answered")).collect())
    }
}

impl SentenceScorer for ScorerSession {
    fn max_tokens(&self) -> Option<usize> {
        Some(self.handshake.max_tokens)
    }

    /// Sends one request per pair, pipelining up to the session window, and
    /// restores input order from the response ids. Any protocol violation
    /// terminates the session.
    fn score_batch(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        if self.finished {
            return Err(ScorerError::Request("session is closed".into()));
        }
        if let Some((q, t)) = pairs
            .iter()
            .find(|(q, t)| q.trim().is_empty() || t.trim().is_empty())
        {
            return Err(ScorerError::Request(format!(
                "query and text must be non-empty: ({q:?}, {t:?})"
            )));
        }
        self.run_batch(pairs)
    }
}

impl Drop for ScorerSession {
    fn drop(&mut self) {
        self.shutdown();
    }
}
