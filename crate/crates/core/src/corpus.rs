//! Collection and topic parsing, markup cleaning, sentence segmentation and
//! chunking.
//!
//! Everything here is a pure function of its input, so documents can be
//! prepared in parallel.

use std::collections::HashSet;
use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

/// Default whitespace-token limit for a single scoring unit.
pub const DEFAULT_CHUNK_LIMIT: usize = 256;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("parse error on line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("duplicate topic id `{0}`")]
    DuplicateTopic(String),
    #[error("topic {0} has no title")]
    MissingTitle(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("input is not valid UTF-8 at byte {0}")]
    Utf8(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A document as found in the collection, markup included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub doc_id: String,
    pub raw_text: String,
}

/// A scoring unit: one sentence, or one fixed-size chunk of an over-long
/// sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub token_count: usize,
}

impl Sentence {
    pub fn new(doc_id: impl Into<String>, index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = text.split_whitespace().count();
        Sentence {
            doc_id: doc_id.into(),
            index,
            text,
            token_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanDocument {
    pub doc_id: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub topic_id: String,
    pub title: String,
}

/// How cleaned text is split into scoring units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Segmentation {
    /// Rule-based sentence boundaries, then chunking.
    #[default]
    Sentences,
    /// The whole text is one unit when it fits the chunk limit (short posts);
    /// longer texts are chunked.
    Whole,
}

fn find(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from > hay.len() {
        return None;
    }
    hay[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

fn to_str(input: &[u8]) -> Result<&str, CorpusError> {
    std::str::from_utf8(input).map_err(|e| CorpusError::Utf8(e.valid_up_to()))
}

/// Parses a concatenation of `<DOC>...</DOC>` blocks.
pub fn parse_trec_collection(input: &[u8]) -> Result<Vec<RawDocument>, CorpusError> {
    let text = to_str(input)?;
    // ASCII lowercasing keeps byte offsets aligned with `text`.
    let lower = text.to_ascii_lowercase();
    let hay = lower.as_bytes();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let mut pos = 0;

    loop {
        while pos < hay.len() && hay[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= hay.len() {
            break;
        }
        if !hay[pos..].starts_with(b"<doc>") {
            return Err(CorpusError::Parse {
                offset: pos,
                message: "expected <DOC>".into(),
            });
        }
        let body_start = pos + b"<doc>".len();
        let body_end = find(hay, b"</doc>", body_start).ok_or_else(|| CorpusError::Parse {
            offset: pos,
            message: "unterminated <DOC> block".into(),
        })?;
        let no_open = find(hay, b"<docno>", body_start)
            .filter(|&p| p < body_end)
            .ok_or_else(|| CorpusError::Parse {
                offset: pos,
                message: "<DOC> block without <DOCNO>".into(),
            })?;
        let id_start = no_open + b"<docno>".len();
        let no_close = find(hay, b"</docno>", id_start)
            .filter(|&p| p < body_end)
            .ok_or_else(|| CorpusError::Parse {
                offset: no_open,
                message: "unterminated <DOCNO>".into(),
            })?;
        let after_no = no_close + b"</docno>".len();
        if find(hay, b"<docno>", after_no).is_some_and(|p| p < body_end) {
            return Err(CorpusError::Parse {
                offset: pos,
                message: "<DOC> block with more than one <DOCNO>".into(),
            });
        }

        let doc_id = text[id_start..no_close].trim();
        if doc_id.is_empty() || doc_id.contains(char::is_whitespace) {
            return Err(CorpusError::Parse {
                offset: id_start,
                message: format!("invalid DOCNO `{doc_id}`"),
            });
        }
        if !seen.insert(doc_id.to_string()) {
            return Err(CorpusError::DuplicateDocId(doc_id.to_string()));
        }
        let mut raw_text = String::with_capacity(body_end - body_start);
        raw_text.push_str(&text[body_start..no_open]);
        raw_text.push_str(&text[after_no..body_end]);
        docs.push(RawDocument {
            doc_id: doc_id.to_string(),
            raw_text,
        });
        pos = body_end + b"</doc>".len();
    }
    Ok(docs)
}

#[derive(Deserialize)]
struct JsonDoc {
    id: String,
    text: String,
}

/// Parses the line-per-object JSON corpus format (`{"id":..,"text":..}`).
/// Blank lines are skipped.
pub fn parse_jsonl_collection<R: BufRead>(input: R) -> Result<Vec<RawDocument>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: JsonDoc = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = doc.id.trim();
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(CorpusError::Line {
                line: i + 1,
                message: format!("invalid document id `{}`", doc.id),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateDocId(id.to_string()));
        }
        docs.push(RawDocument {
            doc_id: id.to_string(),
            raw_text: doc.text,
        });
    }
    Ok(docs)
}

/// Content of a topic field: up to its closing tag or the next tag,
/// whichever comes first (TREC topic files often leave fields unclosed).
fn topic_field<'a>(
    text: &'a str,
    hay: &[u8],
    open: &[u8],
    close: &[u8],
    start: usize,
    end: usize,
) -> Option<&'a str> {
    let at = find(hay, open, start).filter(|&p| p < end)?;
    let from = at + open.len();
    let mut to = end;
    if let Some(c) = find(hay, close, from).filter(|&p| p < end) {
        to = c;
    }
    if let Some(next) = hay[from..to].iter().position(|&b| b == b'<') {
        to = from + next;
    }
    Some(&text[from..to])
}

fn strip_label(num: &str) -> &str {
    let num = num.trim();
    match num.split_once(':') {
        Some((label, rest)) if !label.is_empty() && label.chars().all(char::is_alphabetic) => {
            rest.trim()
        }
        _ => num,
    }
}

/// Parses `<top>` blocks carrying `<num>` and `<title>` fields.
pub fn parse_topics(input: &[u8]) -> Result<Vec<Topic>, CorpusError> {
    let text = to_str(input)?;
    let lower = text.to_ascii_lowercase();
    let hay = lower.as_bytes();
    let mut topics = Vec::new();
    let mut seen = HashSet::new();
    let mut pos = 0;

    while let Some(open) = find(hay, b"<top>", pos) {
        let start = open + b"<top>".len();
        let end = find(hay, b"</top>", start).ok_or_else(|| CorpusError::Parse {
            offset: open,
            message: "unterminated <top> block".into(),
        })?;
        let num = topic_field(text, hay, b"<num>", b"</num>", start, end).ok_or_else(|| {
            CorpusError::Parse {
                offset: open,
                message: "<top> block without <num>".into(),
            }
        })?;
        let topic_id = strip_label(num);
        if topic_id.is_empty() || topic_id.contains(char::is_whitespace) {
            return Err(CorpusError::Parse {
                offset: open,
                message: format!("invalid topic number `{}`", num.trim()),
            });
        }
        let title = topic_field(text, hay, b"<title>", b"</title>", start, end)
            .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
            .filter(|t| !t.is_empty())
            .ok_or_else(|| CorpusError::MissingTitle(topic_id.to_string()))?;
        if !seen.insert(topic_id.to_string()) {
            return Err(CorpusError::DuplicateTopic(topic_id.to_string()));
        }
        topics.push(Topic {
            topic_id: topic_id.to_string(),
            title,
        });
        pos = end + b"</top>".len();
    }
    Ok(topics)
}

/// One pass of tag removal: each `<...>` with no interior `<` becomes a space.
fn strip_tags_once(text: &str) -> (String, bool) {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut changed = false;
    let mut copied = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j] != b'<' && bytes[j] != b'>' {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'>' {
                out.push_str(&text[copied..i]);
                out.push(' ');
                changed = true;
                i = j + 1;
                copied = i;
                continue;
            }
            // Unbalanced `<` stays literal; rescan from the next `<` (if any).
            i = j;
            continue;
        }
        i += 1;
    }
    out.push_str(&text[copied..]);
    (out, changed)
}

/// Removes markup and normalizes whitespace.
pub fn clean_text(raw: &str) -> String {
    let mut text = raw.to_string();
    // Removing a tag can expose a new one (`<x<y>z>`), so repeat to a fixed point.
    loop {
        let (next, changed) = strip_tags_once(&text);
        text = next;
        if !changed {
            break;
        }
    }
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cleans a raw document. The returned document has no sentences yet.
pub fn clean(raw: &RawDocument) -> CleanDocument {
    CleanDocument {
        doc_id: raw.doc_id.clone(),
        text: clean_text(&raw.raw_text),
        sentences: Vec::new(),
    }
}

fn opens_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit() || matches!(c, '"' | '\'' | '\u{201C}' | '\u{2018}')
}

/// Splits cleaned text into sentences.
///
/// A boundary falls after `.`, `?` or `!` when the next character is
/// whitespace and the first non-whitespace character after it is an
/// uppercase letter, a digit or an opening quote. Sentences carry the
/// placeholder doc id `""`; [`prepare`] fills it in.
pub fn segment(text: &str) -> Vec<Sentence> {
    let mut pieces = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if !matches!(c, '.' | '?' | '!') {
            continue;
        }
        let cut = i + c.len_utf8();
        let rest = &text[cut..];
        let Some(first) = rest.chars().next() else {
            continue;
        };
        if !first.is_whitespace() {
            continue;
        }
        if rest.trim_start().chars().next().is_some_and(opens_sentence) {
            pieces.push(&text[start..cut]);
            start = cut;
        }
    }
    pieces.push(&text[start..]);

    pieces
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .enumerate()
        .map(|(i, s)| Sentence::new("", i, s))
        .collect()
}

/// Splits a sentence into consecutive chunks of at most `max_tokens`
/// whitespace tokens. Chunks are numbered from `sentence.index`.
pub fn chunk(sentence: &Sentence, max_tokens: usize) -> Result<Vec<Sentence>, CorpusError> {
    if max_tokens < 1 {
        return Err(CorpusError::Argument("max_tokens must be at least 1".into()));
    }
    if sentence.token_count <= max_tokens {
        return Ok(vec![sentence.clone()]);
    }
    let tokens: Vec<&str> = sentence.text.split_whitespace().collect();
    Ok(tokens
        .chunks(max_tokens)
        .enumerate()
        .map(|(i, part)| Sentence::new(sentence.doc_id.clone(), sentence.index + i, part.join(" ")))
        .collect())
}

/// Cleans, segments and chunks one document, numbering the resulting units
/// consecutively from zero.
pub fn prepare(
    raw: &RawDocument,
    chunk_limit: usize,
    mode: Segmentation,
) -> Result<CleanDocument, CorpusError> {
    let mut doc = clean(raw);
    let units = match mode {
        Segmentation::Sentences => segment(&doc.text),
        Segmentation::Whole if doc.text.is_empty() => Vec::new(),
        Segmentation::Whole => vec![Sentence::new("", 0, doc.text.clone())],
    };
    let mut sentences = Vec::with_capacity(units.len());
    for unit in units {
        for mut piece in chunk(&unit, chunk_limit)? {
            piece.doc_id = doc.doc_id.clone();
            piece.index = sentences.len();
            sentences.push(piece);
        }
    }
    doc.sentences = sentences;
    Ok(doc)
}
