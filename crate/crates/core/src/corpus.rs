//! Corpus pages, gold annotations and the newline-delimited record format.
//!
//! Every record is one JSON object per line:
//!
//! ```text
//! {"text": "...", "spans": [{"start": 10, "end": 14, "label": "PER"}], "meta": {"id": "p17"}, "answer": "accept"}
//! ```
//!
//! Offsets count Unicode scalar values, not bytes. Records whose `answer` is
//! present and not `"accept"` are skipped on load. The same shape is used for
//! gold files and for prediction files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::span::{char_len, CharText, EntitySpan, Label};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("document `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("document `{id}`: overlapping gold spans [{a_start},{a_end}) and [{b_start},{b_end})")]
    Overlap {
        id: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("insufficient source material: requested {requested} excerpts, only {available} available (deficit {deficit})")]
    Insufficient {
        requested: usize,
        available: usize,
        deficit: usize,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Normalizes a raw page: dehyphenates line-end breaks, turns remaining line
/// breaks into spaces, collapses whitespace runs and trims.
///
/// A hyphen followed by optional spaces, a line break and optional spaces is
/// removed together with the break. When the first character after the break
/// is uppercase the hyphen stays, so `Kaiser-\nWilhelm` becomes
/// `Kaiser-Wilhelm` while `Haupt-\nbahnhof` becomes `Hauptbahnhof`.
pub fn preprocess(raw: &str) -> String {
    let chars: Vec<char> = raw.chars().collect();
    let mut joined = String::with_capacity(raw.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_hyphen(c) {
            if let Some(next) = line_break_join(&chars, i + 1) {
                let keep = chars.get(next).is_some_and(|c| c.is_uppercase());
                if keep {
                    joined.push(c);
                }
                i = next;
                continue;
            }
        }
        joined.push(c);
        i += 1;
    }

    let mut out = String::with_capacity(joined.len());
    let mut pending_space = false;
    for c in joined.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

fn is_hyphen(c: char) -> bool {
    matches!(c, '-' | '\u{2010}')
}

fn is_line_break(c: char) -> bool {
    matches!(c, '\n' | '\r' | '\u{2028}' | '\u{2029}' | '\u{0B}' | '\u{0C}' | '\u{85}')
}

fn is_inline_space(c: char) -> bool {
    c.is_whitespace() && !is_line_break(c)
}

/// If `chars[from..]` is `spaces* linebreak spaces*`, returns the index after it.
fn line_break_join(chars: &[char], from: usize) -> Option<usize> {
    let mut i = from;
    while i < chars.len() && is_inline_space(chars[i]) {
        i += 1;
    }
    match chars.get(i) {
        Some('\r') if chars.get(i + 1) == Some(&'\n') => i += 2,
        Some(&c) if is_line_break(c) => i += 1,
        _ => return None,
    }
    while i < chars.len() && is_inline_space(chars[i]) {
        i += 1;
    }
    Some(i)
}

/// True when `text` has no line breaks and no runs of two or more whitespace characters.
pub fn is_preprocessed(text: &str) -> bool {
    let mut prev_ws = false;
    for c in text.chars() {
        if is_line_break(c) {
            return false;
        }
        let ws = c.is_whitespace();
        if ws && prev_ws {
            return false;
        }
        prev_ws = ws;
    }
    true
}

/// One corpus page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub raw_text: Option<String>,
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            raw_text: None,
            meta: BTreeMap::new(),
        }
    }

    /// Builds a document from unprocessed page text.
    pub fn from_raw(id: impl Into<String>, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        Document {
            id: id.into(),
            text: preprocess(&raw),
            raw_text: Some(raw),
            meta: BTreeMap::new(),
        }
    }

    pub fn char_len(&self) -> usize {
        char_len(&self.text)
    }
}

/// Documents plus their gold spans, keyed by document id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldCorpus {
    pub documents: Vec<Document>,
    pub annotations: BTreeMap<String, Vec<EntitySpan>>,
}

impl GoldCorpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn spans(&self, id: &str) -> &[EntitySpan] {
        self.annotations.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.documents.iter().map(|d| d.id.clone()).collect()
    }

    /// Adds a document after checking every corpus invariant.
    pub fn push(&mut self, doc: Document, mut spans: Vec<EntitySpan>) -> Result<()> {
        if doc.id.is_empty() {
            return Err(CorpusError::Invalid {
                id: doc.id,
                message: "empty document id".into(),
            });
        }
        if self.annotations.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        if !is_preprocessed(&doc.text) {
            return Err(CorpusError::Invalid {
                id: doc.id,
                message: "text contains line breaks or repeated whitespace".into(),
            });
        }
        let text = CharText::new(&doc.text);
        validate_spans(&doc.id, &text, &spans)?;
        spans.sort_by_key(|s| (s.start, s.end));
        for pair in spans.windows(2) {
            if pair[0].overlaps(&pair[1]) {
                return Err(CorpusError::Overlap {
                    id: doc.id,
                    a_start: pair[0].start,
                    a_end: pair[0].end,
                    b_start: pair[1].start,
                    b_end: pair[1].end,
                });
            }
        }
        self.annotations.insert(doc.id.clone(), spans);
        self.documents.push(doc);
        Ok(())
    }

    /// Copy of the corpus without the given document ids.
    pub fn without(&self, excluded: &BTreeSet<String>) -> GoldCorpus {
        let mut out = GoldCorpus::default();
        for doc in &self.documents {
            if excluded.contains(&doc.id) {
                continue;
            }
            out.annotations
                .insert(doc.id.clone(), self.spans(&doc.id).to_vec());
            out.documents.push(doc.clone());
        }
        out
    }
}

/// Checks offsets, ordering and non-blank content for each span.
pub fn validate_spans(id: &str, text: &CharText, spans: &[EntitySpan]) -> Result<()> {
    for span in spans {
        if span.start >= span.end || span.end > text.len() {
            return Err(CorpusError::Invalid {
                id: id.to_string(),
                message: format!(
                    "span {span} is not within 0 <= start < end <= {}",
                    text.len()
                ),
            });
        }
        if text.chars()[span.start..span.end]
            .iter()
            .all(|c| c.is_whitespace())
        {
            return Err(CorpusError::Invalid {
                id: id.to_string(),
                message: format!("span {span} covers only whitespace"),
            });
        }
    }
    Ok(())
}

/// A span as it appears on the wire, before label validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// One parsed line of a record file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub line: usize,
    pub id: String,
    pub text: String,
    pub spans: Vec<RecordSpan>,
    pub meta: BTreeMap<String, String>,
}

fn malformed(line: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_record(line_no: usize, line: &str) -> Result<Option<Record>> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| malformed(line_no, "<record>", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(line_no, "<record>", "expected a JSON object"))?;

    match obj.get("answer") {
        None | Some(Value::Null) => {}
        Some(Value::String(a)) if a == "accept" => {}
        Some(Value::String(_)) => return Ok(None),
        Some(_) => return Err(malformed(line_no, "answer", "expected a string")),
    }

    let text = obj
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(line_no, "text", "missing or not a string"))?
        .to_string();

    let mut meta = BTreeMap::new();
    match obj.get("meta") {
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                meta.insert(k.clone(), v);
            }
        }
        Some(Value::Null) | None => {}
        Some(_) => return Err(malformed(line_no, "meta", "expected an object")),
    }
    let id = meta
        .remove("id")
        .filter(|id| !id.is_empty())
        .ok_or_else(|| malformed(line_no, "meta.id", "missing or empty document id"))?;

    let mut spans = Vec::new();
    match obj.get("spans") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let field = |name: &str| format!("spans[{i}].{name}");
                let offset = |name: &str| {
                    item.get(name)
                        .and_then(Value::as_u64)
                        .map(|v| v as usize)
                        .ok_or_else(|| {
                            malformed(line_no, &field(name), "missing or not a non-negative integer")
                        })
                };
                let start = offset("start")?;
                let end = offset("end")?;
                let label = item
                    .get("label")
                    .and_then(Value::as_str)
                    .ok_or_else(|| malformed(line_no, &field("label"), "missing or not a string"))?
                    .to_string();
                spans.push(RecordSpan { start, end, label });
            }
        }
        Some(_) => return Err(malformed(line_no, "spans", "expected an array")),
    }

    Ok(Some(Record {
        line: line_no,
        id,
        text,
        spans,
        meta,
    }))
}

/// Parses every accepted record of a newline-delimited record file's contents.
pub fn parse_records(content: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rec) = parse_record(idx + 1, line)? {
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_records(&content)
}

/// Builds a validated gold corpus from record-file contents.
pub fn parse_gold(content: &str) -> Result<GoldCorpus> {
    let mut corpus = GoldCorpus::default();
    for rec in parse_records(content)? {
        let mut spans = Vec::with_capacity(rec.spans.len());
        for (i, s) in rec.spans.iter().enumerate() {
            let label: Label = s
                .label
                .parse()
                .map_err(|e| malformed(rec.line, &format!("spans[{i}].label"), format!("{e}")))?;
            spans.push(EntitySpan::new(s.start, s.end, label));
        }
        let mut doc = Document::new(rec.id, rec.text);
        doc.meta = rec.meta;
        corpus.push(doc, spans)?;
    }
    Ok(corpus)
}

/// Loads and validates a gold file.
pub fn load_gold(path: &Path) -> Result<GoldCorpus> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_gold(&content)
}

#[derive(Serialize)]
struct OutRecord<'a> {
    text: &'a str,
    spans: &'a [EntitySpan],
    meta: Map<String, Value>,
}

/// Serializes one record line (without the trailing newline).
pub fn record_line(doc: &Document, spans: &[EntitySpan]) -> String {
    let mut meta = Map::new();
    for (k, v) in &doc.meta {
        meta.insert(k.clone(), Value::String(v.clone()));
    }
    meta.insert("id".into(), Value::String(doc.id.clone()));
    let rec = OutRecord {
        text: &doc.text,
        spans,
        meta,
    };
    serde_json::to_string(&rec).expect("record serialization is infallible")
}

/// Renders a corpus in the record format, one line per document.
pub fn to_records(corpus: &GoldCorpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str(&record_line(doc, corpus.spans(&doc.id)));
        out.push('\n');
    }
    out
}

pub fn save_gold(corpus: &GoldCorpus, path: &Path) -> Result<()> {
    fs::write(path, to_records(corpus)).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A short annotated excerpt cut from a held-out page, for few-shot prompting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Excerpt {
    pub doc_id: String,
    /// Offset of the excerpt within its source document.
    pub start: usize,
    pub text: String,
    /// Gold spans rebased to excerpt-local offsets.
    pub spans: Vec<EntitySpan>,
}

/// Cuts `count` excerpts of `min_len..=max_len` characters from `corpus`.
///
/// Excerpts begin at a word start and end at a word end, never cut through a
/// gold span, and never overlap each other. The result depends only on the
/// corpus and `seed`.
pub fn split_examples_pool(
    corpus: &GoldCorpus,
    count: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Excerpt>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    for doc in &corpus.documents {
        cut_document(doc, corpus.spans(&doc.id), min_len, max_len, &mut rng, &mut pool);
    }
    if pool.len() < count {
        return Err(CorpusError::Insufficient {
            requested: count,
            available: pool.len(),
            deficit: count - pool.len(),
        });
    }
    pool.shuffle(&mut rng);
    pool.truncate(count);
    Ok(pool)
}

fn cut_document(
    doc: &Document,
    spans: &[EntitySpan],
    min_len: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Excerpt>,
) {
    let text = CharText::new(&doc.text);
    let chars = text.chars();
    let n = chars.len();
    let inside = |p: usize| spans.iter().any(|s| s.start < p && p < s.end);
    let ws = |i: usize| chars[i].is_whitespace();

    let starts: Vec<usize> = (0..n)
        .filter(|&p| (p == 0 || ws(p - 1)) && !ws(p) && !inside(p))
        .collect();
    let ends: Vec<usize> = (1..=n)
        .filter(|&q| (q == n || ws(q)) && !ws(q - 1) && !inside(q))
        .collect();

    let mut cursor = 0;
    loop {
        let jitter = rng.random_range(0..=max_len / 4);
        let Some(&start) = starts.iter().find(|&&p| p >= cursor + jitter) else {
            break;
        };
        let lo = ends.partition_point(|&q| q < start + min_len);
        let hi = ends.partition_point(|&q| q <= start + max_len);
        if lo >= hi {
            cursor = start + 1;
            continue;
        }
        let end = ends[rng.random_range(lo..hi)];
        let excerpt_text = text.slice(start, end);
        let local: Vec<EntitySpan> = spans
            .iter()
            .filter(|s| s.start >= start && s.end <= end)
            .map(|s| s.rebased(start))
            .collect();
        if !crate::tagspan::contains_tag_syntax(&excerpt_text) {
            out.push(Excerpt {
                doc_id: doc.id.clone(),
                start,
                text: excerpt_text,
                spans: local,
            });
        }
        cursor = end;
    }
}
