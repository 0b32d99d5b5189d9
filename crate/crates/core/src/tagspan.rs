//! Inline tag grammar: `<<LABEL content /LABEL>>`.
//!
//! An opener is `<<` + label + one space, a closer is one space + `/` + label
//! + `>>`. Rendering never fails on valid spans; parsing never fails at all
//! and reports every repair it makes as a [`Warning`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::span::{char_len, CharText, EntitySpan, Label, LabelSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("span {span} out of bounds for text of length {len}")]
pub struct RenderError {
    pub span: EntitySpan,
    pub len: usize,
}

pub fn opener(label: Label) -> String {
    format!("<<{label} ")
}

pub fn closer(label: Label) -> String {
    format!(" /{label}>>")
}

/// True if `text` contains a literal that the parser would read as tag syntax.
pub fn contains_tag_syntax(text: &str) -> bool {
    if text.contains("<<") {
        return true;
    }
    let chars: Vec<char> = text.chars().collect();
    chars.iter().enumerate().any(|(i, &c)| {
        let run = if c == '/' { upper_run(&chars, i + 1) } else { 0 };
        run > 0 && starts_with_at(&chars, i + 1 + run, ">>")
    })
}

/// Inserts tags for `spans` into `text`.
///
/// At a shared boundary all closers are emitted before any opener. Among
/// closers the innermost (latest start) closes first; among openers the
/// outermost (furthest end) opens first.
pub fn render_tagged(text: &str, spans: &[EntitySpan]) -> Result<String, RenderError> {
    let chars = CharText::new(text);
    for span in spans {
        if span.start >= span.end || span.end > chars.len() {
            return Err(RenderError {
                span: *span,
                len: chars.len(),
            });
        }
    }

    let mut opens: Vec<&EntitySpan> = spans.iter().collect();
    opens.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut closes: Vec<&EntitySpan> = spans.iter().collect();
    closes.sort_by(|a, b| a.end.cmp(&b.end).then(b.start.cmp(&a.start)));

    let mut out = String::with_capacity(text.len() + spans.len() * 14);
    let (mut oi, mut ci) = (0, 0);
    for pos in 0..=chars.len() {
        while ci < closes.len() && closes[ci].end == pos {
            out.push_str(&closer(closes[ci].label));
            ci += 1;
        }
        while oi < opens.len() && opens[oi].start == pos {
            out.push_str(&opener(opens[oi].label));
            oi += 1;
        }
        if pos < chars.len() {
            out.push(chars.chars()[pos]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    /// Opener never closed; the span was closed at end of input.
    Unclosed,
    /// Closer without a matching opener; dropped.
    StrayCloser,
    /// Tag-shaped token with a label outside the configured set; kept as text.
    UnknownLabel,
    /// Opener or closer without its adjacent space; accepted.
    MissingSpace,
    /// Tag pair enclosing no text; dropped.
    EmptySpan,
}

impl fmt::Display for WarningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarningKind::Unclosed => "unclosed",
            WarningKind::StrayCloser => "stray_closer",
            WarningKind::UnknownLabel => "unknown_label",
            WarningKind::MissingSpace => "missing_space",
            WarningKind::EmptySpan => "empty_span",
        })
    }
}

/// A parser repair. `position` is a character offset into the tagged input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedAnnotation {
    pub plain_text: String,
    /// Sorted by start, then by descending end. May nest or overlap.
    pub spans: Vec<EntitySpan>,
    pub warnings: Vec<Warning>,
}

impl ParsedAnnotation {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

struct Open {
    label: Label,
    plain_start: usize,
    tagged_pos: usize,
}

fn starts_with_at(chars: &[char], at: usize, pat: &str) -> bool {
    let mut i = at;
    for p in pat.chars() {
        if chars.get(i) != Some(&p) {
            return false;
        }
        i += 1;
    }
    true
}

fn upper_run(chars: &[char], at: usize) -> usize {
    chars[at..]
        .iter()
        .take_while(|c| c.is_ascii_uppercase())
        .count()
}

/// Parses tagged text using the full PER/LOC/ORG label set.
pub fn parse_tagged(tagged: &str) -> ParsedAnnotation {
    parse_tagged_with(tagged, &LabelSet::default())
}

/// Parses tagged text, recognising only labels in `labels`.
///
/// A closer pairs with the nearest still-open tag of the same label, so
/// interleaved tags produce overlapping spans rather than errors.
pub fn parse_tagged_with(tagged: &str, labels: &LabelSet) -> ParsedAnnotation {
    let chars: Vec<char> = tagged.chars().collect();
    let mut plain = String::with_capacity(tagged.len());
    let mut plain_len = 0usize;
    let mut stack: Vec<Open> = Vec::new();
    let mut spans = Vec::new();
    let mut warnings = Vec::new();

    let close = |stack: &mut Vec<Open>,
                     spans: &mut Vec<EntitySpan>,
                     warnings: &mut Vec<Warning>,
                     label: Label,
                     pos: usize,
                     plain_len: usize| {
        match stack.iter().rposition(|o| o.label == label) {
            Some(idx) => {
                let open = stack.remove(idx);
                if open.plain_start < plain_len {
                    spans.push(EntitySpan::new(open.plain_start, plain_len, label));
                } else {
                    warnings.push(Warning {
                        kind: WarningKind::EmptySpan,
                        position: open.tagged_pos,
                    });
                }
            }
            None => warnings.push(Warning {
                kind: WarningKind::StrayCloser,
                position: pos,
            }),
        }
    };

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];

        if c == '<' && chars.get(i + 1) == Some(&'<') {
            let run = upper_run(&chars, i + 2);
            if run > 0 {
                let name: String = chars[i + 2..i + 2 + run].iter().collect();
                if let Some(label) = labels.lookup(&name) {
                    let mut next = i + 2 + run;
                    if chars.get(next) == Some(&' ') {
                        next += 1;
                    } else {
                        warnings.push(Warning {
                            kind: WarningKind::MissingSpace,
                            position: i,
                        });
                    }
                    stack.push(Open {
                        label,
                        plain_start: plain_len,
                        tagged_pos: i,
                    });
                    i = next;
                    continue;
                }
                warnings.push(Warning {
                    kind: WarningKind::UnknownLabel,
                    position: i,
                });
                plain.push_str("<<");
                plain_len += 2;
                i += 2;
                continue;
            }
            // `<` followed by a non-tag: emit one char so `x<` + `<<PER ` still parses.
            plain.push(c);
            plain_len += 1;
            i += 1;
            continue;
        }

        let slash_at = if c == ' ' && chars.get(i + 1) == Some(&'/') {
            Some(i + 1)
        } else if c == '/' {
            Some(i)
        } else {
            None
        };
        if let Some(s) = slash_at {
            let run = upper_run(&chars, s + 1);
            if run > 0 && starts_with_at(&chars, s + 1 + run, ">>") {
                let name: String = chars[s + 1..s + 1 + run].iter().collect();
                let end = s + 1 + run + 2;
                match labels.lookup(&name) {
                    Some(label) => {
                        if s == i {
                            warnings.push(Warning {
                                kind: WarningKind::MissingSpace,
                                position: i,
                            });
                        }
                        close(&mut stack, &mut spans, &mut warnings, label, i, plain_len);
                        i = end;
                        continue;
                    }
                    None if s == i => {
                        warnings.push(Warning {
                            kind: WarningKind::UnknownLabel,
                            position: i,
                        });
                        plain.push(c);
                        plain_len += 1;
                        i += 1;
                        continue;
                    }
                    // ` /XYZ>>`: emit the space, report at the slash on the next step.
                    None => {}
                }
            }
        }

        plain.push(c);
        plain_len += 1;
        i += 1;
    }

    for open in stack.drain(..) {
        warnings.push(Warning {
            kind: WarningKind::Unclosed,
            position: open.tagged_pos,
        });
        if open.plain_start < plain_len {
            spans.push(EntitySpan::new(open.plain_start, plain_len, open.label));
        }
    }

    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    warnings.sort_by_key(|w| w.position);
    debug_assert_eq!(char_len(&plain), plain_len);
    ParsedAnnotation {
        plain_text: plain,
        spans,
        warnings,
    }
}

/// Removes nesting and overlap: outer spans beat contained ones, earlier
/// starts beat later ones, and at equal starts the longer span wins.
pub fn flatten_spans(spans: &[EntitySpan]) -> Vec<EntitySpan> {
    let mut sorted = spans.to_vec();
    sorted.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then(b.end.cmp(&a.end))
            .then(a.label.cmp(&b.label))
    });
    let mut out: Vec<EntitySpan> = Vec::with_capacity(sorted.len());
    for span in sorted {
        if out.last().is_none_or(|last| span.start >= last.end) {
            out.push(span);
        }
    }
    out
}
