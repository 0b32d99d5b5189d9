//! Locating model-generated span strings in the source page.
//!
//! The model is asked to repeat the page verbatim but occasionally fixes
//! spelling or hyphenation, so each span is searched for with a Levenshtein
//! budget of one edit per five characters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::span::{CharText, EntitySpan};
use crate::tagspan::ParsedAnnotation;

/// Extra characters searched on each side of the expected position.
pub const DEFAULT_WINDOW_SLACK: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroundingError {
    #[error("cannot search for an empty pattern")]
    EmptyPattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FuzzyMatch {
    pub start: usize,
    pub end: usize,
    pub dist: usize,
}

impl FuzzyMatch {
    fn len(&self) -> usize {
        self.end - self.start
    }
}

/// Edit budget for a generated span: one error per five characters.
pub fn max_dist_for(span_text: &str) -> usize {
    span_text.chars().count() / 5
}

/// Plain Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Finds approximate occurrences of `pattern` in `text` within `max_dist` edits.
///
/// Every non-empty substring whose length is within `max_dist` of the pattern
/// length and whose distance is at most `max_dist` is a candidate. Candidates
/// are accepted greedily in order of (distance, start, |length - pattern
/// length|, length), skipping any that overlap an accepted match. The result
/// is sorted by start.
pub fn find_near_matches(
    pattern: &str,
    text: &str,
    max_dist: usize,
) -> Result<Vec<FuzzyMatch>, GroundingError> {
    let pattern: Vec<char> = pattern.chars().collect();
    let text: Vec<char> = text.chars().collect();
    find_near_matches_chars(&pattern, &text, max_dist)
}

pub fn find_near_matches_chars(
    pattern: &[char],
    text: &[char],
    max_dist: usize,
) -> Result<Vec<FuzzyMatch>, GroundingError> {
    if pattern.is_empty() {
        return Err(GroundingError::EmptyPattern);
    }
    let candidates = candidates(pattern, text, max_dist);
    Ok(select_non_overlapping(candidates, pattern.len()))
}

/// Semi-global pass: best distance of the pattern against any substring ending at each position.
fn best_distance_per_end(pattern: &[char], text: &[char]) -> Vec<usize> {
    let m = pattern.len();
    let mut col: Vec<usize> = (0..=m).collect();
    let mut out = Vec::with_capacity(text.len() + 1);
    out.push(col[m]);
    for &t in text {
        let mut diag = col[0];
        col[0] = 0;
        for p in 1..=m {
            let up = col[p];
            let sub = diag + usize::from(pattern[p - 1] != t);
            col[p] = sub.min(up + 1).min(col[p - 1] + 1);
            diag = up;
        }
        out.push(col[m]);
    }
    out
}

fn candidates(pattern: &[char], text: &[char], max_dist: usize) -> Vec<FuzzyMatch> {
    let m = pattern.len();
    let min_len = m.saturating_sub(max_dist).max(1);
    let max_len = m + max_dist;
    let best = best_distance_per_end(pattern, text);
    let rev_pattern: Vec<char> = pattern.iter().rev().copied().collect();

    let mut out = Vec::new();
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    for end in 1..=text.len() {
        if best[end] > max_dist {
            continue;
        }
        // Extend the substring leftwards from `end`, one character per step.
        for (p, v) in prev.iter_mut().enumerate() {
            *v = p;
        }
        for len in 1..=max_len.min(end) {
            let t = text[end - len];
            cur[0] = len;
            let mut col_min = cur[0];
            for p in 1..=m {
                let sub = prev[p - 1] + usize::from(rev_pattern[p - 1] != t);
                cur[p] = sub.min(prev[p] + 1).min(cur[p - 1] + 1);
                col_min = col_min.min(cur[p]);
            }
            if len >= min_len && cur[m] <= max_dist {
                out.push(FuzzyMatch {
                    start: end - len,
                    end,
                    dist: cur[m],
                });
            }
            std::mem::swap(&mut prev, &mut cur);
            if col_min > max_dist {
                break;
            }
        }
    }
    out
}

fn select_non_overlapping(mut candidates: Vec<FuzzyMatch>, pattern_len: usize) -> Vec<FuzzyMatch> {
    candidates.sort_by_key(|c| (c.dist, c.start, c.len().abs_diff(pattern_len), c.len()));
    // Accepted matches are disjoint, keyed by start.
    let mut accepted: BTreeMap<usize, FuzzyMatch> = BTreeMap::new();
    for cand in candidates {
        let clash = accepted
            .range(..cand.end)
            .next_back()
            .is_some_and(|(_, m)| m.end > cand.start);
        if !clash {
            accepted.insert(cand.start, cand);
        }
    }
    accepted.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedSpan {
    /// Span over the source document.
    pub span: EntitySpan,
    pub dist: usize,
    /// Start offset of the span in the parsed model output.
    pub origin: usize,
    /// True when the local window had no match and the whole page was searched.
    pub global_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingFailure {
    /// Span over the parsed model output.
    pub span: EntitySpan,
    pub text: String,
    pub max_dist: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingOutcome {
    pub grounded: Vec<GroundedSpan>,
    pub failures: Vec<GroundingFailure>,
}

impl GroundingOutcome {
    /// Share of spans that could not be grounded; 0 when there were none.
    pub fn failure_rate(&self) -> f64 {
        let total = self.grounded.len() + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.failures.len() as f64 / total as f64
        }
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        self.grounded.iter().map(|g| g.span).collect()
    }
}

/// Grounds every parsed span in `source` with the default window slack.
pub fn ground_all(parsed: &ParsedAnnotation, source: &Document) -> GroundingOutcome {
    ground_all_with(parsed, &source.text, DEFAULT_WINDOW_SLACK)
}

/// Grounds spans in order of appearance.
///
/// Each span is first looked for near where it is expected: the previous
/// grounded end plus the gap separating the two spans in the model output.
/// The window reaches `span length + slack` characters on either side, but
/// never left of the previous grounded start. Within the window the
/// lowest distance wins, then the start closest to the expected offset. If
/// the window has no match the whole page is searched (lowest distance, then
/// earliest start).
pub fn ground_all_with(parsed: &ParsedAnnotation, source: &str, slack: usize) -> GroundingOutcome {
    let plain = CharText::new(&parsed.plain_text);
    let source = CharText::new(source);
    let n = source.len();

    let mut spans = parsed.spans.clone();
    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));

    let mut outcome = GroundingOutcome::default();
    // (grounded start, grounded end, plain end) of the last success
    let mut prev: Option<(usize, usize, usize)> = None;

    for span in spans {
        if span.end > plain.len() || span.is_empty() {
            continue;
        }
        let pattern = &plain.chars()[span.start..span.end];
        let text: String = pattern.iter().collect();
        let max_dist = max_dist_for(&text);
        let len = pattern.len();

        let (expected, floor) = match prev {
            None => (span.start as i64, 0),
            Some((g_start, g_end, p_end)) => {
                (g_end as i64 + span.start as i64 - p_end as i64, g_start)
            }
        };
        let expected = expected.clamp(0, n as i64) as usize;
        let reach = len + slack;
        let lo = expected.saturating_sub(reach).max(floor).min(n);
        let hi = (expected + len + reach).min(n);

        let local = find_near_matches_chars(pattern, &source.chars()[lo..hi], max_dist)
            .expect("span pattern is non-empty")
            .into_iter()
            .map(|m| FuzzyMatch {
                start: m.start + lo,
                end: m.end + lo,
                dist: m.dist,
            })
            .min_by_key(|m| (m.dist, m.start.abs_diff(expected), m.start));

        let (found, global_fallback) = match local {
            Some(m) => (Some(m), false),
            None => {
                let global = find_near_matches_chars(pattern, source.chars(), max_dist)
                    .expect("span pattern is non-empty")
                    .into_iter()
                    .min_by_key(|m| (m.dist, m.start));
                (global, true)
            }
        };

        match found {
            Some(m) => {
                outcome.grounded.push(GroundedSpan {
                    span: EntitySpan::new(m.start, m.end, span.label),
                    dist: m.dist,
                    origin: span.start,
                    global_fallback,
                });
                prev = Some((m.start, m.end, span.end));
            }
            None => outcome.failures.push(GroundingFailure {
                span,
                text,
                max_dist,
            }),
        }
    }
    outcome
}
