//! Entity labels and character-offset spans shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The annotation tagset: persons, locations and (incorporated) organisations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "LOC")]
    Loc,
    #[serde(rename = "ORG")]
    Org,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Per, Label::Loc, Label::Org];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Per => "PER",
            Label::Loc => "LOC",
            Label::Org => "ORG",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}` (expected PER, LOC or ORG)")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PER" => Ok(Label::Per),
            "LOC" => Ok(Label::Loc),
            "ORG" => Ok(Label::Org),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

/// Ordered set of labels active for one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<Label>);

impl LabelSet {
    /// Deduplicates while keeping first-seen order.
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut out = Vec::new();
        for label in labels {
            if !out.contains(&label) {
                out.push(label);
            }
        }
        LabelSet(out)
    }

    pub fn contains(&self, label: Label) -> bool {
        self.0.contains(&label)
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Resolves a tag name against this set.
    pub fn lookup(&self, name: &str) -> Option<Label> {
        name.parse::<Label>().ok().filter(|l| self.contains(*l))
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet(Label::ALL.to_vec())
    }
}

/// A labelled half-open interval `[start, end)` counted in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: Label) -> Self {
        EntitySpan { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn same_boundaries(&self, other: &EntitySpan) -> bool {
        self.start == other.start && self.end == other.end
    }

    /// Shifts the span left by `offset` characters.
    pub fn rebased(&self, offset: usize) -> EntitySpan {
        EntitySpan::new(self.start - offset, self.end - offset, self.label)
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@[{},{})", self.label, self.start, self.end)
    }
}

/// Character-indexed view of a string, so spans can be sliced by scalar offset.
#[derive(Debug, Clone)]
pub struct CharText {
    chars: Vec<char>,
}

impl CharText {
    pub fn new(text: &str) -> Self {
        CharText {
            chars: text.chars().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn slice(&self, start: usize, end: usize) -> String {
        self.chars[start..end].iter().collect()
    }
}

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}
