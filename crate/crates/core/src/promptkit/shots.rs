//! Few-shot examples and class-balanced subset selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::corpus::Excerpt;
use crate::span::{EntitySpan, Label};
use crate::tagspan::{parse_tagged, render_tagged};

/// Number of annotated excerpts every shot subset is drawn from.
pub const POOL_SIZE: usize = 32;

pub const ALLOWED_SHOTS: [usize; 7] = [0, 1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotExample {
    pub input_text: String,
    pub tagged_output: String,
    pub label_histogram: BTreeMap<Label, usize>,
}

impl ShotExample {
    pub fn new(input_text: &str, spans: &[EntitySpan]) -> Result<Self, PromptError> {
        let tagged = render_tagged(input_text, spans)?;
        Self::from_tagged(input_text, tagged)
    }

    /// Accepts a hand-written tagged output if it parses cleanly back to `input_text`.
    pub fn from_tagged(input_text: &str, tagged_output: String) -> Result<Self, PromptError> {
        let parsed = parse_tagged(&tagged_output);
        if !parsed.is_clean() || parsed.plain_text != input_text {
            return Err(PromptError::UncleanExample {
                excerpt: input_text.chars().take(40).collect(),
            });
        }
        let mut label_histogram = BTreeMap::new();
        for span in &parsed.spans {
            *label_histogram.entry(span.label).or_insert(0) += 1;
        }
        Ok(ShotExample {
            input_text: input_text.to_string(),
            tagged_output,
            label_histogram,
        })
    }

    /// Most frequent label; ties go to the earlier label in PER, LOC, ORG order.
    pub fn dominant_label(&self) -> Option<Label> {
        let mut best: Option<(Label, usize)> = None;
        for label in Label::ALL {
            let count = self.label_histogram.get(&label).copied().unwrap_or(0);
            if count > 0 && best.is_none_or(|(_, c)| count > c) {
                best = Some((label, count));
            }
        }
        best.map(|(l, _)| l)
    }
}

impl TryFrom<&Excerpt> for ShotExample {
    type Error = PromptError;

    fn try_from(excerpt: &Excerpt) -> Result<Self, Self::Error> {
        ShotExample::new(&excerpt.text, &excerpt.spans)
    }
}

/// Mixes seed and shot count so every `n` gets an independent draw.
fn subset_seed(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Picks `n` examples from a 32-example pool.
///
/// `n = 32` returns the pool unchanged and `n = 0` returns nothing. Otherwise
/// examples are grouped by dominant label, each group is shuffled, and groups
/// are visited round-robin (in a shuffled label order) until `n` are taken.
/// Examples without entities are used only once the labelled groups run dry.
/// The selection is returned in pool order.
pub fn select_shots(pool: &[ShotExample], n: usize, seed: u64) -> Result<Vec<ShotExample>, PromptError> {
    if pool.len() != POOL_SIZE {
        return Err(PromptError::PoolSize(pool.len()));
    }
    if !ALLOWED_SHOTS.contains(&n) {
        return Err(PromptError::InvalidShots(n));
    }
    if n == POOL_SIZE {
        return Ok(pool.to_vec());
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(subset_seed(seed, n));
    let mut buckets: BTreeMap<Option<Label>, Vec<usize>> = BTreeMap::new();
    for (idx, ex) in pool.iter().enumerate() {
        buckets.entry(ex.dominant_label()).or_default().push(idx);
    }
    for bucket in buckets.values_mut() {
        bucket.shuffle(&mut rng);
    }
    let mut order = Label::ALL.to_vec();
    order.shuffle(&mut rng);

    let mut picked = Vec::with_capacity(n);
    let mut cursors: BTreeMap<Option<Label>, usize> = BTreeMap::new();
    'fill: while picked.len() < n {
        let mut progressed = false;
        for label in &order {
            let key = Some(*label);
            let Some(bucket) = buckets.get(&key) else { continue };
            let cursor = cursors.entry(key).or_insert(0);
            if *cursor < bucket.len() {
                picked.push(bucket[*cursor]);
                *cursor += 1;
                progressed = true;
                if picked.len() == n {
                    break 'fill;
                }
            }
        }
        if !progressed {
            let rest = buckets.get(&None).map(Vec::as_slice).unwrap_or(&[]);
            picked.extend(rest.iter().take(n - picked.len()));
            break;
        }
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}
