use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{read_records, CorpusError, GoldCorpus, Record};
use crate::span::{char_len, EntitySpan, Label};
use crate::tagspan::flatten_spans;

/// Predictions from an external tagger, restricted to the known labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselinePredictions {
    pub spans: BTreeMap<String, Vec<EntitySpan>>,
    /// Spans dropped per foreign label, e.g. `MISC`.
    pub dropped: BTreeMap<String, usize>,
}

impl BaselinePredictions {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Reads a prediction file and checks it against `gold`.
///
/// Documents missing from the file are treated as having no predictions.
pub fn ingest_baseline(path: &Path, gold: &GoldCorpus) -> Result<BaselinePredictions, HarnessError> {
    ingest_records(read_records(path)?, gold)
}

pub fn ingest_records(records: Vec<Record>, gold: &GoldCorpus) -> Result<BaselinePredictions, HarnessError> {
    let unknown: Vec<String> = records
        .iter()
        .filter(|r| gold.document(&r.id).is_none())
        .map(|r| r.id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(HarnessError::UnknownIds(unknown));
    }

    let mut out = BaselinePredictions::default();
    for record in records {
        let doc = gold.document(&record.id).expect("checked above");
        if out.spans.contains_key(&record.id) {
            return Err(CorpusError::DuplicateId(record.id).into());
        }
        if !record.text.is_empty() && record.text != doc.text {
            return Err(CorpusError::Invalid {
                id: record.id,
                message: "prediction text differs from the gold page text".into(),
            }
            .into());
        }
        let len = char_len(&doc.text);
        let mut spans = Vec::with_capacity(record.spans.len());
        for s in &record.spans {
            let Ok(label) = s.label.parse::<Label>() else {
                *out.dropped.entry(s.label.clone()).or_default() += 1;
                continue;
            };
            if s.start >= s.end || s.end > len {
                return Err(CorpusError::Invalid {
                    id: record.id.clone(),
                    message: format!(
                        "line {}: span [{},{}) is outside the page (length {len})",
                        record.line, s.start, s.end
                    ),
                }
                .into());
            }
            spans.push(EntitySpan::new(s.start, s.end, label));
        }
        out.spans.insert(record.id, flatten_spans(&spans));
    }
    for id in gold.ids() {
        out.spans.entry(id).or_default();
    }
    let dropped = out.dropped_total();
    if dropped > 0 {
        log::info!("dropped {dropped} spans with foreign labels: {:?}", out.dropped);
    }
    Ok(out)
}
