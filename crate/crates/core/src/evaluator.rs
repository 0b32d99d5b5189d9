//! Entity-level scoring of predicted spans against gold spans.
//!
//! Pairing is greedy and in order: each prediction takes the first unpaired
//! gold span it overlaps. Pages are aggregated as macro means with sample
//! standard deviation and as pooled micro counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::span::{EntitySpan, Label};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("gold spans {a} and {b} overlap")]
    OverlappingGold { a: EntitySpan, b: EntitySpan },
    #[error("cannot aggregate zero pages")]
    NoPages,
    #[error("impact undefined for reference mean {0}")]
    ZeroReference(f64),
    #[error("document ids differ: only in gold {only_gold:?}, only in predictions {only_pred:?}")]
    IdMismatch {
        only_gold: Vec<String>,
        only_pred: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EntType,
    Strict,
    Exact,
    Partial,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::EntType, Scheme::Strict, Scheme::Exact, Scheme::Partial];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::EntType => "ent_type",
            Scheme::Strict => "strict",
            Scheme::Exact => "exact",
            Scheme::Partial => "partial",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scheme `{s}` (expected ent_type, strict, exact or partial)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub cor: usize,
    pub inc: usize,
    pub par: usize,
    pub mis: usize,
    pub spu: usize,
}

impl MatchCounts {
    /// Gold spans: COR + INC + PAR + MIS.
    pub fn possible(&self) -> usize {
        self.cor + self.inc + self.par + self.mis
    }

    /// Predicted spans: COR + INC + PAR + SPU.
    pub fn actual(&self) -> usize {
        self.cor + self.inc + self.par + self.spu
    }

    pub fn add(&mut self, other: &MatchCounts) {
        self.cor += other.cor;
        self.inc += other.inc;
        self.par += other.par;
        self.mis += other.mis;
        self.spu += other.spu;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), |mut acc, c| {
            acc.add(&c);
            acc
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn get(&self, which: Metric) -> f64 {
        match which {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Precision, Metric::Recall, Metric::F1];
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

pub fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn metrics_of(counts: &MatchCounts, scheme: Scheme) -> Metrics {
    let hits = match scheme {
        Scheme::Partial => counts.cor as f64 + 0.5 * counts.par as f64,
        _ => counts.cor as f64,
    };
    let precision = ratio(hits, counts.actual());
    let recall = ratio(hits, counts.possible());
    Metrics {
        precision,
        recall,
        f1: f1_of(precision, recall),
    }
}

fn check_gold(gold: &[EntitySpan]) -> Result<(), EvalError> {
    let mut sorted: Vec<&EntitySpan> = gold.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[0].overlaps(w[1]) {
            return Err(EvalError::OverlappingGold { a: *w[0], b: *w[1] });
        }
    }
    Ok(())
}

/// Stable, and blind to labels so relabeling cannot change the pairing.
fn sorted(spans: &[EntitySpan]) -> Vec<EntitySpan> {
    let mut v = spans.to_vec();
    v.sort_by_key(|s| (s.start, s.end));
    v
}

/// Pairs predictions with gold spans and counts outcomes under `scheme`.
pub fn match_page(pred: &[EntitySpan], gold: &[EntitySpan], scheme: Scheme) -> Result<MatchCounts, EvalError> {
    check_gold(gold)?;
    let pred = sorted(pred);
    let gold = sorted(gold);
    let mut paired = vec![false; gold.len()];
    let mut counts = MatchCounts::default();
    for p in &pred {
        let Some(gi) = (0..gold.len()).find(|&i| !paired[i] && p.overlaps(&gold[i])) else {
            counts.spu += 1;
            continue;
        };
        paired[gi] = true;
        let g = &gold[gi];
        let same_bounds = p.same_boundaries(g);
        let same_label = p.label == g.label;
        match scheme {
            Scheme::EntType if same_label => counts.cor += 1,
            Scheme::Strict if same_label && same_bounds => counts.cor += 1,
            Scheme::Exact if same_bounds => counts.cor += 1,
            Scheme::Partial if same_bounds => counts.cor += 1,
            Scheme::Partial => counts.par += 1,
            _ => counts.inc += 1,
        }
    }
    counts.mis = paired.iter().filter(|p| !**p).count();
    Ok(counts)
}

/// Counts for one page, overall and restricted to each label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PageScore {
    pub counts: MatchCounts,
    pub per_label: BTreeMap<Label, MatchCounts>,
}

pub fn score_page(pred: &[EntitySpan], gold: &[EntitySpan], scheme: Scheme) -> Result<PageScore, EvalError> {
    let counts = match_page(pred, gold, scheme)?;
    let mut per_label = BTreeMap::new();
    for label in Label::ALL {
        let only = |spans: &[EntitySpan]| -> Vec<EntitySpan> {
            spans.iter().filter(|s| s.label == label).copied().collect()
        };
        per_label.insert(label, match_page(&only(pred), &only(gold), scheme)?);
    }
    Ok(PageScore { counts, per_label })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stdev: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation; a single value has stdev 0.
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stdev = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, stdev }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

impl MacroMetrics {
    pub fn get(&self, which: Metric) -> MeanStd {
        match which {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub scheme: Scheme,
    pub pages: usize,
    #[serde(rename = "macro")]
    pub macro_: MacroMetrics,
    pub micro: Metrics,
    pub counts: MatchCounts,
    pub per_page: BTreeMap<String, Metrics>,
    pub per_label: BTreeMap<Label, Metrics>,
}

pub fn aggregate(pages: &BTreeMap<String, PageScore>, scheme: Scheme) -> Result<AggregateMetrics, EvalError> {
    if pages.is_empty() {
        return Err(EvalError::NoPages);
    }
    let per_page: BTreeMap<String, Metrics> = pages
        .iter()
        .map(|(id, p)| (id.clone(), metrics_of(&p.counts, scheme)))
        .collect();
    let column = |m: Metric| MeanStd::of(&per_page.values().map(|x| x.get(m)).collect::<Vec<_>>());
    let counts: MatchCounts = pages.values().map(|p| p.counts).sum();
    let per_label = Label::ALL
        .into_iter()
        .map(|label| {
            let pooled: MatchCounts = pages
                .values()
                .map(|p| p.per_label.get(&label).copied().unwrap_or_default())
                .sum();
            (label, metrics_of(&pooled, scheme))
        })
        .collect();
    Ok(AggregateMetrics {
        scheme,
        pages: pages.len(),
        macro_: MacroMetrics {
            precision: column(Metric::Precision),
            recall: column(Metric::Recall),
            f1: column(Metric::F1),
        },
        micro: metrics_of(&counts, scheme),
        counts,
        per_page,
        per_label,
    })
}

/// Scores every gold document against its predictions; both sides must cover the same ids.
pub fn score_predictions(
    gold: &BTreeMap<String, Vec<EntitySpan>>,
    pred: &BTreeMap<String, Vec<EntitySpan>>,
    scheme: Scheme,
) -> Result<BTreeMap<String, PageScore>, EvalError> {
    let only_gold: Vec<String> = gold.keys().filter(|k| !pred.contains_key(*k)).cloned().collect();
    let only_pred: Vec<String> = pred.keys().filter(|k| !gold.contains_key(*k)).cloned().collect();
    if !only_gold.is_empty() || !only_pred.is_empty() {
        return Err(EvalError::IdMismatch { only_gold, only_pred });
    }
    let ids: Vec<&String> = gold.keys().collect();
    let scored = crate::par::map(&ids, |id| score_page(&pred[*id], &gold[*id], scheme));
    ids.into_iter()
        .zip(scored)
        .map(|(id, s)| s.map(|s| (id.clone(), s)))
        .collect()
}

/// Relative change of `row` against `reference`, in percent.
pub fn impact(row: f64, reference: f64) -> Result<f64, EvalError> {
    if reference <= 0.0 || !reference.is_finite() {
        return Err(EvalError::ZeroReference(reference));
    }
    Ok((row - reference) / reference * 100.0)
}

/// `+2.22 %`, `-6.90 %`, `+0.00 %`.
pub fn format_impact(pct: f64) -> String {
    let rounded = (pct * 100.0).round() / 100.0;
    if rounded < 0.0 {
        format!("-{:.2} %", -rounded)
    } else {
        format!("+{:.2} %", rounded.abs())
    }
}

/// `0.87 ±0.05`.
pub fn format_mean_std(m: &MeanStd) -> String {
    format!("{:.2} ±{:.2}", m.mean, m.stdev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    fn s(start: usize, end: usize, label: Label) -> EntitySpan {
        EntitySpan::new(start, end, label)
    }

    fn counts(cor: usize, inc: usize, par: usize, mis: usize, spu: usize) -> MatchCounts {
        MatchCounts { cor, inc, par, mis, spu }
    }

    #[test]
    fn identity_is_correct() {
        let c = match_page(&[s(10, 14, Per)], &[s(10, 14, Per)], Scheme::EntType).unwrap();
        assert_eq!(c, counts(1, 0, 0, 0, 0));
    }

    #[test]
    fn wrong_label_is_incorrect() {
        let c = match_page(&[s(8, 14, Loc)], &[s(10, 14, Per)], Scheme::EntType).unwrap();
        assert_eq!(c, counts(0, 1, 0, 0, 0));
    }

    #[test]
    fn mixed_page_fixture() {
        let pred = [s(0, 5, Per), s(20, 25, Loc), s(40, 45, Org), s(60, 61, Loc)];
        let gold = [s(1, 4, Per), s(20, 25, Loc), s(40, 45, Per), s(70, 75, Org)];
        let c = match_page(&pred, &gold, Scheme::EntType).unwrap();
        assert_eq!(c, counts(2, 1, 0, 1, 1));
        let m = metrics_of(&c, Scheme::EntType);
        assert_eq!((m.precision, m.recall), (0.5, 0.5));
    }

    #[test]
    fn schemes_disagree_on_boundaries() {
        let pred = [s(0, 5, Per), s(10, 15, Loc)];
        let gold = [s(1, 5, Per), s(10, 15, Per)];
        assert_eq!(match_page(&pred, &gold, Scheme::EntType).unwrap(), counts(1, 1, 0, 0, 0));
        assert_eq!(match_page(&pred, &gold, Scheme::Strict).unwrap(), counts(0, 2, 0, 0, 0));
        assert_eq!(match_page(&pred, &gold, Scheme::Exact).unwrap(), counts(1, 1, 0, 0, 0));
        let partial = match_page(&pred, &gold, Scheme::Partial).unwrap();
        assert_eq!(partial, counts(1, 0, 1, 0, 0));
        assert_eq!(metrics_of(&partial, Scheme::Partial).recall, 0.75);
    }

    #[test]
    fn two_predictions_on_one_gold() {
        let c = match_page(&[s(0, 3, Per), s(3, 6, Per)], &[s(0, 6, Per)], Scheme::EntType).unwrap();
        assert_eq!(c, counts(1, 0, 0, 0, 1));
    }

    #[test]
    fn overlapping_gold_is_rejected() {
        assert!(matches!(
            match_page(&[], &[s(0, 5, Per), s(4, 8, Loc)], Scheme::EntType),
            Err(EvalError::OverlappingGold { .. })
        ));
    }

    #[test]
    fn metric_arithmetic() {
        let m = metrics_of(&counts(3, 1, 0, 1, 1), Scheme::EntType);
        assert!((m.precision - 0.6).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.f1 - 0.6).abs() < 1e-12);
        assert_eq!(metrics_of(&MatchCounts::default(), Scheme::EntType), Metrics::default());
        let one = metrics_of(&counts(1, 0, 0, 0, 0), Scheme::EntType);
        assert_eq!((one.precision, one.recall, one.f1), (1.0, 1.0, 1.0));
    }

    fn page(c: MatchCounts) -> PageScore {
        PageScore {
            counts: c,
            per_label: BTreeMap::new(),
        }
    }

    #[test]
    fn two_point_stdev() {
        let pages = BTreeMap::from([
            ("a".to_string(), page(counts(1, 0, 0, 0, 0))),
            ("b".to_string(), page(counts(0, 0, 0, 1, 1))),
        ]);
        let agg = aggregate(&pages, Scheme::EntType).unwrap();
        assert_eq!(agg.macro_.f1.mean, 0.5);
        assert!((agg.macro_.f1.stdev - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn identical_pages_have_zero_spread() {
        let pages: BTreeMap<String, PageScore> =
            (0..4).map(|i| (i.to_string(), page(counts(3, 1, 0, 1, 1)))).collect();
        let agg = aggregate(&pages, Scheme::EntType).unwrap();
        assert_eq!(agg.macro_.recall.stdev, 0.0);
        assert!(aggregate(&BTreeMap::new(), Scheme::EntType).is_err());
    }

    #[test]
    fn single_page_stdev_is_zero() {
        assert_eq!(MeanStd::of(&[0.7]), MeanStd { mean: 0.7, stdev: 0.0 });
    }

    #[test]
    fn per_label_restricts_pairing() {
        let gold = [s(0, 5, Per), s(10, 15, Loc)];
        let pred = [s(0, 5, Loc), s(10, 15, Loc)];
        let score = score_page(&pred, &gold, Scheme::EntType).unwrap();
        assert_eq!(score.per_label[&Per], counts(0, 0, 0, 1, 0));
        assert_eq!(score.per_label[&Loc], counts(1, 0, 0, 0, 1));
        assert_eq!(score.per_label[&Org], MatchCounts::default());
    }

    #[test]
    fn impact_values() {
        assert_eq!(format_impact(impact(0.84, 0.84).unwrap()), "+0.00 %");
        assert_eq!(format_impact(impact(0.81, 0.87).unwrap()), "-6.90 %");
        assert_eq!(format_impact(impact(0.92, 0.90).unwrap()), "+2.22 %");
        assert!(impact(0.5, 0.0).is_err());
        assert_eq!(format_impact(-0.001), "+0.00 %");
    }

    #[test]
    fn id_mismatch_lists_both_sides() {
        let gold = BTreeMap::from([("a".to_string(), vec![]), ("b".to_string(), vec![])]);
        let pred = BTreeMap::from([("b".to_string(), vec![]), ("c".to_string(), vec![])]);
        match score_predictions(&gold, &pred, Scheme::EntType) {
            Err(EvalError::IdMismatch { only_gold, only_pred }) => {
                assert_eq!(only_gold, vec!["a"]);
                assert_eq!(only_pred, vec!["c"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scheme_names() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("lenient".parse::<Scheme>().is_err());
    }
}
