//! End-to-end experiment runs and result tables.

mod baseline;
mod report;
mod spec;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use baseline::{ingest_baseline, ingest_records, BaselinePredictions};
pub use report::{emit_report, ReportFormat};
pub use spec::{BaselineSpec, ExperimentSpec, PoolSpec, RowSpec};

use crate::corpus::{load_gold, preprocess, read_records, split_examples_pool, CorpusError, Document, GoldCorpus};
use crate::evaluator::{
    aggregate, impact, score_predictions, AggregateMetrics, EvalError, Metric, Metrics, PageScore, Scheme,
};
use crate::gateway::{ChatBackend, ChatRequest, Gateway, GatewayError, HttpBackend, NoCredentials, RunMode};
use crate::grounding::ground_all;
use crate::promptkit::{
    build_prompt_with, select_shots, Language, PromptConfig, PromptError, ShotExample, Templates, POOL_SIZE,
};
use crate::span::EntitySpan;
use crate::tagspan::{flatten_spans, parse_tagged_with, ParsedAnnotation};

/// Pages whose grounding failure rate exceeds this mark their row as degenerate.
pub const DEGENERATE_FAILURE_RATE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown document ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Prompt,
    Baseline,
}

/// One metric column: pagewise mean and spread, and impact against the reference row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: f64,
    pub stdev: f64,
    /// Percent change against the reference row; absent when the reference mean is 0.
    pub impact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub kind: RowKind,
    pub language: Option<Language>,
    pub shots: Option<usize>,
    pub pages: usize,
    /// Pages left out because the response was truncated.
    pub excluded: usize,
    pub recall: MetricCell,
    pub precision: MetricCell,
    pub f1: MetricCell,
    pub micro: Metrics,
    pub grounding_failures: usize,
    pub degenerate: bool,
    /// Spans dropped from baseline predictions per foreign label.
    pub dropped: BTreeMap<String, usize>,
}

impl TableRow {
    pub fn cell(&self, metric: Metric) -> &MetricCell {
        match metric {
            Metric::Precision => &self.precision,
            Metric::Recall => &self.recall,
            Metric::F1 => &self.f1,
        }
    }

    fn cell_mut(&mut self, metric: Metric) -> &mut MetricCell {
        match metric {
            Metric::Precision => &mut self.precision,
            Metric::Recall => &mut self.recall,
            Metric::F1 => &mut self.f1,
        }
    }

    pub fn flags(&self) -> Vec<&'static str> {
        let mut flags = Vec::new();
        if self.degenerate {
            flags.push("degenerate");
        }
        if self.pages == 0 {
            flags.push("no pages");
        }
        flags
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub name: String,
    pub scheme: Scheme,
    pub reference_row: String,
    pub rows: Vec<TableRow>,
    /// Baseline rows.
    pub footer: Vec<TableRow>,
}

impl ResultsTable {
    pub fn all_rows(&self) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().chain(&self.footer)
    }

    pub fn row(&self, name: &str) -> Option<&TableRow> {
        self.all_rows().find(|r| r.name == name)
    }
}

/// Where one page's response came from and what happened to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub row: String,
    pub doc_id: String,
    pub cache_key: String,
    pub truncated: bool,
    pub parse_warnings: usize,
    pub grounded: usize,
    pub grounding_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub table: ResultsTable,
    pub transcripts: Vec<TranscriptEntry>,
    /// Grounded predictions per row and document, for inspection.
    #[serde(skip)]
    pub predictions: BTreeMap<String, BTreeMap<String, Vec<EntitySpan>>>,
}

/// Result of annotating one page.
#[derive(Debug, Clone, PartialEq)]
pub struct PageAnnotation {
    pub doc_id: String,
    pub cache_key: String,
    pub truncated: bool,
    pub parsed: ParsedAnnotation,
    pub spans: Vec<EntitySpan>,
    pub grounding_failures: usize,
    pub failure_rate: f64,
}

impl PageAnnotation {
    pub fn is_degenerate(&self) -> bool {
        self.failure_rate > DEGENERATE_FAILURE_RATE
    }
}

/// Everything needed to turn pages into prompts for one configuration.
pub struct Annotator<'a> {
    pub config: &'a PromptConfig,
    pub templates: &'a Templates,
    pub shots: &'a [ShotExample],
    pub model: &'a crate::gateway::ModelParams,
    pub jobs: usize,
}

impl Annotator<'_> {
    pub fn requests(&self, pages: &[&Document]) -> Result<Vec<ChatRequest>, HarnessError> {
        pages
            .iter()
            .map(|doc| {
                let bundle = build_prompt_with(self.templates, self.config, self.shots, &doc.text)?;
                Ok(ChatRequest::from_bundle(&bundle, self.model))
            })
            .collect()
    }

    /// Prompts, completes, parses and grounds every page. Output follows input order.
    pub fn annotate(&self, gateway: &Gateway, pages: &[&Document]) -> Result<Vec<PageAnnotation>, HarnessError> {
        let requests = self.requests(pages)?;
        let mut transcripts = Vec::with_capacity(pages.len());
        for t in gateway.complete_all(&requests, self.jobs) {
            transcripts.push(t?);
        }
        let items: Vec<_> = pages.iter().zip(&transcripts).collect();
        Ok(crate::par::map(&items, |(doc, t)| {
            let mut parsed = parse_tagged_with(&t.response_text, &self.config.labels);
            parsed.spans = flatten_spans(&parsed.spans);
            let outcome = ground_all(&parsed, doc);
            PageAnnotation {
                doc_id: doc.id.clone(),
                cache_key: t.cache_key.clone(),
                truncated: t.is_truncated(),
                spans: flatten_spans(&outcome.spans()),
                grounding_failures: outcome.failures.len(),
                failure_rate: outcome.failure_rate(),
                parsed,
            }
        }))
    }
}

/// Builds the backend for `mode`: HTTP when credentials are present, otherwise
/// one that reports the missing variable on first use.
pub fn default_backend(mode: RunMode, endpoint: &str) -> Arc<dyn ChatBackend> {
    if mode == RunMode::ReplayStrict {
        return Arc::new(NoCredentials);
    }
    match HttpBackend::from_env(endpoint) {
        Ok(http) => Arc::new(http),
        Err(_) => Arc::new(NoCredentials),
    }
}

pub fn gateway_for(spec: &ExperimentSpec, backend: Arc<dyn ChatBackend>) -> Result<Gateway, HarnessError> {
    Ok(Gateway::new(backend, spec.mode, spec.cache_dir.clone())?)
}

/// Loads the pages to annotate, checking each against the gold file.
pub fn load_pages(spec: &ExperimentSpec, gold: &GoldCorpus) -> Result<Vec<Document>, HarnessError> {
    let Some(path) = &spec.corpus else {
        return Ok(gold.documents.clone());
    };
    let mut docs = Vec::new();
    let mut unknown = Vec::new();
    for record in read_records(path)? {
        let Some(gold_doc) = gold.document(&record.id) else {
            unknown.push(record.id);
            continue;
        };
        if preprocess(&record.text) != gold_doc.text {
            return Err(CorpusError::Invalid {
                id: record.id,
                message: "page text differs from the gold text after preprocessing".into(),
            }
            .into());
        }
        docs.push(gold_doc.clone());
    }
    if !unknown.is_empty() {
        return Err(HarnessError::UnknownIds(unknown));
    }
    Ok(docs)
}

fn load_pool(spec: &ExperimentSpec, pages: &[Document]) -> Result<Option<Vec<ShotExample>>, HarnessError> {
    let Some(pool) = &spec.pool else {
        return Ok(None);
    };
    let source = load_gold(&pool.path)?;
    let eval_ids = pages.iter().map(|d| d.id.clone()).collect();
    let excerpts = split_examples_pool(&source.without(&eval_ids), POOL_SIZE, pool.min_len, pool.max_len, pool.seed)?;
    let examples = excerpts
        .iter()
        .map(ShotExample::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(examples))
}

fn templates_for(spec: &ExperimentSpec, language: Language) -> Result<Templates, HarnessError> {
    Ok(match &spec.templates {
        Some(dir) => Templates::load_dir(language, dir)?,
        None => Templates::builtin(language),
    })
}

fn build_row(
    name: &str,
    kind: RowKind,
    language: Option<Language>,
    shots: Option<usize>,
    metrics: Option<&AggregateMetrics>,
    excluded: usize,
) -> TableRow {
    let cell = |m: Metric| {
        metrics
            .map(|a| MetricCell {
                mean: a.macro_.get(m).mean,
                stdev: a.macro_.get(m).stdev,
                impact: None,
            })
            .unwrap_or_default()
    };
    TableRow {
        name: name.to_string(),
        kind,
        language,
        shots,
        pages: metrics.map_or(0, |a| a.pages),
        excluded,
        recall: cell(Metric::Recall),
        precision: cell(Metric::Precision),
        f1: cell(Metric::F1),
        micro: metrics.map(|a| a.micro).unwrap_or_default(),
        grounding_failures: 0,
        degenerate: false,
        dropped: BTreeMap::new(),
    }
}

fn aggregate_or_empty(
    scores: &BTreeMap<String, PageScore>,
    scheme: Scheme,
) -> Result<Option<AggregateMetrics>, HarnessError> {
    if scores.is_empty() {
        return Ok(None);
    }
    Ok(Some(aggregate(scores, scheme)?))
}

/// Runs every row of `spec` through `gateway` and scores it, then scores the baselines.
pub fn run_experiment(spec: &ExperimentSpec, gateway: &Gateway) -> Result<ExperimentOutput, HarnessError> {
    spec.validate()?;
    let gold = load_gold(&spec.gold)?;
    let pages = load_pages(spec, &gold)?;
    let pool = load_pool(spec, &pages)?;
    let page_refs: Vec<&Document> = pages.iter().collect();
    let gold_spans = |ids: &mut dyn Iterator<Item = &String>| -> BTreeMap<String, Vec<EntitySpan>> {
        ids.map(|id| (id.clone(), gold.spans(id).to_vec())).collect()
    };

    let mut templates: BTreeMap<Language, Templates> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut transcripts = Vec::new();
    let mut predictions = BTreeMap::new();

    for row in spec.all_rows() {
        let config = &row.config;
        if !templates.contains_key(&config.language) {
            templates.insert(config.language, templates_for(spec, config.language)?);
        }
        let shots = match &pool {
            Some(pool) if config.shots > 0 => select_shots(pool, config.shots, config.seed)?,
            _ => Vec::new(),
        };
        let annotator = Annotator {
            config,
            templates: &templates[&config.language],
            shots: &shots,
            model: &spec.model,
            jobs: spec.jobs,
        };
        log::info!("row `{}`: annotating {} pages", row.name, pages.len());
        let annotations = annotator.annotate(gateway, &page_refs)?;

        let mut pred = BTreeMap::new();
        let mut excluded = 0;
        let mut failures = 0;
        let mut degenerate = false;
        for a in &annotations {
            transcripts.push(TranscriptEntry {
                row: row.name.clone(),
                doc_id: a.doc_id.clone(),
                cache_key: a.cache_key.clone(),
                truncated: a.truncated,
                parse_warnings: a.parsed.warnings.len(),
                grounded: a.spans.len(),
                grounding_failures: a.grounding_failures,
            });
            failures += a.grounding_failures;
            degenerate |= a.is_degenerate();
            if a.truncated {
                excluded += 1;
            } else {
                pred.insert(a.doc_id.clone(), a.spans.clone());
            }
        }
        let gold_included = gold_spans(&mut pred.keys());
        let scores = score_predictions(&gold_included, &pred, spec.scheme)?;
        let metrics = aggregate_or_empty(&scores, spec.scheme)?;
        let mut table_row = build_row(
            &row.name,
            RowKind::Prompt,
            Some(config.language),
            Some(config.shots),
            metrics.as_ref(),
            excluded,
        );
        table_row.grounding_failures = failures;
        table_row.degenerate = degenerate;
        if degenerate {
            log::warn!("row `{}` is degenerate", row.name);
        }
        rows.push(table_row);
        predictions.insert(row.name.clone(), pred);
    }

    let mut footer = Vec::new();
    let page_ids: Vec<String> = pages.iter().map(|d| d.id.clone()).collect();
    for b in &spec.baselines {
        let ingested = ingest_baseline(&b.path, &gold)?;
        let pred: BTreeMap<String, Vec<EntitySpan>> = page_ids
            .iter()
            .map(|id| (id.clone(), ingested.spans.get(id).cloned().unwrap_or_default()))
            .collect();
        let scores = score_predictions(&gold_spans(&mut page_ids.iter()), &pred, spec.scheme)?;
        let metrics = aggregate_or_empty(&scores, spec.scheme)?;
        let mut row = build_row(&b.name, RowKind::Baseline, None, None, metrics.as_ref(), 0);
        row.dropped = ingested.dropped;
        footer.push(row);
        predictions.insert(b.name.clone(), pred);
    }

    let reference = rows
        .iter()
        .find(|r| r.name == spec.reference_row)
        .cloned()
        .expect("validated reference row");
    for row in rows.iter_mut().chain(footer.iter_mut()) {
        for m in Metric::ALL {
            let base = reference.cell(m).mean;
            let cell = row.cell_mut(m);
            cell.impact = impact(cell.mean, base).ok();
        }
    }

    Ok(ExperimentOutput {
        table: ResultsTable {
            name: spec.name.clone(),
            scheme: spec.scheme,
            reference_row: spec.reference_row.clone(),
            rows,
            footer,
        },
        transcripts,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::save_gold;
    use crate::gateway::{BackendReply, FinishReason, FnBackend};
    use crate::tagspan::render_tagged;
    use std::path::Path;

    const GOLD: &str = concat!(
        r#"{"text":"Goethe wohnte in Weimar.","spans":[{"start":0,"end":6,"label":"PER"},{"start":17,"end":23,"label":"LOC"}],"meta":{"id":"p1"}}"#,
        "\n",
        r#"{"text":"Das Hotel Adlon liegt in Berlin.","spans":[{"start":4,"end":15,"label":"ORG"},{"start":25,"end":31,"label":"LOC"}],"meta":{"id":"p2"}}"#,
        "\n",
        r#"{"text":"Nichts zu sehen.","meta":{"id":"p3"}}"#,
        "\n"
    );

    fn write_spec(dir: &Path, extra: &str) -> ExperimentSpec {
        std::fs::write(dir.join("gold.jsonl"), GOLD).unwrap();
        let spec = format!(
            r#"
name = "fixture"
gold = "gold.jsonl"
reference_row = "Full"
cache_dir = "cache"
mode = "record"
jobs = 2

[model]
model_name = "m"

[[rows]]
name = "Full"
language = "de"
context = "specific"
features = ["structure"]

[[rows]]
name = "Bare"
language = "en"
context = "none"
{extra}"#
        );
        ExperimentSpec::parse(&spec, dir).unwrap()
    }

    /// Answers every request with the gold rendering of the page embedded in it.
    fn oracle_backend(gold: GoldCorpus) -> Arc<dyn ChatBackend> {
        Arc::new(FnBackend(move |r: &ChatRequest| {
            let doc = gold
                .documents
                .iter()
                .find(|d| r.user_text().ends_with(&d.text))
                .expect("page text in prompt");
            Ok(BackendReply {
                text: render_tagged(&doc.text, gold.spans(&doc.id)).unwrap(),
                finish_reason: FinishReason::Stop,
            })
        }))
    }

    #[test]
    fn perfect_responses_score_one() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), "");
        let gold = load_gold(&spec.gold).unwrap();
        let gw = gateway_for(&spec, oracle_backend(gold)).unwrap();
        let out = run_experiment(&spec, &gw).unwrap();
        assert_eq!(out.table.rows.len(), 2);
        for row in &out.table.rows {
            assert_eq!(row.pages, 3);
            assert!(!row.degenerate);
            for m in Metric::ALL {
                let cell = row.cell(m);
                // the empty page scores 0 under the 0/0 convention
                assert!((cell.mean - 2.0 / 3.0).abs() < 1e-12, "{m:?} {cell:?}");
            }
            assert_eq!(row.micro.f1, 1.0);
        }
        assert_eq!(out.table.rows[0].f1.impact, Some(0.0));
        assert_eq!(out.transcripts.len(), 6);

        let mut strict_spec = spec.clone();
        strict_spec.mode = RunMode::ReplayStrict;
        let replay = gateway_for(&strict_spec, Arc::new(NoCredentials)).unwrap();
        let again = run_experiment(&strict_spec, &replay).unwrap();
        assert_eq!(again.table, out.table);
        assert_eq!(replay.backend_calls(), 0);
    }

    #[test]
    fn truncated_pages_are_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), "");
        let gold = load_gold(&spec.gold).unwrap();
        let inner = oracle_backend(gold);
        let backend = Arc::new(FnBackend(move |r: &ChatRequest| {
            let mut reply = inner.send(r)?;
            if r.user_text().contains("Adlon") {
                reply.finish_reason = FinishReason::Length;
            }
            Ok(reply)
        }));
        let mut spec = spec;
        spec.mode = RunMode::Live;
        let out = run_experiment(&spec, &gateway_for(&spec, backend).unwrap()).unwrap();
        for row in &out.table.rows {
            assert_eq!(row.excluded, 1);
            assert_eq!(row.pages + row.excluded, 3);
        }
    }

    #[test]
    fn hallucinated_spans_flag_degenerate() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = write_spec(dir.path(), "");
        spec.mode = RunMode::Live;
        let backend = Arc::new(FnBackend(|_: &ChatRequest| {
            Ok(BackendReply {
                text: "<<PER Zarathustra /PER>> <<LOC Xanadu /LOC>>".into(),
                finish_reason: FinishReason::Stop,
            })
        }));
        let out = run_experiment(&spec, &gateway_for(&spec, backend).unwrap()).unwrap();
        assert!(out.table.rows.iter().all(|r| r.degenerate));
        assert_eq!(out.table.rows[0].recall.mean, 0.0);
        assert_eq!(out.table.rows[0].recall.impact, None);
    }

    #[test]
    fn strict_replay_miss_names_key() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = write_spec(dir.path(), "");
        spec.mode = RunMode::ReplayStrict;
        let gw = gateway_for(&spec, Arc::new(NoCredentials)).unwrap();
        assert!(matches!(
            run_experiment(&spec, &gw),
            Err(HarnessError::Gateway(GatewayError::CacheMiss { .. }))
        ));
    }

    #[test]
    fn baselines_use_the_same_scoring_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("gold.jsonl"), GOLD).unwrap();
        let gold = load_gold(&dir.path().join("gold.jsonl")).unwrap();
        save_gold(&gold, &dir.path().join("same.jsonl")).unwrap();
        let extra = "\n[[baselines]]\nname = \"copy\"\npath = \"same.jsonl\"\n";
        let mut spec = write_spec(dir.path(), extra);
        spec.mode = RunMode::Replay;
        let out = run_experiment(&spec, &gateway_for(&spec, oracle_backend(gold.clone())).unwrap()).unwrap();
        let copy = out.table.row("copy").unwrap();
        let full = out.table.row("Full").unwrap();
        assert_eq!(copy.f1.mean, full.f1.mean);
        assert_eq!(copy.micro, full.micro);
        assert_eq!(copy.f1.impact, Some(0.0));
        assert_eq!(out.predictions["copy"], out.predictions["Full"]);
    }

    #[test]
    fn corpus_pages_must_exist_in_gold() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pages.jsonl"), r#"{"text":"Fremd.","meta":{"id":"zz"}}"#).unwrap();
        let spec = write_spec(dir.path(), "");
        let mut spec = spec;
        spec.corpus = Some(dir.path().join("pages.jsonl"));
        let gold = load_gold(&spec.gold).unwrap();
        assert!(matches!(load_pages(&spec, &gold), Err(HarnessError::UnknownIds(ids)) if ids == ["zz"]));
    }
}
