use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use histner::corpus::{load_gold, read_records, record_line, split_examples_pool, Document};
use histner::evaluator::{aggregate, format_mean_std, score_predictions, AggregateMetrics, Metric};
use histner::gateway::{Gateway, ModelParams, RunMode, API_KEY_VAR};
use histner::grounding::ground_all_with;
use histner::harness::{
    default_backend, emit_report, gateway_for, ingest_records, run_experiment, Annotator, ExperimentSpec,
    ReportFormat,
};
use histner::promptkit::{select_shots, PromptConfig, ShotExample, Templates, POOL_SIZE};
use histner::span::{Label, LabelSet};
use histner::tagspan::{flatten_spans, parse_tagged_with};
use serde_json::json;

use crate::error::CliError;
use crate::{AnnotateArgs, EvaluateArgs, ExperimentArgs, GroundArgs, ParseArgs, ShotsArgs};

const POOL_MIN_LEN: usize = 200;
const POOL_MAX_LEN: usize = 500;

fn read_text(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| CliError::Input(format!("cannot read standard input: {e}")))?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, content: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, content).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Live and record modes call the endpoint for every page, so credentials are checked up front.
fn require_credentials(mode: RunMode) -> Result<(), CliError> {
    let present = std::env::var(API_KEY_VAR).is_ok_and(|k| !k.trim().is_empty());
    if mode.always_calls_backend() && !present {
        return Err(CliError::Credentials(format!(
            "mode {mode} needs credentials: environment variable {API_KEY_VAR} is not set"
        )));
    }
    Ok(())
}

fn load_shots(
    pool: Option<&Path>,
    exclude: &BTreeSet<String>,
    pool_seed: u64,
    config: &PromptConfig,
) -> Result<Vec<ShotExample>, CliError> {
    if config.shots == 0 {
        return Ok(Vec::new());
    }
    let pool = pool.ok_or_else(|| {
        CliError::Input(format!("the prompt uses {} shots; pass --pool", config.shots))
    })?;
    let source = load_gold(pool)?.without(exclude);
    let excerpts = split_examples_pool(&source, POOL_SIZE, POOL_MIN_LEN, POOL_MAX_LEN, pool_seed)?;
    let examples = excerpts
        .iter()
        .map(ShotExample::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(select_shots(&examples, config.shots, config.seed)?)
}

pub fn annotate(a: AnnotateArgs) -> Result<(), CliError> {
    let docs: Vec<Document> = read_records(&a.corpus)?
        .into_iter()
        .map(|r| {
            let mut doc = Document::from_raw(r.id, r.text);
            doc.meta = r.meta;
            doc
        })
        .collect();
    let config: PromptConfig = toml::from_str(&read_text(&a.prompt_config)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.prompt_config.display())))?;
    config.validate()?;
    let ids = docs.iter().map(|d| d.id.clone()).collect();
    let shots = load_shots(a.pool.as_deref(), &ids, a.pool_seed, &config)?;
    let templates = match &a.templates {
        Some(dir) => Templates::load_dir(config.language, dir)?,
        None => Templates::builtin(config.language),
    };
    let params = ModelParams {
        model_name: a.model,
        temperature: a.temperature,
        max_output_tokens: a.max_output_tokens,
        endpoint_url: a.endpoint,
        request_seed: a.request_seed,
    };
    params.validate().map_err(CliError::input)?;
    require_credentials(a.mode)?;

    let cache = a.mode.uses_cache().then(|| a.cache_dir.clone());
    let gateway = Gateway::new(default_backend(a.mode, &params.endpoint_url), a.mode, cache)?;
    let annotator = Annotator {
        config: &config,
        templates: &templates,
        shots: &shots,
        model: &params,
        jobs: a.jobs,
    };
    let pages: Vec<&Document> = docs.iter().collect();
    let annotations = annotator.annotate(&gateway, &pages)?;

    let mut out = String::new();
    let mut degenerate = Vec::new();
    for (doc, ann) in docs.iter().zip(&annotations) {
        let mut doc = doc.clone();
        if ann.truncated {
            log::warn!("page {} was truncated; written without spans", doc.id);
            doc.meta.insert("truncated".into(), "true".into());
        }
        if ann.is_degenerate() {
            degenerate.push(doc.id.clone());
        }
        let spans = if ann.truncated { Vec::new() } else { ann.spans.clone() };
        out.push_str(&record_line(&doc, &spans));
        out.push('\n');
    }
    write_file(&a.out, out.as_bytes())?;
    eprintln!(
        "annotated {} pages ({} backend calls) -> {}",
        docs.len(),
        gateway.backend_calls(),
        a.out.display()
    );
    if !degenerate.is_empty() {
        return Err(CliError::Degenerate(format!(
            "more than half of the spans could not be grounded on pages: {}",
            degenerate.join(", ")
        )));
    }
    Ok(())
}

pub fn parse(a: ParseArgs) -> Result<(), CliError> {
    let labels = a
        .labels
        .split(',')
        .map(|l| l.trim().parse::<Label>().map_err(CliError::input))
        .collect::<Result<Vec<_>, _>>()?;
    let parsed = parse_tagged_with(&read_text(&a.input)?, &LabelSet::new(labels));
    print_json(&parsed);
    Ok(())
}

pub fn ground(a: GroundArgs) -> Result<(), CliError> {
    let source = read_text(&a.source)?;
    let mut parsed = parse_tagged_with(&read_text(&a.tagged)?, &LabelSet::default());
    parsed.spans = flatten_spans(&parsed.spans);
    print_json(&ground_all_with(&parsed, &source, a.slack));
    Ok(())
}

fn evaluation_markdown(agg: &AggregateMetrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Scheme: {}. Pages: {}.\n", agg.scheme, agg.pages);
    out.push_str("| | Precision | Recall | F1 |\n|---|---|---|---|\n");
    let cells = [Metric::Precision, Metric::Recall, Metric::F1];
    let macro_cells: Vec<String> = cells.iter().map(|m| format_mean_std(&agg.macro_.get(*m))).collect();
    let _ = writeln!(out, "| macro | {} |", macro_cells.join(" | "));
    let mut line = |name: &str, m: &histner::Metrics| {
        let _ = writeln!(out, "| {name} | {:.2} | {:.2} | {:.2} |", m.precision, m.recall, m.f1);
    };
    line("micro", &agg.micro);
    for (label, m) in &agg.per_label {
        line(label.as_str(), m);
    }
    out
}

fn evaluation_csv(agg: &AggregateMetrics) -> String {
    let mut out = String::from("scope,precision,recall,f1,precision_stdev,recall_stdev,f1_stdev\n");
    let _ = writeln!(
        out,
        "macro,{},{},{},{},{},{}",
        agg.macro_.precision.mean,
        agg.macro_.recall.mean,
        agg.macro_.f1.mean,
        agg.macro_.precision.stdev,
        agg.macro_.recall.stdev,
        agg.macro_.f1.stdev
    );
    let _ = writeln!(out, "micro,{},{},{},,,", agg.micro.precision, agg.micro.recall, agg.micro.f1);
    for (label, m) in &agg.per_label {
        let _ = writeln!(out, "{label},{},{},{},,,", m.precision, m.recall, m.f1);
    }
    out
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let gold = load_gold(&a.gold)?;
    let records = read_records(&a.pred)?;
    let gold_ids = gold.ids();
    let pred_ids: BTreeSet<String> = records.iter().map(|r| r.id.clone()).collect();
    if gold_ids != pred_ids {
        let only_gold: Vec<&str> = gold_ids.difference(&pred_ids).map(String::as_str).collect();
        let only_pred: Vec<&str> = pred_ids.difference(&gold_ids).map(String::as_str).collect();
        return Err(CliError::Input(format!(
            "document ids differ; only in gold: [{}]; only in predictions: [{}]",
            only_gold.join(", "),
            only_pred.join(", ")
        )));
    }
    let preds = ingest_records(records, &gold)?;
    if preds.dropped_total() > 0 {
        eprintln!("dropped spans with other labels: {:?}", preds.dropped);
    }
    let scores = score_predictions(&gold.annotations, &preds.spans, a.scheme)?;
    let agg = aggregate(&scores, a.scheme)?;
    match a.format {
        ReportFormat::Markdown => print!("{}", evaluation_markdown(&agg)),
        ReportFormat::Csv => print!("{}", evaluation_csv(&agg)),
        ReportFormat::Json => print_json(&agg),
    }
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(mode) = a.mode {
        spec.mode = mode;
    }
    if let Some(jobs) = a.jobs {
        spec.jobs = jobs;
    }
    spec.validate()?;
    require_credentials(spec.mode)?;
    let gateway = gateway_for(&spec, default_backend(spec.mode, &spec.model.endpoint_url))?;
    let output = run_experiment(&spec, &gateway)?;

    fs::create_dir_all(&a.out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", a.out.display())))?;
    for format in ReportFormat::ALL {
        let path = a.out.join(format!("report.{}", format.extension()));
        write_file(&path, &emit_report(&output.table, format))?;
    }
    let mut index = serde_json::to_vec_pretty(&output.transcripts).expect("serializable");
    index.push(b'\n');
    write_file(&a.out.join("transcripts.json"), &index)?;
    print!("{}", String::from_utf8_lossy(&emit_report(&output.table, ReportFormat::Markdown)));

    let degenerate: Vec<&str> = output
        .table
        .all_rows()
        .filter(|r| r.degenerate)
        .map(|r| r.name.as_str())
        .collect();
    if !degenerate.is_empty() {
        return Err(CliError::Degenerate(format!("degenerate rows: {}", degenerate.join(", "))));
    }
    Ok(())
}

pub fn shots(a: ShotsArgs) -> Result<(), CliError> {
    let exclude: BTreeSet<String> = match &a.exclude {
        Some(path) => read_records(path)?.into_iter().map(|r| r.id).collect(),
        None => BTreeSet::new(),
    };
    let source = load_gold(&a.pool)?.without(&exclude);
    let excerpts = split_examples_pool(&source, POOL_SIZE, a.min_len, a.max_len, a.pool_seed)?;
    let examples = excerpts
        .iter()
        .map(ShotExample::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    for shot in select_shots(&examples, a.n, a.seed)? {
        println!(
            "{}",
            json!({"input": shot.input_text, "output": shot.tagged_output, "labels": shot.label_histogram})
        );
    }
    Ok(())
}
