#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use histner::corpus::{load_gold, GoldCorpus};
use histner::gateway::{BackendReply, ChatRequest, FinishReason, FnBackend, RunMode};
use histner::harness::{gateway_for, run_experiment, ExperimentSpec};
use histner::tagspan::render_tagged;

pub const GOLD: &str = concat!(
    r#"{"text":"Goethe wohnte lange in Weimar.","spans":[{"start":0,"end":6,"label":"PER"},{"start":23,"end":29,"label":"LOC"}],"meta":{"id":"p1"}}"#,
    "\n",
    r#"{"text":"Das Hotel Adlon liegt am Pariser Platz in Berlin.","spans":[{"start":4,"end":15,"label":"ORG"},{"start":25,"end":38,"label":"LOC"},{"start":42,"end":48,"label":"LOC"}],"meta":{"id":"p2"}}"#,
    "\n",
    r#"{"text":"Schiller schrieb in Jena an Körner.","spans":[{"start":0,"end":8,"label":"PER"},{"start":20,"end":24,"label":"LOC"},{"start":28,"end":34,"label":"PER"}],"meta":{"id":"p3"}}"#,
    "\n"
);

pub const ROW: &str = r#"language = "de"
context = "specific"
features = ["structure", "instruction_repetition", "bullying", "system_prompt_split", "deep_breath"]
notes = ["quoted_locations"]
"#;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_histner"));
    cmd.env_remove("LLM_API_KEY").env_remove("LLM_ENDPOINT_URL");
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes gold pages, a one-row spec and a prompt config into `dir`; returns the spec path.
pub fn write_fixture(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("gold.jsonl"), GOLD).unwrap();
    std::fs::write(dir.join("row.toml"), ROW).unwrap();
    let spec = format!(
        "name = \"perfect replay\"\ngold = \"gold.jsonl\"\nreference_row = \"Full Prompt\"\ncache_dir = \"cache\"\nmode = \"replay_strict\"\n\n[model]\nmodel_name = \"fixture-model\"\n\n[[rows]]\nname = \"Full Prompt\"\n{ROW}"
    );
    let path = dir.join("spec.toml");
    std::fs::write(&path, spec).unwrap();
    path
}

/// A backend that answers each page with its gold rendering.
pub fn gold_backend(gold: GoldCorpus) -> Arc<FnBackend<impl Fn(&ChatRequest) -> Result<BackendReply, histner::gateway::BackendError> + Send + Sync>> {
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

/// Fills the spec's transcript cache by recording gold renderings.
pub fn record_perfect_cache(spec_path: &Path) {
    let mut spec = ExperimentSpec::load(spec_path).unwrap();
    spec.mode = RunMode::Record;
    let gold = load_gold(&spec.gold).unwrap();
    let gateway = gateway_for(&spec, gold_backend(gold)).unwrap();
    run_experiment(&spec, &gateway).unwrap();
}
