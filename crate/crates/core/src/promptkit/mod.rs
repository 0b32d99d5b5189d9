//! Prompt assembly.
//!
//! A prompt is built from up to six components, in this order:
//!
//! 1. introduction plus context (none, a generic historian persona, or the
//!    persona plus a description of the specific corpus),
//! 2. the tagging instructions followed by the configured NOTE lines,
//! 3. annotated examples (omitted for zero-shot),
//! 4. a reworded repetition of the instructions,
//! 5. reward/punishment sentences,
//! 6. the "take a deep breath" phrase,
//!
//! followed by the page text. Components 4 to 6, markdown section headings
//! and the system/user message split are independent toggles. All wording
//! lives in the template files under `templates/`.

mod shots;
mod templates;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use shots::{select_shots, ShotExample, ALLOWED_SHOTS, POOL_SIZE};
pub use templates::Templates;

use crate::span::LabelSet;
use crate::tagspan::{closer, opener, RenderError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template key `{key}` missing for language `{language}`")]
    MissingKey { language: Language, key: String },
    #[error("template key `{key}` defined twice for language `{language}`")]
    DuplicateKey { language: Language, key: String },
    #[error("templates are for `{templates}` but the prompt is configured for `{config}`")]
    LanguageMismatch { config: Language, templates: Language },
    #[error("configured {expected} shots but {got} examples were supplied")]
    ShotCount { expected: usize, got: usize },
    #[error("shot count {0} is not one of 0, 1, 2, 4, 8, 16, 32")]
    InvalidShots(usize),
    #[error("example pool must hold exactly 32 examples, got {0}")]
    PoolSize(usize),
    #[error("specific context needs a non-empty corpus description")]
    EmptyDescription,
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("example does not round-trip through the tag grammar: {excerpt:?}")]
    UncleanExample { excerpt: String },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    De,
    En,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::De => "de",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "de" => Ok(Language::De),
            "en" => Ok(Language::En),
            other => Err(format!("unknown language `{other}` (expected de or en)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextLevel {
    None,
    Generic,
    Specific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Structure,
    InstructionRepetition,
    Bullying,
    SystemPromptSplit,
    DeepBreath,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Structure,
        Feature::InstructionRepetition,
        Feature::Bullying,
        Feature::SystemPromptSplit,
        Feature::DeepBreath,
    ];
}

/// NOTE lines used alongside the corpus-specific context.
pub const SPECIFIC_NOTES: [&str; 3] = ["greek_heroes", "restaurants", "quoted_locations"];

/// NOTE lines for prompts without corpus-specific context.
pub const GENERAL_NOTES: [&str; 2] = ["old_language", "phonetic_spelling"];

/// One experiment cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub language: Language,
    pub context: ContextLevel,
    #[serde(default)]
    pub features: BTreeSet<Feature>,
    /// Note ids; each resolves to the template key `note.<id>`.
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub labels: LabelSet,
    /// Overrides the `bullying.reward` template text.
    #[serde(default)]
    pub reward: Option<String>,
    /// Overrides the `context.specific` template text.
    #[serde(default)]
    pub corpus_description: Option<String>,
}

impl PromptConfig {
    pub fn new(language: Language, context: ContextLevel) -> Self {
        PromptConfig {
            language,
            context,
            features: BTreeSet::new(),
            notes: Vec::new(),
            shots: 0,
            seed: 0,
            labels: LabelSet::default(),
            reward: None,
            corpus_description: None,
        }
    }

    pub fn with_features(mut self, features: impl IntoIterator<Item = Feature>) -> Self {
        self.features = features.into_iter().collect();
        self
    }

    pub fn with_notes<S: Into<String>>(mut self, notes: impl IntoIterator<Item = S>) -> Self {
        self.notes = notes.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_shots(mut self, shots: usize, seed: u64) -> Self {
        self.shots = shots;
        self.seed = seed;
        self
    }

    pub fn has(&self, feature: Feature) -> bool {
        self.features.contains(&feature)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if !ALLOWED_SHOTS.contains(&self.shots) {
            return Err(PromptError::InvalidShots(self.shots));
        }
        if self.labels.is_empty() {
            return Err(PromptError::EmptyLabelSet);
        }
        if let Some(desc) = &self.corpus_description {
            if self.context == ContextLevel::Specific && desc.trim().is_empty() {
                return Err(PromptError::EmptyDescription);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_message: Option<String>,
    pub user_message: String,
    pub example_count: usize,
    pub rendered_features: BTreeSet<Feature>,
}

impl PromptBundle {
    /// System and user text joined as one document.
    pub fn full_text(&self) -> String {
        match &self.system_message {
            Some(system) => format!("{system}\n\n{}", self.user_message),
            None => self.user_message.clone(),
        }
    }
}

struct Section {
    heading: &'static str,
    body: String,
}

fn join_list(items: &[String], conj: &str, serial_comma: bool) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} {conj} {b}"),
        [init @ .., last] if serial_comma => format!("{}, {conj} {last}", init.join(", ")),
        [init @ .., last] => format!("{} {conj} {last}", init.join(", ")),
    }
}

fn fill_labels(text: &str, templates: &Templates, labels: &LabelSet) -> Result<String, PromptError> {
    let mut categories = Vec::new();
    let mut closers = Vec::new();
    for label in labels.iter() {
        let desc = templates.get(&format!("label.{label}"))?;
        categories.push(format!("'{}' {desc}", opener(label).trim_end()));
        closers.push(format!("'{}'", closer(label)));
    }
    let serial = templates.language() == Language::En;
    let mut out = text.to_string();
    if out.contains("{categories}") {
        out = out.replace("{categories}", &join_list(&categories, templates.get("list.and")?, serial));
    }
    if out.contains("{closers}") {
        out = out.replace("{closers}", &join_list(&closers, templates.get("list.or")?, serial));
    }
    Ok(out)
}

/// Builds a prompt from the bundled templates for `config.language`.
pub fn build_prompt(
    config: &PromptConfig,
    examples: &[ShotExample],
    input_text: &str,
) -> Result<PromptBundle, PromptError> {
    build_prompt_with(&Templates::builtin(config.language), config, examples, input_text)
}

pub fn build_prompt_with(
    templates: &Templates,
    config: &PromptConfig,
    examples: &[ShotExample],
    input_text: &str,
) -> Result<PromptBundle, PromptError> {
    config.validate()?;
    if templates.language() != config.language {
        return Err(PromptError::LanguageMismatch {
            config: config.language,
            templates: templates.language(),
        });
    }
    if examples.len() != config.shots {
        return Err(PromptError::ShotCount {
            expected: config.shots,
            got: examples.len(),
        });
    }

    let mut sections = Vec::new();

    let mut intro = Vec::new();
    if config.context >= ContextLevel::Generic {
        intro.push(templates.get("context.generic")?.to_string());
    }
    if config.context == ContextLevel::Specific {
        let desc = match &config.corpus_description {
            Some(d) => d.as_str(),
            None => templates.get("context.specific")?,
        };
        if desc.trim().is_empty() {
            return Err(PromptError::EmptyDescription);
        }
        intro.push(desc.to_string());
    }
    intro.push(templates.get("intro")?.to_string());
    sections.push(Section {
        heading: "heading.intro",
        body: intro.join("\n\n"),
    });

    let mut instructions = fill_labels(templates.get("instructions")?, templates, &config.labels)?;
    if !config.notes.is_empty() {
        instructions.push('\n');
        for note in &config.notes {
            instructions.push_str("\n- ");
            instructions.push_str(templates.get(&format!("note.{note}"))?);
        }
    }
    sections.push(Section {
        heading: "heading.instructions",
        body: instructions,
    });

    if !examples.is_empty() {
        let input_label = templates.get("example.input")?;
        let output_label = templates.get("example.output")?;
        let mut body = vec![templates.get("example_header")?.to_string()];
        for ex in examples {
            body.push(format!(
                "{input_label}\n{}\n\n{output_label}\n{}",
                ex.input_text, ex.tagged_output
            ));
        }
        sections.push(Section {
            heading: "heading.examples",
            body: body.join("\n\n"),
        });
    }

    if config.has(Feature::InstructionRepetition) {
        sections.push(Section {
            heading: "heading.repetition",
            body: fill_labels(templates.get("repetition")?, templates, &config.labels)?,
        });
    }
    if config.has(Feature::Bullying) {
        let reward = match &config.reward {
            Some(r) => r.as_str(),
            None => templates.get("bullying.reward")?,
        };
        sections.push(Section {
            heading: "heading.bullying",
            body: templates.get("bullying")?.replace("{reward}", reward),
        });
    }
    if config.has(Feature::DeepBreath) {
        sections.push(Section {
            heading: "heading.deep_breath",
            body: templates.get("deep_breath")?.to_string(),
        });
    }

    let structured = config.has(Feature::Structure);
    let render = |section: &Section| -> Result<String, PromptError> {
        if structured {
            Ok(format!("## {}\n\n{}", templates.get(section.heading)?, section.body))
        } else {
            Ok(section.body.clone())
        }
    };
    let rendered: Vec<String> = sections.iter().map(render).collect::<Result<_, _>>()?;
    let instructions = rendered.join("\n\n");

    let (system_message, user_message) = if config.has(Feature::SystemPromptSplit) {
        (Some(instructions), input_text.to_string())
    } else {
        let input = render(&Section {
            heading: "heading.input",
            body: input_text.to_string(),
        })?;
        (None, format!("{instructions}\n\n{input}"))
    };

    Ok(PromptBundle {
        system_message,
        user_message,
        example_count: examples.len(),
        rendered_features: config.features.clone(),
    })
}

/// The ablation grid around a specific-context zero-shot prompt.
///
/// "PE" enables all five features; single-feature rows enable exactly one.
pub fn ablation_variants(base: &PromptConfig) -> Vec<(String, PromptConfig)> {
    let at = |context: ContextLevel, features: &[Feature]| {
        let mut cfg = base.clone();
        cfg.context = context;
        cfg.features = features.iter().copied().collect();
        cfg
    };
    let all = Feature::ALL;
    vec![
        ("Specific Context + PE".into(), at(ContextLevel::Specific, &all)),
        (
            "Specific Context + structure".into(),
            at(ContextLevel::Specific, &[Feature::Structure]),
        ),
        (
            "Specific Context + system-prompt".into(),
            at(ContextLevel::Specific, &[Feature::SystemPromptSplit]),
        ),
        (
            "Specific Context + instruction-repetition".into(),
            at(ContextLevel::Specific, &[Feature::InstructionRepetition]),
        ),
        (
            "Specific Context + bullying".into(),
            at(ContextLevel::Specific, &[Feature::Bullying]),
        ),
        ("Specific Context".into(), at(ContextLevel::Specific, &[])),
        ("Generic Context + PE".into(), at(ContextLevel::Generic, &all)),
        ("Generic Context".into(), at(ContextLevel::Generic, &[])),
        ("No Context + PE".into(), at(ContextLevel::None, &all)),
        ("No Context".into(), at(ContextLevel::None, &[])),
    ]
}
