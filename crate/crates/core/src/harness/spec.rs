use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::evaluator::Scheme;
use crate::gateway::{ModelParams, RunMode};
use crate::promptkit::{ablation_variants, PromptConfig};

/// A declarative experiment, normally read from a TOML file.
///
/// ```toml
/// name = "context study"
/// gold = "gold.jsonl"
/// reference_row = "Full Prompt"
/// mode = "replay_strict"
/// cache_dir = "cache"
///
/// [model]
/// model_name = "gpt-4o-2024-08-06"
///
/// [[rows]]
/// name = "Full Prompt"
/// language = "de"
/// context = "specific"
/// features = ["structure", "bullying"]
///
/// [[baselines]]
/// name = "Baseline flair"
/// path = "flair.jsonl"
/// ```
///
/// Relative paths are resolved against the directory holding the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Pages to annotate; defaults to the gold file's pages.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    pub gold: PathBuf,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
    #[serde(default)]
    pub rows: Vec<RowSpec>,
    /// Appends the ten ablation rows built around this configuration.
    #[serde(default)]
    pub ablation: Option<PromptConfig>,
    pub model: ModelParams,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub reference_row: String,
    #[serde(default)]
    pub baselines: Vec<BaselineSpec>,
    #[serde(default)]
    pub scheme: Scheme,
    /// Directory with `de.txt` / `en.txt` overriding the bundled templates.
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

fn default_mode() -> RunMode {
    RunMode::ReplayStrict
}

fn default_jobs() -> usize {
    4
}

/// A named prompt configuration; in TOML the config fields sit beside `name`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowSpec {
    pub name: String,
    #[serde(flatten)]
    pub config: PromptConfig,
}

impl<'de> Deserialize<'de> for RowSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut table = toml::Table::deserialize(deserializer)?;
        let name = match table.remove("name") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(D::Error::custom("row `name` must be a string")),
            None => return Err(D::Error::missing_field("name")),
        };
        let config = PromptConfig::deserialize(table)
            .map_err(|e| D::Error::custom(format!("row `{name}`: {e}")))?;
        Ok(RowSpec { name, config })
    }
}

/// Source of few-shot examples: annotated pages outside the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_min_len() -> usize {
    200
}

fn default_max_len() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub name: String,
    pub path: PathBuf,
}

impl ExperimentSpec {
    pub fn parse(content: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut spec: ExperimentSpec =
            toml::from_str(content).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.resolve_paths(base_dir);
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Spec(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        ExperimentSpec::parse(&content, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.gold);
        self.corpus.as_mut().map(join);
        self.cache_dir.as_mut().map(join);
        self.templates.as_mut().map(join);
        if let Some(pool) = &mut self.pool {
            join(&mut pool.path);
        }
        for b in &mut self.baselines {
            join(&mut b.path);
        }
    }

    /// Explicit rows followed by the generated ablation rows.
    pub fn all_rows(&self) -> Vec<RowSpec> {
        let mut rows = self.rows.clone();
        if let Some(base) = &self.ablation {
            rows.extend(
                ablation_variants(base)
                    .into_iter()
                    .map(|(name, config)| RowSpec { name, config }),
            );
        }
        rows
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let rows = self.all_rows();
        if rows.is_empty() {
            return Err(HarnessError::Spec("no rows configured".into()));
        }
        let mut seen = BTreeSet::new();
        for name in rows.iter().map(|r| &r.name).chain(self.baselines.iter().map(|b| &b.name)) {
            if !seen.insert(name.as_str()) {
                return Err(HarnessError::Spec(format!("duplicate row name `{name}`")));
            }
        }
        if !rows.iter().any(|r| r.name == self.reference_row) {
            return Err(HarnessError::Spec(format!(
                "reference_row `{}` is not one of the configured rows",
                self.reference_row
            )));
        }
        for row in &rows {
            row.config
                .validate()
                .map_err(|e| HarnessError::Spec(format!("row `{}`: {e}", row.name)))?;
            if row.config.shots > 0 && self.pool.is_none() {
                return Err(HarnessError::Spec(format!(
                    "row `{}` uses {} shots but no [pool] is configured",
                    row.name, row.config.shots
                )));
            }
        }
        self.model.validate().map_err(|e| HarnessError::Spec(e.to_string()))?;
        if self.mode.uses_cache() && self.cache_dir.is_none() {
            return Err(HarnessError::Spec(format!("mode {} needs cache_dir", self.mode)));
        }
        if self.jobs == 0 {
            return Err(HarnessError::Spec("jobs must be at least 1".into()));
        }
        Ok(())
    }
}
