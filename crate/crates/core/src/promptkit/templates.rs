//! Language-keyed prompt texts.
//!
//! A template file is a sequence of sections. A line consisting only of
//! `[key]` starts a section; everything up to the next header is its text,
//! with surrounding blank lines removed. Lines before the first header are
//! free-form comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Language, PromptError};

const BUILTIN_DE: &str = include_str!("../../templates/de.txt");
const BUILTIN_EN: &str = include_str!("../../templates/en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    language: Language,
    entries: BTreeMap<String, String>,
}

fn header_key(line: &str) -> Option<&str> {
    let key = line.trim_end().strip_prefix('[')?.strip_suffix(']')?;
    let valid = !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    valid.then_some(key)
}

impl Templates {
    pub fn parse(language: Language, content: &str) -> Result<Self, PromptError> {
        let mut entries = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        let flush = |entry: Option<(String, Vec<&str>)>,
                         entries: &mut BTreeMap<String, String>|
         -> Result<(), PromptError> {
            if let Some((key, lines)) = entry {
                let text = lines.join("\n").trim_matches('\n').trim_end().to_string();
                if entries.insert(key.clone(), text).is_some() {
                    return Err(PromptError::DuplicateKey { language, key });
                }
            }
            Ok(())
        };
        for line in content.lines() {
            if let Some(key) = header_key(line) {
                flush(current.take(), &mut entries)?;
                current = Some((key.to_string(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            }
        }
        flush(current.take(), &mut entries)?;
        Ok(Templates { language, entries })
    }

    /// The texts shipped with the crate.
    pub fn builtin(language: Language) -> Self {
        let content = match language {
            Language::De => BUILTIN_DE,
            Language::En => BUILTIN_EN,
        };
        Templates::parse(language, content).expect("bundled templates are well-formed")
    }

    pub fn load(language: Language, path: &Path) -> Result<Self, PromptError> {
        let content = fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Templates::parse(language, &content)
    }

    /// Loads `<dir>/<lang>.txt`.
    pub fn load_dir(language: Language, dir: &Path) -> Result<Self, PromptError> {
        Templates::load(language, &dir.join(format!("{}.txt", language.code())))
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn get(&self, key: &str) -> Result<&str, PromptError> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingKey {
                language: self.language,
                key: key.to_string(),
            })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(key.into(), text.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }
}
