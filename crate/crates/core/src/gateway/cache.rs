use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{GatewayError, Transcript};

/// One pretty-printed JSON file per transcript, named `<cache_key>.json`.
#[derive(Debug, Clone)]
pub struct TranscriptCache {
    dir: PathBuf,
}

impl TranscriptCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Cache(format!("cannot create {}: {e}", dir.display())))?;
        Ok(TranscriptCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<Transcript>, GatewayError> {
        let path = self.path_for(key);
        let content = match fs::read_to_string(&path) {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("cannot read {}: {e}", path.display()))),
        };
        let transcript: Transcript = serde_json::from_str(&content)
            .map_err(|e| GatewayError::Cache(format!("corrupt transcript {}: {e}", path.display())))?;
        if transcript.cache_key != key {
            return Err(GatewayError::Cache(format!(
                "{} holds key {}",
                path.display(),
                transcript.cache_key
            )));
        }
        Ok(Some(transcript))
    }

    /// Writes via a temporary file and rename, so readers never see partial files.
    pub fn store(&self, transcript: &Transcript) -> Result<(), GatewayError> {
        let err = |e: &dyn std::fmt::Display| GatewayError::Cache(format!("cannot write transcript: {e}"));
        let mut json = serde_json::to_string_pretty(transcript).map_err(|e| err(&e))?;
        json.push('\n');
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| err(&e))?;
        tmp.write_all(json.as_bytes()).map_err(|e| err(&e))?;
        tmp.persist(self.path_for(&transcript.cache_key))
            .map_err(|e| err(&e))?;
        Ok(())
    }
}
