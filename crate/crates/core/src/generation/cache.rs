//! Append-only on-disk snippet cache.
//!
//! One JSON record per line: {"source_id", "sample_index", "raw_text"}.
//! The in-memory map mirrors the file; inserts are written through
//! immediately so a crash never loses acknowledged entries.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GacrError, Result};
use crate::generation::GeneratedSnippet;

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    source_id: String,
    sample_index: usize,
    raw_text: String,
}

#[derive(Debug)]
pub struct SnippetCache {
    path: PathBuf,
    entries: BTreeMap<(String, usize), GeneratedSnippet>,
    writer: File,
}

impl SnippetCache {
    /// Open (or create) a cache file and load all existing entries.
    pub fn open(path: &Path) -> Result<SnippetCache> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| GacrError::io(path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| GacrError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    GacrError::Config(format!("corrupt cache line in {}: {e}", path.display()))
                })?;
                let snippet =
                    GeneratedSnippet::new(rec.source_id, rec.sample_index, rec.raw_text);
                entries.insert((snippet.source_id.clone(), snippet.sample_index), snippet);
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GacrError::io(path, e))?;
        Ok(SnippetCache {
            path: path.to_path_buf(),
            entries,
            writer,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source_id: &str, sample_index: usize) -> Option<&GeneratedSnippet> {
        self.entries
            .get(&(source_id.to_string(), sample_index))
    }

    /// Number of samples cached for one source id.
    pub fn count_for(&self, source_id: &str) -> usize {
        self.entries
            .range((source_id.to_string(), 0)..=(source_id.to_string(), usize::MAX))
            .count()
    }

    /// Append a snippet to disk and memory. Re-inserting an existing key
    /// is a no-op so the file stays free of duplicates.
    pub fn insert(&mut self, snippet: GeneratedSnippet) -> Result<()> {
        let key = (snippet.source_id.clone(), snippet.sample_index);
        if self.entries.contains_key(&key) {
            return Ok(());
        }
        let rec = CacheRecord {
            source_id: snippet.source_id.clone(),
            sample_index: snippet.sample_index,
            raw_text: snippet.raw_text.clone(),
        };
        let mut line = serde_json::to_string(&rec)
            .map_err(|e| GacrError::Config(format!("cannot serialize cache record: {e}")))?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .map_err(|e| GacrError::io(&self.path, e))?;
        self.writer
            .flush()
            .map_err(|e| GacrError::io(&self.path, e))?;
        self.entries.insert(key, snippet);
        Ok(())
    }
}
