//! Corpus loading, vocabulary construction, and tokenization.
//!
//! Input data is line-delimited JSON in the CodeSearchNet interchange
//! layout: one object per line with `url`, `docstring_tokens`, and
//! `code_tokens` fields. Unknown fields are ignored; malformed lines are
//! skipped and counted rather than aborting the load.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{GacrError, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

const SPECIAL_TOKENS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

/// One documentation/code example with a stable identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocCodePair {
    pub id: String,
    pub language: String,
    pub doc_tokens: Vec<String>,
    pub code_tokens: Vec<String>,
}

/// A named corpus split in deterministic load order.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub name: String,
    pub pairs: Vec<DocCodePair>,
    /// Candidate pool size used when ranking queries from this split.
    pub candidate_pool_size: usize,
}

impl CorpusSplit {
    /// Pair indices grouped by language, languages in sorted order,
    /// indices in load order.
    pub fn by_language(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.pairs.iter().enumerate() {
            map.entry(p.language.as_str()).or_default().push(i);
        }
        map
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    url: String,
    docstring_tokens: Vec<String>,
    code_tokens: Vec<String>,
    #[serde(default)]
    language: Option<String>,
}

/// Outcome of a corpus load: the split plus the malformed-line count.
#[derive(Debug)]
pub struct LoadedCorpus {
    pub split: CorpusSplit,
    pub skipped_lines: usize,
}

/// Load a CodeSearchNet-format JSONL file into a split.
///
/// Malformed lines (bad JSON, missing fields, empty token lists, or a
/// duplicate id) are skipped and counted. A missing file or a file with
/// zero usable lines is fatal.
pub fn load_corpus(path: &Path, split_name: &str) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| GacrError::io(path, e))?;
    let reader = BufReader::new(file);

    let mut pairs: Vec<DocCodePair> = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut skipped = 0usize;

    for line in reader.lines() {
        let line = line.map_err(|e| GacrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if rec.docstring_tokens.is_empty()
            || rec.code_tokens.is_empty()
            || !seen_ids.insert(rec.url.clone())
        {
            skipped += 1;
            continue;
        }
        pairs.push(DocCodePair {
            id: rec.url,
            language: rec.language.unwrap_or_else(|| "unknown".to_string()),
            doc_tokens: rec.docstring_tokens,
            code_tokens: rec.code_tokens,
        });
    }

    if pairs.is_empty() {
        return Err(GacrError::EmptyCorpus { path: path.into() });
    }
    let pool = pairs.len();
    Ok(LoadedCorpus {
        split: CorpusSplit {
            name: split_name.to_string(),
            pairs,
            candidate_pool_size: pool,
        },
        skipped_lines: skipped,
    })
}

/// Limits for vocabulary construction.
#[derive(Debug, Clone, Copy)]
pub struct VocabConfig {
    pub max_size: usize,
    pub min_freq: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            max_size: 8192,
            min_freq: 2,
        }
    }
}

/// Token-string to id map with four fixed specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build a vocabulary over the given splits plus extra token lists.
    ///
    /// Specials occupy ids 0..4. Remaining slots are filled by tokens with
    /// frequency >= `min_freq`, in descending frequency with lexicographic
    /// ascending tie-break, up to `max_size` total entries. The result is
    /// independent of split order.
    pub fn build(
        splits: &[&CorpusSplit],
        extra_texts: &[Vec<String>],
        max_size: usize,
        min_freq: usize,
    ) -> Result<Vocabulary> {
        if max_size < 5 {
            return Err(GacrError::Config(format!(
                "vocabulary max_size must be at least 5, got {max_size}"
            )));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut count_tokens = |tokens: &[String]| {
            for t in tokens {
                if SPECIAL_TOKENS.contains(&t.as_str()) {
                    continue;
                }
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        };
        for split in splits {
            for pair in &split.pairs {
                count_tokens(&pair.doc_tokens);
                count_tokens(&pair.code_tokens);
            }
        }
        for text in extra_texts {
            count_tokens(text);
        }

        let mut candidates: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .collect();
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(
            candidates
                .into_iter()
                .take(max_size - SPECIAL_TOKENS.len())
                .map(|(t, _)| t),
        );
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// Map tokens to ids; out-of-vocabulary tokens become UNK.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK_ID))
            .collect()
    }

    /// Write the vocabulary as one token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.id_to_token.join("\n");
        std::fs::write(path, body + "\n").map_err(|e| GacrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let body = std::fs::read_to_string(path).map_err(|e| GacrError::io(path, e))?;
        let id_to_token: Vec<String> = body.lines().map(|l| l.to_string()).collect();
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_token.get(i).map(|s| s.as_str()) != Some(*special) {
                return Err(GacrError::Config(format!(
                    "vocabulary file {} lacks special token {special} at id {i}",
                    path.display()
                )));
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }
}

/// Whitespace tokenizer that splits listed punctuation into standalone
/// tokens. Identifiers keep their case; underscores stay inside tokens.
pub fn tokenize_raw(text: &str) -> Vec<String> {
    const PUNCT: &[char] = &[
        '(', ')', '[', ']', '{', '}', ':', ',', '.', '=', '+', '-', '*', '/', '<', '>',
    ];
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if PUNCT.contains(&ch) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
