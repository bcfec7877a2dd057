//! Code-snippet generation for query expansion.
//!
//! A documentation prompt is expanded into `k` generated code snippets,
//! either through a remote completion endpoint or a deterministic offline
//! stub. Results are cached append-only on disk so reruns never hit the
//! backend twice for the same (pair, sample) key.

mod cache;
mod remote;
mod stub;

pub use cache::SnippetCache;
pub use remote::DEFAULT_RETRY_BASE_MS;

use crate::corpus::{tokenize_raw, DocCodePair};
use crate::error::{GacrError, Result};

/// One generated code sample tied to a source documentation id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedSnippet {
    pub source_id: String,
    pub sample_index: usize,
    pub raw_text: String,
    pub tokens: Vec<String>,
}

impl GeneratedSnippet {
    pub fn new(source_id: String, sample_index: usize, raw_text: String) -> Self {
        let tokens = tokenize_raw(&raw_text);
        GeneratedSnippet {
            source_id,
            sample_index,
            raw_text,
            tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Remote,
    Stub,
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub backend: Backend,
    /// Samples generated per prompt (the multi-snippet fan-out `k`).
    pub samples_per_prompt: usize,
    pub max_generated_tokens: usize,
    pub temperature: f64,
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub seed: u64,
    /// Base backoff delay in milliseconds (1x, 2x, 4x schedule).
    pub retry_base_ms: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            backend: Backend::Stub,
            samples_per_prompt: 3,
            max_generated_tokens: 64,
            temperature: 0.2,
            endpoint_url: String::new(),
            model_name: "code-davinci-002".to_string(),
            api_key_env: "GACR_GEN_API_KEY".to_string(),
            seed: 0,
            retry_base_ms: DEFAULT_RETRY_BASE_MS,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_prompt < 1 {
            return Err(GacrError::Config("samples_per_prompt must be >= 1".into()));
        }
        if self.max_generated_tokens < 1 {
            return Err(GacrError::Config("max_generated_tokens must be >= 1".into()));
        }
        if self.temperature < 0.0 {
            return Err(GacrError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Return the `k` snippets for a prompt, generating and caching any that
/// are missing. Cached entries are returned without touching the backend.
pub fn generate(
    prompt: &DocCodePair,
    config: &GenerationConfig,
    cache: &mut SnippetCache,
) -> Result<Vec<GeneratedSnippet>> {
    config.validate()?;
    let k = config.samples_per_prompt;

    let missing: Vec<usize> = (0..k)
        .filter(|&i| cache.get(&prompt.id, i).is_none())
        .collect();

    for &sample_index in &missing {
        let raw_text = match config.backend {
            Backend::Stub => stub::generate_stub(&prompt.doc_tokens, sample_index, config.seed),
            Backend::Remote => remote::generate_remote(prompt, sample_index, config)?,
        };
        cache.insert(GeneratedSnippet::new(
            prompt.id.clone(),
            sample_index,
            raw_text,
        ))?;
    }

    (0..k)
        .map(|i| {
            cache
                .get(&prompt.id, i)
                .cloned()
                .ok_or_else(|| GacrError::Backend(format!("sample {i} missing after generation")))
        })
        .collect()
}

/// Fill the cache for a whole pair list. Backend calls fan out across the
/// rayon pool (the stub is pure; remote requests run concurrently up to
/// the pool width), while cache appends stay on this thread as the single
/// writer. Returns the number of newly generated snippets.
pub fn generate_all(
    pairs: &[DocCodePair],
    config: &GenerationConfig,
    cache: &mut SnippetCache,
) -> Result<usize> {
    use rayon::prelude::*;

    config.validate()?;
    let k = config.samples_per_prompt;
    let missing: Vec<(&DocCodePair, usize)> = pairs
        .iter()
        .flat_map(|p| (0..k).map(move |i| (p, i)))
        .filter(|(p, i)| cache.get(&p.id, *i).is_none())
        .collect();

    let generated: Vec<GeneratedSnippet> = missing
        .par_iter()
        .map(|(pair, sample_index)| -> Result<GeneratedSnippet> {
            let raw_text = match config.backend {
                Backend::Stub => stub::generate_stub(&pair.doc_tokens, *sample_index, config.seed),
                Backend::Remote => remote::generate_remote(pair, *sample_index, config)?,
            };
            Ok(GeneratedSnippet::new(pair.id.clone(), *sample_index, raw_text))
        })
        .collect::<Result<_>>()?;

    let count = generated.len();
    for snippet in generated {
        cache.insert(snippet)?;
    }
    Ok(count)
}

/// Split a snippet into function-name tokens (first non-empty line) and
/// function-body tokens (everything after it).
pub fn split_name_body(snippet: &GeneratedSnippet) -> (Vec<String>, Vec<String>) {
    let mut lines = snippet.raw_text.split('\n');
    let mut name_line = None;
    for line in lines.by_ref() {
        if !line.trim().is_empty() {
            name_line = Some(line);
            break;
        }
    }
    let name_tokens = match name_line {
        Some(l) => tokenize_raw(l),
        None => return (Vec::new(), Vec::new()),
    };
    let body: String = lines.collect::<Vec<_>>().join("\n");
    (name_tokens, tokenize_raw(&body))
}

/// Keep the first `cap` tokens, dropping the tail.
pub fn truncate_snippet(tokens: &[String], cap: usize) -> Vec<String> {
    assert!(cap >= 1, "snippet cap must be >= 1");
    tokens[..tokens.len().min(cap)].to_vec()
}
