//! Remote completion backend.
//!
//! One POST per sample against a completion-style endpoint, with the
//! conventional request shape (model, prompt, max_tokens, temperature,
//! n=1). Transient failures are retried twice with exponential backoff
//! before surfacing a backend error; the cache is only written after a
//! successful response.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::corpus::DocCodePair;
use crate::error::{GacrError, Result};
use crate::generation::GenerationConfig;

pub const DEFAULT_RETRY_BASE_MS: u64 = 1000;
const MAX_ATTEMPTS: u32 = 3;

/// Env var that overrides the configured endpoint URL.
pub const ENDPOINT_ENV: &str = "GACR_GEN_ENDPOINT";

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

fn build_prompt(pair: &DocCodePair) -> String {
    format!("# {}\n{}\n", pair.language, pair.doc_tokens.join(" "))
}

pub fn generate_remote(
    pair: &DocCodePair,
    sample_index: usize,
    config: &GenerationConfig,
) -> Result<String> {
    let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| config.endpoint_url.clone());
    if endpoint.is_empty() {
        return Err(GacrError::Config(
            "remote backend needs endpoint_url (or GACR_GEN_ENDPOINT)".into(),
        ));
    }
    let api_key = std::env::var(&config.api_key_env).map_err(|_| {
        GacrError::Config(format!(
            "remote backend needs an api key in ${}",
            config.api_key_env
        ))
    })?;

    let body = json!({
        "model": config.model_name,
        "prompt": build_prompt(pair),
        "max_tokens": config.max_generated_tokens,
        "temperature": config.temperature,
        "n": 1,
        // lets deterministic test servers vary output per sample
        "sample_index": sample_index,
    });

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .map_err(|e| GacrError::Backend(format!("http client: {e}")))?;

    let mut last_error = String::new();
    for attempt in 1..=MAX_ATTEMPTS {
        if attempt > 1 {
            let backoff = config.retry_base_ms * (1 << (attempt - 2));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let result = client
            .post(&endpoint)
            .bearer_auth(&api_key)
            .json(&body)
            .send();
        match result {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let parsed: CompletionResponse = resp.json().map_err(|e| {
                        GacrError::Backend(format!("malformed completion response: {e}"))
                    })?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.text)
                        .ok_or_else(|| GacrError::Backend("empty choices array".into()));
                }
                last_error = format!("HTTP {status}");
                if !status.is_server_error() && status.as_u16() != 429 {
                    break; // client errors are not retried
                }
            }
            Err(e) => last_error = format!("transport: {e}"),
        }
    }
    Err(GacrError::Backend(format!(
        "completion request for {} sample {sample_index} failed after {MAX_ATTEMPTS} attempts: {last_error}",
        pair.id
    )))
}
