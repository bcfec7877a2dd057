//! Seeded synthetic corpus for end-to-end experiments.
//!
//! Each pair is a small function built from a random draw of identifier
//! atoms; the documentation is a lossy keyword sample (default 30%) of
//! those identifiers, written in prose form (punctuation glued onto most
//! keywords the way natural docstrings carry it). The retrieval signal is
//! identifier overlap, with distractor pressure coming from atoms shared
//! across pairs. Because the offline generation stub sanitizes doc
//! keywords back into identifier form, generation-augmented queries
//! recover exact code tokens that the raw documentation only carries in
//! decorated form.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::corpus::{tokenize_raw, CorpusSplit, DocCodePair};
use crate::error::{GacrError, Result};
use crate::seeds;

const ATOMS: [&str; 48] = [
    "load", "save", "parse", "merge", "split", "index", "count", "filter", "map", "reduce",
    "sort", "find", "fetch", "cache", "hash", "join", "trim", "pack", "scan", "read", "write",
    "copy", "move", "sync", "lock", "free", "grow", "drop", "push", "pull", "peek", "poll",
    "send", "recv", "open", "close", "bind", "seek", "flush", "reset", "check", "apply",
    "build", "emit", "track", "queue", "stack", "batch",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_pairs: usize,
    pub seed: u64,
    /// Probability that a code identifier survives into the doc tokens.
    pub keep_rate: f64,
    pub language: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_pairs: 600,
            seed: 42,
            keep_rate: 0.3,
            language: "synth".to_string(),
        }
    }
}

fn synth_pair(config: &SynthConfig, index: usize) -> DocCodePair {
    let mut rng = seeds::rng_indexed(config.seed, "synth-pair", index as u64);
    let n_idents = rng.random_range(6..=10);
    let picks = sample(&mut rng, ATOMS.len(), n_idents);
    let idents: Vec<&str> = picks.iter().map(|i| ATOMS[i]).collect();

    let name = idents[..3.min(idents.len())].join("_");
    let mut code = format!("def {name}(x):\n");
    for (j, ident) in idents.iter().enumerate() {
        let arg = match j {
            0 => "x",
            1 => idents[0],
            _ => idents[j - 2],
        };
        let call = if j == 0 { "x" } else { idents[j - 1] };
        code.push_str(&format!("    {ident} = {call}({arg})\n"));
    }
    code.push_str(&format!("    return {}\n", idents[idents.len() - 1]));

    let kept: Vec<&str> = idents
        .iter()
        .filter(|_| rng.random_range(0.0..1.0) < config.keep_rate)
        .copied()
        .collect();
    let kept = if kept.is_empty() {
        vec![idents[rng.random_range(0..idents.len())]]
    } else {
        kept
    };
    // prose decoration: docstrings carry keywords with punctuation glued
    // on (the NL side of the NL/PL surface gap); the generation stub's
    // identifier sanitization strips it back off
    let doc_tokens: Vec<String> = kept
        .iter()
        .map(|atom| match rng.random_range(0..3u32) {
            0 => format!("{atom},"),
            1 => format!("{atom}."),
            _ => format!("({atom})"),
        })
        .collect();

    DocCodePair {
        id: format!("synth-{index:04}"),
        language: config.language.clone(),
        doc_tokens,
        code_tokens: tokenize_raw(&code),
    }
}

/// Generate `num_pairs` synthetic pairs deterministically.
pub fn synth_pairs(config: &SynthConfig) -> Vec<DocCodePair> {
    (0..config.num_pairs).map(|i| synth_pair(config, i)).collect()
}

/// Generate the corpus and split off the last `holdout` pairs for
/// evaluation.
pub fn synth_splits(config: &SynthConfig, holdout: usize) -> Result<(CorpusSplit, CorpusSplit)> {
    if holdout >= config.num_pairs {
        return Err(GacrError::Config(format!(
            "holdout {holdout} must be smaller than num_pairs {}",
            config.num_pairs
        )));
    }
    let mut pairs = synth_pairs(config);
    let eval_pairs = pairs.split_off(config.num_pairs - holdout);
    Ok((
        CorpusSplit {
            name: "train".into(),
            candidate_pool_size: pairs.len(),
            pairs,
        },
        CorpusSplit {
            name: "test".into(),
            candidate_pool_size: eval_pairs.len(),
            pairs: eval_pairs,
        },
    ))
}

/// Write pairs as CodeSearchNet-layout JSONL.
pub fn write_jsonl(pairs: &[DocCodePair], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| GacrError::io(path, e))?;
    for pair in pairs {
        let record = serde_json::json!({
            "url": pair.id,
            "language": pair.language,
            "docstring_tokens": pair.doc_tokens,
            "code_tokens": pair.code_tokens,
        });
        writeln!(file, "{record}").map_err(|e| GacrError::io(path, e))?;
    }
    Ok(())
}
