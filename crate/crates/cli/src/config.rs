//! Run configuration: a sectioned TOML file with command-line overrides.
//!
//! Every key has a default so a missing config file still yields a
//! runnable setup; unknown keys are rejected to catch typos early.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use gacr_core::corpus::VocabConfig;
use gacr_core::encoder::{EncoderConfig, MaskType};
use gacr_core::generation::{Backend, GenerationConfig, DEFAULT_RETRY_BASE_MS};
use gacr_core::retrieval::QueryVariant;
use gacr_core::training::{LossForm, TrainConfig, TrainMode};

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub vocab: VocabSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: PathBuf,
    pub cache: PathBuf,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub index: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            train: "out/synth_train.jsonl".into(),
            valid: None,
            test: "out/synth_test.jsonl".into(),
            cache: "out/snippets.jsonl".into(),
            checkpoint: "out/model.ckpt".into(),
            vocab: "out/vocab.txt".into(),
            index: "out/pool.idx".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub mask_type: String,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            ffn_dim: 128,
            max_seq_len: 256,
            mask_type: "A".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub backend: String,
    pub samples_per_prompt: usize,
    pub max_generated_tokens: usize,
    pub temperature: f64,
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env: String,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            backend: "stub".into(),
            samples_per_prompt: 3,
            max_generated_tokens: 64,
            temperature: 0.2,
            endpoint_url: String::new(),
            model_name: "code-davinci-002".into(),
            api_key_env: "GACR_GEN_API_KEY".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mode: String,
    pub snippet_cap: usize,
    pub k: usize,
    pub loss_form: String,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: 16,
            epochs: 10,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mode: "gacr_s".into(),
            snippet_cap: 64,
            k: 3,
            loss_form: "log_softmax".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    /// 0 ranks the full per-language pool.
    pub pool_cap: usize,
    pub top_k: usize,
    pub variants: Vec<String>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            pool_cap: 0,
            top_k: 10,
            variants: vec!["doc_only".into(), "gacr_s".into()],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSection {
    pub max_size: usize,
    pub min_freq: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            max_size: 8192,
            min_freq: 2,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub num_pairs: usize,
    pub holdout: usize,
    pub keep_rate: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            num_pairs: 600,
            holdout: 100,
            keep_rate: 0.3,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub mask: Option<String>,
    pub cap: Option<usize>,
    pub k: Option<usize>,
    pub jobs: Option<usize>,
    pub top_k: Option<usize>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub paths: ResolvedPaths,
    pub encoder: EncoderConfig,
    pub generation: GenerationConfig,
    pub training: TrainConfig,
    pub vocab: VocabConfig,
    pub pool_cap: Option<usize>,
    pub top_k: usize,
    pub variants: Vec<QueryVariant>,
    pub synth_pairs: usize,
    pub synth_holdout: usize,
    pub synth_keep_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ResolvedPaths {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: PathBuf,
    pub cache: PathBuf,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub index: PathBuf,
    pub out_dir: PathBuf,
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let file: FileConfig = match path {
        Some(p) => {
            let body = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            toml::from_str(&body).with_context(|| format!("invalid config {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    resolve(file, overrides)
}

fn resolve(file: FileConfig, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let seed = overrides.seed.or(file.seed).unwrap_or(42);
    let jobs = overrides.jobs.or(file.jobs).unwrap_or(0);

    let mask_name = overrides
        .mask
        .clone()
        .unwrap_or_else(|| file.encoder.mask_type.clone());
    let mask_type = MaskType::parse(&mask_name)?;

    let encoder = EncoderConfig {
        num_layers: file.encoder.num_layers,
        num_heads: file.encoder.num_heads,
        model_dim: file.encoder.model_dim,
        ffn_dim: file.encoder.ffn_dim,
        max_seq_len: file.encoder.max_seq_len,
        vocab_size: file.vocab.max_size,
        mask_type,
        seed,
    };
    encoder.validate()?;

    let backend = match file.generation.backend.as_str() {
        "stub" => Backend::Stub,
        "remote" => Backend::Remote,
        other => bail!("unknown generation backend {other:?} (expected stub or remote)"),
    };
    let k = overrides.k.unwrap_or(file.training.k);
    let generation = GenerationConfig {
        backend,
        samples_per_prompt: k.max(file.generation.samples_per_prompt),
        max_generated_tokens: file.generation.max_generated_tokens,
        temperature: file.generation.temperature,
        endpoint_url: file.generation.endpoint_url,
        model_name: file.generation.model_name,
        api_key_env: file.generation.api_key_env,
        seed,
        retry_base_ms: DEFAULT_RETRY_BASE_MS,
    };
    generation.validate()?;

    let mode_name = overrides
        .mode
        .clone()
        .unwrap_or_else(|| file.training.mode.clone());
    let loss_form = match file.training.loss_form.as_str() {
        "log_softmax" => LossForm::LogSoftmax,
        "literal_softmax" => LossForm::LiteralSoftmax,
        other => bail!("unknown loss_form {other:?} (expected log_softmax or literal_softmax)"),
    };
    let training = TrainConfig {
        batch_size: file.training.batch_size,
        epochs: file.training.epochs,
        learning_rate: file.training.learning_rate,
        adam_beta1: file.training.adam_beta1,
        adam_beta2: file.training.adam_beta2,
        adam_eps: file.training.adam_eps,
        mode: TrainMode::parse(&mode_name)?,
        snippet_cap: overrides.cap.unwrap_or(file.training.snippet_cap),
        samples_per_query: k,
        seed,
        loss_form,
    };
    training.validate()?;

    let variants = file
        .retrieval
        .variants
        .iter()
        .map(|v| QueryVariant::parse(v).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<Vec<_>>>()?;

    Ok(RunConfig {
        seed,
        jobs,
        paths: ResolvedPaths {
            train: file.paths.train,
            valid: file.paths.valid,
            test: file.paths.test,
            cache: file.paths.cache,
            checkpoint: file.paths.checkpoint,
            vocab: file.paths.vocab,
            index: file.paths.index,
            out_dir: file.paths.out_dir,
        },
        encoder,
        generation,
        training,
        vocab: VocabConfig {
            max_size: file.vocab.max_size,
            min_freq: file.vocab.min_freq,
        },
        pool_cap: (file.retrieval.pool_cap > 0).then_some(file.retrieval.pool_cap),
        top_k: overrides.top_k.unwrap_or(file.retrieval.top_k),
        variants,
        synth_pairs: file.synth.num_pairs,
        synth_holdout: file.synth.holdout,
        synth_keep_rate: file.synth.keep_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = load(None, &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.encoder.model_dim, 64);
        assert_eq!(cfg.training.snippet_cap, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<FileConfig>("mystery_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("mystery_key"));
        assert!(toml::from_str::<FileConfig>("[encoder]\nnum_heds = 2\n").is_err());
    }

    #[test]
    fn overrides_win_over_file_values() {
        let file: FileConfig = toml::from_str("seed = 7\n[training]\nbatch_size = 4\nepochs = 1\nlearning_rate = 0.001\nadam_beta1 = 0.9\nadam_beta2 = 0.999\nadam_eps = 1e-8\nmode = \"doc_only\"\nsnippet_cap = 32\nk = 2\nloss_form = \"log_softmax\"\n").unwrap();
        let over = Overrides {
            seed: Some(9),
            mode: Some("gacr_m".into()),
            cap: Some(128),
            ..Overrides::default()
        };
        let cfg = resolve(file, &over).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.training.mode, TrainMode::GacrM);
        assert_eq!(cfg.training.snippet_cap, 128);
        assert_eq!(cfg.training.batch_size, 4);
    }

    #[test]
    fn seed_flows_into_every_config() {
        let over = Overrides {
            seed: Some(1234),
            ..Overrides::default()
        };
        let cfg = load(None, &over).unwrap();
        assert_eq!(cfg.encoder.seed, 1234);
        assert_eq!(cfg.generation.seed, 1234);
        assert_eq!(cfg.training.seed, 1234);
    }
}
