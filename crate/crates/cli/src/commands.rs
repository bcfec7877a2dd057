//! Subcommand implementations.

use std::path::Path;

use anyhow::{anyhow, bail, Context};

use gacr_core::corpus::{load_corpus, CorpusSplit, Vocabulary};
use gacr_core::encoder::{assemble_single, extract_query, forward, grad_check, EncoderConfig};
use gacr_core::generation::{generate, generate_all, truncate_snippet, GenerationConfig, SnippetCache};
use gacr_core::retrieval::{
    build_index, compare_superior, eval_variants, load_index, rank_dump, render_sweep_table,
    render_table, report_jsonl, save_index, search as index_search, sweep as run_sweep,
    sweep_jsonl, EvalOptions, QueryVariant, SweepAxis, SweepInputs, SweepMode,
};
use gacr_core::seeds;
use gacr_core::synth::{synth_splits, write_jsonl, SynthConfig};
use gacr_core::training::{format_loss_log, train as train_encoder, Checkpoint};

use crate::config::RunConfig;
use crate::UsageError;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn load_split(path: &Path, name: &str) -> anyhow::Result<CorpusSplit> {
    let loaded = load_corpus(path, name)?;
    if loaded.skipped_lines > 0 {
        eprintln!(
            "warning: skipped {} malformed line(s) in {}",
            loaded.skipped_lines,
            path.display()
        );
    }
    Ok(loaded.split)
}

fn split_path<'a>(cfg: &'a RunConfig, name: &str) -> anyhow::Result<&'a Path> {
    match name {
        "train" => Ok(&cfg.paths.train),
        "valid" => cfg
            .paths
            .valid
            .as_deref()
            .ok_or_else(|| anyhow!(UsageError("no valid split configured".into()))),
        "test" => Ok(&cfg.paths.test),
        other => Err(anyhow!(UsageError(format!(
            "unknown split {other:?} (expected train, valid, or test)"
        )))),
    }
}

fn open_cache(cfg: &RunConfig) -> anyhow::Result<SnippetCache> {
    if let Some(dir) = cfg.paths.cache.parent() {
        std::fs::create_dir_all(dir).ok();
    }
    Ok(SnippetCache::open(&cfg.paths.cache)?)
}

fn load_model(cfg: &RunConfig) -> anyhow::Result<(Checkpoint, Vocabulary)> {
    let checkpoint = Checkpoint::load(&cfg.paths.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", cfg.paths.checkpoint.display()))?;
    let vocab = Vocabulary::load(&cfg.paths.vocab)
        .with_context(|| format!("cannot load vocabulary {}", cfg.paths.vocab.display()))?;
    if checkpoint.config.vocab_size != vocab.len() {
        bail!(
            "vocabulary {} has {} entries but checkpoint expects {}",
            cfg.paths.vocab.display(),
            vocab.len(),
            checkpoint.config.vocab_size
        );
    }
    Ok((checkpoint, vocab))
}

/// Evaluation-time encoder config: checkpoint dimensions with the mask
/// type requested for this run.
fn eval_config(cfg: &RunConfig, checkpoint: &Checkpoint) -> EncoderConfig {
    EncoderConfig {
        mask_type: cfg.encoder.mask_type,
        ..checkpoint.config.clone()
    }
}

pub fn ingest(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut names: Vec<(&str, &Path)> = vec![("train", cfg.paths.train.as_path())];
    if let Some(valid) = cfg.paths.valid.as_deref() {
        names.push(("valid", valid));
    }
    names.push(("test", cfg.paths.test.as_path()));

    for (name, path) in names {
        let loaded = load_corpus(path, name)?;
        let split = &loaded.split;
        let doc_mean: f64 = split.pairs.iter().map(|p| p.doc_tokens.len()).sum::<usize>() as f64
            / split.pairs.len() as f64;
        let code_mean: f64 = split.pairs.iter().map(|p| p.code_tokens.len()).sum::<usize>() as f64
            / split.pairs.len() as f64;
        let languages: Vec<String> = split
            .by_language()
            .iter()
            .map(|(lang, idx)| format!("{lang}={}", idx.len()))
            .collect();
        println!(
            "{name}: {} pairs ({} skipped), mean doc {doc_mean:.1} tokens, mean code {code_mean:.1} tokens, languages: {}",
            split.pairs.len(),
            loaded.skipped_lines,
            languages.join(" ")
        );
    }
    Ok(())
}

pub fn gen(cfg: &RunConfig, split_name: &str) -> anyhow::Result<()> {
    let split = load_split(split_path(cfg, split_name)?, split_name)?;
    let mut cache = open_cache(cfg)?;
    let added = generate_all(&split.pairs, &cfg.generation, &mut cache)?;
    println!(
        "generated {added} new snippet(s); cache {} now holds {}",
        cfg.paths.cache.display(),
        cache.len()
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> anyhow::Result<()> {
    let synth_cfg = SynthConfig {
        num_pairs: cfg.synth_pairs,
        seed: cfg.seed,
        keep_rate: cfg.synth_keep_rate,
        ..SynthConfig::default()
    };
    let (train_split, test_split) = synth_splits(&synth_cfg, cfg.synth_holdout)?;
    for path in [&cfg.paths.train, &cfg.paths.test] {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).ok();
        }
    }
    write_jsonl(&train_split.pairs, &cfg.paths.train)?;
    write_jsonl(&test_split.pairs, &cfg.paths.test)?;
    println!(
        "wrote {} train pairs to {} and {} held-out pairs to {}",
        train_split.pairs.len(),
        cfg.paths.train.display(),
        test_split.pairs.len(),
        cfg.paths.test.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let split = load_split(&cfg.paths.train, "train")?;
    let mut cache = open_cache(cfg)?;
    let out = train_encoder(
        &split,
        &mut cache,
        &cfg.generation,
        &cfg.training,
        &cfg.encoder,
        &cfg.vocab,
    )?;

    for path in [&cfg.paths.checkpoint, &cfg.paths.vocab] {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).ok();
        }
    }
    std::fs::create_dir_all(&cfg.paths.out_dir).ok();

    let checkpoint = Checkpoint::new(
        out.encoder_config.clone(),
        out.params,
        Some(out.optimizer),
    );
    checkpoint.save(&cfg.paths.checkpoint)?;
    out.vocab.save(&cfg.paths.vocab)?;
    let loss_log = format_loss_log(&out.epoch_losses);
    let log_path = cfg.paths.out_dir.join("loss.log");
    std::fs::write(&log_path, &loss_log)
        .with_context(|| format!("cannot write {}", log_path.display()))?;

    print!("{loss_log}");
    println!(
        "checkpoint {} (vocab {} entries, fingerprint {})",
        cfg.paths.checkpoint.display(),
        out.vocab.len(),
        checkpoint.fingerprint()
    );
    Ok(())
}

pub fn index(cfg: &RunConfig, split_name: &str) -> anyhow::Result<()> {
    let split = load_split(split_path(cfg, split_name)?, split_name)?;
    let (checkpoint, vocab) = load_model(cfg)?;
    let idx = build_index(&split.pairs, &vocab, &checkpoint.params, &checkpoint.config)?;
    if let Some(dir) = cfg.paths.index.parent() {
        std::fs::create_dir_all(dir).ok();
    }
    save_index(&idx, &cfg.paths.index)?;
    println!(
        "indexed {} candidates from {split_name} into {} (fingerprint {})",
        idx.ids.len(),
        cfg.paths.index.display(),
        idx.fingerprint
    );
    Ok(())
}

pub fn search(cfg: &RunConfig, query: &str) -> anyhow::Result<()> {
    if query.trim().is_empty() {
        bail!(UsageError("search needs a non-empty --query".into()));
    }
    let (checkpoint, vocab) = load_model(cfg)?;
    if !cfg.paths.index.exists() {
        bail!("index not found at {}; run `gacr index` first", cfg.paths.index.display());
    }
    let idx = load_index(&cfg.paths.index)?;
    if idx.fingerprint != checkpoint.fingerprint() {
        bail!(
            "index {} was built from different parameters; rebuild with `gacr index`",
            cfg.paths.index.display()
        );
    }

    let doc_tokens = gacr_core::corpus::tokenize_raw(query);
    let pair = gacr_core::corpus::DocCodePair {
        id: format!("query-{:016x}", seeds::fnv1a(query.as_bytes())),
        language: "query".to_string(),
        doc_tokens,
        code_tokens: vec!["-".to_string()],
    };
    let mut cache = open_cache(cfg)?;
    let gen_cfg = GenerationConfig {
        samples_per_prompt: 1,
        ..cfg.generation.clone()
    };
    let snippets = generate(&pair, &gen_cfg, &mut cache)?;

    let config = eval_config(cfg, &checkpoint);
    let doc_ids = vocab.encode(&pair.doc_tokens);
    let gen_ids = vocab.encode(&truncate_snippet(&snippets[0].tokens, cfg.training.snippet_cap));
    let input = assemble_single(&doc_ids, &gen_ids, config.max_seq_len, config.mask_type)?;
    let (hidden, _) = forward(&checkpoint.params, &input)?;
    let query_vec = extract_query(&hidden, &input.cls_positions)?;

    let ranked = index_search(&pair.id, &query_vec, &idx, cfg.top_k)?;
    for (rank, (id, score)) in ranked.entries.iter().enumerate() {
        println!("{:>3}. {id}  {score:.6}", rank + 1);
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> anyhow::Result<()> {
    if !cfg.paths.index.exists() {
        bail!("index not found at {}; run `gacr index` first", cfg.paths.index.display());
    }
    let (checkpoint, vocab) = load_model(cfg)?;
    let idx = load_index(&cfg.paths.index)?;
    if idx.fingerprint != checkpoint.fingerprint() {
        bail!(
            "index {} was built from different parameters; rebuild with `gacr index`",
            cfg.paths.index.display()
        );
    }

    let split = load_split(&cfg.paths.test, "test")?;
    let mut cache = open_cache(cfg)?;
    let config = eval_config(cfg, &checkpoint);
    let options = EvalOptions {
        variants: cfg.variants.clone(),
        cap: cfg.training.snippet_cap,
        k: cfg.training.samples_per_query,
        pool_cap: cfg.pool_cap,
        seed: cfg.seed,
    };
    let report = eval_variants(
        &split,
        &mut cache,
        &cfg.generation,
        &vocab,
        &checkpoint.params,
        &config,
        &options,
    )?;

    std::fs::create_dir_all(&cfg.paths.out_dir).ok();
    let table = render_table(&report);
    std::fs::write(cfg.paths.out_dir.join("eval_report.txt"), &table)?;
    std::fs::write(cfg.paths.out_dir.join("eval_report.jsonl"), report_jsonl(&report))?;
    for &variant in &cfg.variants {
        let dump = rank_dump(&report, variant);
        std::fs::write(
            cfg.paths.out_dir.join(format!("ranks_{}.txt", variant.label())),
            dump,
        )?;
    }
    print!("{table}");

    if cfg.variants.contains(&QueryVariant::DocOnly) {
        let baseline = report.rank_map(QueryVariant::DocOnly);
        for &variant in &cfg.variants {
            if variant == QueryVariant::DocOnly {
                continue;
            }
            let ranks = report.rank_map(variant);
            let (better, worse, ties) = compare_superior(&ranks, &baseline)?;
            println!(
                "superior queries vs doc_only — {}: {better} better, {worse} worse, {ties} ties",
                variant.label()
            );
        }
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, axis: &str, fixed_checkpoint: bool) -> anyhow::Result<()> {
    let axis = match axis {
        "cap" => SweepAxis::Cap,
        "mask" => SweepAxis::Mask,
        other => bail!(UsageError(format!("unknown sweep axis {other:?} (expected cap or mask)"))),
    };

    let train_split = load_split(&cfg.paths.train, "train")?;
    let eval_split = load_split(&cfg.paths.test, "test")?;
    let mut cache = open_cache(cfg)?;
    let inputs = SweepInputs {
        train_split: &train_split,
        eval_split: &eval_split,
        gen_config: &cfg.generation,
        train_config: &cfg.training,
        encoder_config: &cfg.encoder,
        vocab_config: &cfg.vocab,
        pool_cap: cfg.pool_cap,
    };

    let rows = if fixed_checkpoint {
        let (checkpoint, vocab) = load_model(cfg)?;
        let config = checkpoint.config.clone();
        run_sweep(
            &inputs,
            &mut cache,
            axis,
            SweepMode::Fixed {
                vocab: &vocab,
                params: &checkpoint.params,
                config: &config,
            },
        )?
    } else {
        run_sweep(&inputs, &mut cache, axis, SweepMode::Retrain)?
    };

    let axis_name = match axis {
        SweepAxis::Cap => "cap",
        SweepAxis::Mask => "mask",
    };
    let table = render_sweep_table(axis, &rows);
    std::fs::create_dir_all(&cfg.paths.out_dir).ok();
    std::fs::write(cfg.paths.out_dir.join(format!("sweep_{axis_name}.txt")), &table)?;
    std::fs::write(
        cfg.paths.out_dir.join(format!("sweep_{axis_name}.jsonl")),
        sweep_jsonl(axis, &rows),
    )?;
    print!("{table}");
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, probes: usize) -> anyhow::Result<()> {
    let config = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        model_dim: 16,
        ffn_dim: 32,
        max_seq_len: 24,
        vocab_size: 64,
        mask_type: cfg.encoder.mask_type,
        seed: cfg.seed,
    };
    let started = std::time::Instant::now();
    let err = grad_check(&config, cfg.seed, probes)?;
    println!(
        "gradcheck: max relative error {err:.3e} over {probes} probes ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
    if err >= GRADCHECK_TOLERANCE {
        bail!("gradient check failed: {err:.3e} >= {GRADCHECK_TOLERANCE:.0e}");
    }
    Ok(())
}
