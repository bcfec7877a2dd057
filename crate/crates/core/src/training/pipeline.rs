//! End-to-end training over a corpus split.
//!
//! Pairs are shuffled per epoch with a seeded permutation and processed
//! in full batches (the trailing partial batch is dropped so the
//! in-batch negative count stays constant). Queries and targets share
//! one encoder; gradients accumulate in batch-index order so the whole
//! trajectory is bitwise reproducible for a fixed seed.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;

use crate::corpus::{CorpusSplit, DocCodePair, VocabConfig, Vocabulary};
use crate::encoder::{
    assemble_doc_only, assemble_multi, assemble_single, assemble_target, backward_rows, forward,
    extract_query, extract_target, replicated_query, EncoderConfig,
    EncoderParams, FusedInput,
};
use crate::error::{GacrError, Result};
use crate::generation::{generate, truncate_snippet, Backend, GenerationConfig, SnippetCache};
use crate::seeds;
use crate::training::{batch_loss, batch_scores, OptimizerState, TrainConfig, TrainMode};

/// Everything a finished run produces. The encoder config carries the
/// realized vocabulary size.
#[derive(Debug)]
pub struct TrainOutput {
    pub params: EncoderParams,
    pub optimizer: OptimizerState,
    pub encoder_config: EncoderConfig,
    pub vocab: Vocabulary,
    pub epoch_losses: Vec<f64>,
}

/// Loss log: one line per epoch with 12 significant digits.
pub fn format_loss_log(epoch_losses: &[f64]) -> String {
    let mut out = String::new();
    for (i, loss) in epoch_losses.iter().enumerate() {
        out.push_str(&format!("epoch {} loss {:.11e}\n", i + 1, loss));
    }
    out
}

/// Number of cached snippets each pair needs under a training mode.
fn snippets_needed(config: &TrainConfig) -> usize {
    match config.mode {
        TrainMode::DocOnly => 0,
        TrainMode::GacrS => 1,
        TrainMode::GacrM => config.samples_per_query,
    }
}

/// Make sure the cache holds at least `needed` samples for every pair,
/// filling gaps through the stub backend or failing for remote-only runs.
pub fn ensure_snippets(
    pairs: &[DocCodePair],
    cache: &mut SnippetCache,
    gen_config: &GenerationConfig,
    needed: usize,
) -> Result<()> {
    if needed == 0 {
        return Ok(());
    }
    for pair in pairs {
        let present = cache.count_for(&pair.id);
        if present >= needed {
            continue;
        }
        if gen_config.backend == Backend::Remote {
            return Err(GacrError::MissingSnippets {
                pair_id: pair.id.clone(),
                needed,
                present,
            });
        }
        let fill = GenerationConfig {
            samples_per_prompt: needed,
            ..gen_config.clone()
        };
        generate(pair, &fill, cache)?;
    }
    Ok(())
}

/// Token lists of the snippets training will consume, for vocabulary
/// construction.
fn snippet_texts(
    pairs: &[DocCodePair],
    cache: &SnippetCache,
    needed: usize,
) -> Result<Vec<Vec<String>>> {
    let mut texts = Vec::new();
    for pair in pairs {
        for sample in 0..needed {
            let snippet = cache.get(&pair.id, sample).ok_or_else(|| {
                GacrError::MissingSnippets {
                    pair_id: pair.id.clone(),
                    needed,
                    present: sample,
                }
            })?;
            texts.push(snippet.tokens.clone());
        }
    }
    Ok(texts)
}

/// A pre-assembled training example: fused query input, the two hidden
/// rows feeding the dual query vector, and the target input.
struct Example {
    query: FusedInput,
    query_rows: (usize, usize),
    target: FusedInput,
}

/// Build the query input for one pair under a training mode.
pub fn assemble_query(
    pair: &DocCodePair,
    cache: &SnippetCache,
    vocab: &Vocabulary,
    mode: TrainMode,
    cap: usize,
    k: usize,
    config: &EncoderConfig,
) -> Result<FusedInput> {
    let doc_ids = vocab.encode(&pair.doc_tokens);
    match mode {
        TrainMode::DocOnly => Ok(assemble_doc_only(
            &doc_ids,
            config.max_seq_len,
            config.mask_type,
        )),
        TrainMode::GacrS => {
            let snippet = cache.get(&pair.id, 0).ok_or_else(|| {
                GacrError::MissingSnippets {
                    pair_id: pair.id.clone(),
                    needed: 1,
                    present: 0,
                }
            })?;
            let gen_ids = vocab.encode(&truncate_snippet(&snippet.tokens, cap));
            assemble_single(&doc_ids, &gen_ids, config.max_seq_len, config.mask_type)
        }
        TrainMode::GacrM => {
            let mut snippet_ids = Vec::with_capacity(k);
            for sample in 0..k {
                let snippet = cache.get(&pair.id, sample).ok_or_else(|| {
                    GacrError::MissingSnippets {
                        pair_id: pair.id.clone(),
                        needed: k,
                        present: sample,
                    }
                })?;
                snippet_ids.push(vocab.encode(&truncate_snippet(&snippet.tokens, cap)));
            }
            assemble_multi(
                &doc_ids,
                &snippet_ids,
                cap,
                config.max_seq_len,
                config.mask_type,
            )
        }
    }
}

fn query_rows(input: &FusedInput, mode: TrainMode) -> (usize, usize) {
    match mode {
        TrainMode::DocOnly => (0, 0),
        _ => (input.cls_positions[0], input.cls_positions[1]),
    }
}

/// Train the encoder on a split. Returns the final parameters, optimizer
/// state, vocabulary, and the per-epoch mean loss curve.
pub fn train(
    corpus: &CorpusSplit,
    cache: &mut SnippetCache,
    gen_config: &GenerationConfig,
    train_config: &TrainConfig,
    encoder_config: &EncoderConfig,
    vocab_config: &VocabConfig,
) -> Result<TrainOutput> {
    train_config.validate()?;
    encoder_config.validate()?;
    let b = train_config.batch_size;
    let n_pairs = corpus.pairs.len();
    if b > n_pairs {
        return Err(GacrError::Config(format!(
            "batch size {b} exceeds corpus of {n_pairs} pairs; no full batch exists"
        )));
    }

    let needed = snippets_needed(train_config);
    ensure_snippets(&corpus.pairs, cache, gen_config, needed)?;

    let extra = snippet_texts(&corpus.pairs, cache, needed)?;
    let vocab = Vocabulary::build(
        &[corpus],
        &extra,
        vocab_config.max_size,
        vocab_config.min_freq,
    )?;

    let config = EncoderConfig {
        vocab_size: vocab.len(),
        ..encoder_config.clone()
    };

    let examples: Vec<Example> = corpus
        .pairs
        .iter()
        .map(|pair| {
            let query = assemble_query(
                pair,
                cache,
                &vocab,
                train_config.mode,
                train_config.snippet_cap,
                train_config.samples_per_query,
                &config,
            )?;
            let rows = query_rows(&query, train_config.mode);
            let target = assemble_target(
                &vocab.encode(&pair.code_tokens),
                config.max_seq_len,
                config.mask_type,
            );
            Ok(Example {
                query,
                query_rows: rows,
                target,
            })
        })
        .collect::<Result<_>>()?;

    let mut params = EncoderParams::init(&config);
    let mut optimizer = OptimizerState::new(&params);
    let mut grads = params.zeros_like();
    let mut epoch_losses = Vec::with_capacity(train_config.epochs);

    for epoch in 0..train_config.epochs {
        let mut order: Vec<usize> = (0..n_pairs).collect();
        let mut rng = seeds::rng_indexed(train_config.seed, "epoch-shuffle", epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(b) {
            let mut queries = Vec::with_capacity(b);
            let mut targets = Vec::with_capacity(b);
            let mut query_traces = Vec::with_capacity(b);
            let mut target_traces = Vec::with_capacity(b);
            for &idx in chunk {
                let ex = &examples[idx];
                let (hidden, trace) = forward(&params, &ex.query)?;
                let qvec = if ex.query_rows.0 == ex.query_rows.1 {
                    replicated_query(&hidden)
                } else {
                    extract_query(&hidden, &ex.query.cls_positions)?
                };
                queries.push(qvec);
                query_traces.push(trace);

                let (hidden, trace) = forward(&params, &ex.target)?;
                targets.push(extract_target(&hidden));
                target_traces.push(trace);
            }

            let scores = batch_scores(&queries, &targets)?;
            let (loss, grad_scores) = batch_loss(&scores, train_config.loss_form)?;
            loss_sum += loss;
            batches += 1;

            // dL/d(query CLS rows) and dL/d(target CLS row)
            let d = config.model_dim;
            let mut z_rows = Array2::zeros((b, d));
            let mut q_sums = Array2::zeros((b, d));
            for j in 0..b {
                z_rows.row_mut(j).assign(&targets[j].v);
                q_sums
                    .row_mut(j)
                    .assign(&(&queries[j].v_doc + &queries[j].v_gen));
            }
            let grad_queries = grad_scores.dot(&z_rows); // (B, d)
            let grad_targets = grad_scores.t().dot(&q_sums); // (B, d)

            for a in grads.arrays_mut() {
                a.fill(0.0);
            }
            for (pos, &idx) in chunk.iter().enumerate() {
                let ex = &examples[idx];
                let gq: ArrayView1<f64> = grad_queries.row(pos);
                let seed_rows = [(ex.query_rows.0, gq), (ex.query_rows.1, gq)];
                backward_rows(&params, &query_traces[pos], &seed_rows, &mut grads)?;
                let gt = [(0usize, grad_targets.row(pos))];
                backward_rows(&params, &target_traces[pos], &gt, &mut grads)?;
            }

            optimizer.apply(
                &mut params,
                &grads,
                train_config.learning_rate,
                train_config.adam_beta1,
                train_config.adam_beta2,
                train_config.adam_eps,
            );
        }

        epoch_losses.push(if batches > 0 {
            loss_sum / batches as f64
        } else {
            0.0
        });
    }

    Ok(TrainOutput {
        params,
        optimizer,
        encoder_config: config,
        vocab,
        epoch_losses,
    })
}
