//! Evaluation harness: query-variant studies, MRR reports, and the
//! cap/mask ablation sweeps.
//!
//! All variants of one run score against the same candidate index. Pools
//! are per-language; when a pool cap is set, a seeded sample of that
//! language's pairs forms both the query set and the pool.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::corpus::{CorpusSplit, VocabConfig, Vocabulary};
use crate::encoder::{
    assemble_doc_only, extract_query, forward, replicated_query, DualQueryVector, EncoderConfig,
    EncoderParams, MaskType,
};
use crate::error::{GacrError, Result};
use crate::generation::{split_name_body, GenerationConfig, SnippetCache};
use crate::retrieval::{build_index, mrr, search};
use crate::seeds;
use crate::training::{assemble_query, ensure_snippets, train, TrainConfig, TrainMode};

pub const CAP_SWEEP_VALUES: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QueryVariant {
    DocOnly,
    GenFull,
    GenName,
    GenBody,
    GacrS,
    GacrM,
}

impl QueryVariant {
    pub const ALL: [QueryVariant; 6] = [
        QueryVariant::DocOnly,
        QueryVariant::GenFull,
        QueryVariant::GenName,
        QueryVariant::GenBody,
        QueryVariant::GacrS,
        QueryVariant::GacrM,
    ];

    pub fn parse(s: &str) -> Result<QueryVariant> {
        match s {
            "doc_only" => Ok(QueryVariant::DocOnly),
            "gen_full" => Ok(QueryVariant::GenFull),
            "gen_name" => Ok(QueryVariant::GenName),
            "gen_body" => Ok(QueryVariant::GenBody),
            "gacr_s" => Ok(QueryVariant::GacrS),
            "gacr_m" => Ok(QueryVariant::GacrM),
            _ => Err(GacrError::Config(format!("unknown query variant {s:?}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            QueryVariant::DocOnly => "doc_only",
            QueryVariant::GenFull => "gen_full",
            QueryVariant::GenName => "gen_name",
            QueryVariant::GenBody => "gen_body",
            QueryVariant::GacrS => "gacr_s",
            QueryVariant::GacrM => "gacr_m",
        }
    }

    fn snippets_needed(&self, k: usize) -> usize {
        match self {
            QueryVariant::DocOnly => 0,
            QueryVariant::GacrM => k,
            _ => 1,
        }
    }

    pub fn for_mode(mode: TrainMode) -> QueryVariant {
        match mode {
            TrainMode::DocOnly => QueryVariant::DocOnly,
            TrainMode::GacrS => QueryVariant::GacrS,
            TrainMode::GacrM => QueryVariant::GacrM,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub variants: Vec<QueryVariant>,
    pub cap: usize,
    pub k: usize,
    /// Cap on the per-language candidate pool; `None` ranks the full split.
    pub pool_cap: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub variant: QueryVariant,
    pub language: String,
    pub mrr: f64,
    pub num_queries: usize,
    pub mask: MaskType,
    pub cap: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// (variant label, query id) -> (ground-truth rank, ground-truth score)
    pub ranks: BTreeMap<(String, String), (usize, f64)>,
}

impl EvalReport {
    pub fn row(&self, variant: QueryVariant, language: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.language == language)
    }

    /// Per-query ground-truth ranks for one variant.
    pub fn rank_map(&self, variant: QueryVariant) -> BTreeMap<String, usize> {
        let label = variant.label();
        self.ranks
            .iter()
            .filter(|((v, _), _)| v == label)
            .map(|((_, q), (rank, _))| (q.clone(), *rank))
            .collect()
    }
}

fn build_variant_query(
    pair: &crate::corpus::DocCodePair,
    variant: QueryVariant,
    cache: &SnippetCache,
    vocab: &Vocabulary,
    config: &EncoderConfig,
    cap: usize,
    k: usize,
    params: &EncoderParams,
) -> Result<DualQueryVector> {
    let single_segment = |tokens: &[String]| -> Result<DualQueryVector> {
        let input = assemble_doc_only(&vocab.encode(tokens), config.max_seq_len, config.mask_type);
        let (hidden, _) = forward(params, &input)?;
        Ok(replicated_query(&hidden))
    };

    match variant {
        QueryVariant::DocOnly => single_segment(&pair.doc_tokens),
        QueryVariant::GenFull | QueryVariant::GenName | QueryVariant::GenBody => {
            let snippet = cache.get(&pair.id, 0).ok_or_else(|| {
                GacrError::MissingSnippets {
                    pair_id: pair.id.clone(),
                    needed: 1,
                    present: 0,
                }
            })?;
            match variant {
                QueryVariant::GenFull => single_segment(&snippet.tokens),
                QueryVariant::GenName => single_segment(&split_name_body(snippet).0),
                QueryVariant::GenBody => single_segment(&split_name_body(snippet).1),
                _ => unreachable!(),
            }
        }
        QueryVariant::GacrS | QueryVariant::GacrM => {
            let mode = if variant == QueryVariant::GacrS {
                TrainMode::GacrS
            } else {
                TrainMode::GacrM
            };
            let input = assemble_query(pair, cache, vocab, mode, cap, k, config)?;
            let (hidden, _) = forward(params, &input)?;
            extract_query(&hidden, &input.cls_positions)
        }
    }
}

/// Evaluate query variants against per-language candidate pools, sharing
/// one index per language. Emits one row per (variant, language) plus a
/// macro-averaged `overall` row per variant.
pub fn eval_variants(
    split: &CorpusSplit,
    cache: &mut SnippetCache,
    gen_config: &GenerationConfig,
    vocab: &Vocabulary,
    params: &EncoderParams,
    config: &EncoderConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let needed = options
        .variants
        .iter()
        .map(|v| v.snippets_needed(options.k))
        .max()
        .unwrap_or(0);

    let by_language = split.by_language();
    let mut rows = Vec::new();
    let mut ranks = BTreeMap::new();
    let mut per_variant_language_mrr: BTreeMap<QueryVariant, Vec<(f64, usize)>> = BTreeMap::new();

    for (language, indices) in &by_language {
        let pool_indices: Vec<usize> = match options.pool_cap {
            Some(cap) if cap < indices.len() => {
                let mut shuffled = indices.clone();
                let mut rng =
                    seeds::rng(options.seed, &format!("pool-sample-{language}"));
                shuffled.shuffle(&mut rng);
                let mut picked: Vec<usize> = shuffled.into_iter().take(cap).collect();
                picked.sort_unstable();
                picked
            }
            _ => indices.clone(),
        };
        let pool: Vec<crate::corpus::DocCodePair> = pool_indices
            .iter()
            .map(|&i| split.pairs[i].clone())
            .collect();

        ensure_snippets(&pool, cache, gen_config, needed)?;
        let index = build_index(&pool, vocab, params, config)?;
        let pool_size = pool.len();

        for &variant in &options.variants {
            let mut ranked_lists = Vec::with_capacity(pool_size);
            for pair in &pool {
                let query = build_variant_query(
                    pair,
                    variant,
                    cache,
                    vocab,
                    config,
                    options.cap,
                    options.k,
                    params,
                )?;
                let ranked = search(&pair.id, &query, &index, pool_size)?;
                let rank = ranked.rank_of(&pair.id).ok_or_else(|| {
                    GacrError::Contract(format!("query {} missing from its own pool", pair.id))
                })?;
                let score = ranked.entries[rank - 1].1;
                ranks.insert(
                    (variant.label().to_string(), pair.id.clone()),
                    (rank, score),
                );
                ranked_lists.push(ranked);
            }
            let truth: BTreeMap<String, String> = pool
                .iter()
                .map(|p| (p.id.clone(), p.id.clone()))
                .collect();
            let language_mrr = mrr(&ranked_lists, &truth)?;
            per_variant_language_mrr
                .entry(variant)
                .or_default()
                .push((language_mrr, pool_size));
            rows.push(EvalRow {
                variant,
                language: language.to_string(),
                mrr: language_mrr,
                num_queries: pool_size,
                mask: config.mask_type,
                cap: options.cap,
                k: options.k,
            });
        }
    }

    // macro average across languages, in variant order of appearance
    for &variant in &options.variants {
        if let Some(entries) = per_variant_language_mrr.get(&variant) {
            let overall = entries.iter().map(|(m, _)| m).sum::<f64>() / entries.len() as f64;
            let total: usize = entries.iter().map(|(_, n)| n).sum();
            rows.push(EvalRow {
                variant,
                language: "overall".to_string(),
                mrr: overall,
                num_queries: total,
                mask: config.mask_type,
                cap: options.cap,
                k: options.k,
            });
        }
    }

    Ok(EvalReport { rows, ranks })
}

/// Human-readable aligned table.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:<12} {:>8} {:>8}  {:<4} {:>5} {:>3}\n",
        "variant", "language", "mrr", "queries", "mask", "cap", "k"
    ));
    for r in &report.rows {
        out.push_str(&format!(
            "{:<10} {:<12} {:>8.4} {:>8}  {:<4} {:>5} {:>3}\n",
            r.variant.label(),
            r.language,
            r.mrr,
            r.num_queries,
            r.mask.letter(),
            r.cap,
            r.k
        ));
    }
    out
}

/// Machine-readable line-delimited records.
pub fn report_jsonl(report: &EvalReport) -> String {
    let mut out = String::new();
    for r in &report.rows {
        let record = serde_json::json!({
            "variant": r.variant.label(),
            "language": r.language,
            "mrr": r.mrr,
            "mask": r.mask.letter(),
            "cap": r.cap,
            "k": r.k,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

/// Rank dump for one variant: `query_id rank score` per line.
pub fn rank_dump(report: &EvalReport, variant: QueryVariant) -> String {
    let label = variant.label();
    let mut out = String::new();
    for ((v, query), (rank, score)) in &report.ranks {
        if v == label {
            out.push_str(&format!("{query} {rank} {score:.6e}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Cap,
    Mask,
}

/// Whether a sweep retrains per axis value or re-evaluates fixed
/// parameters.
pub enum SweepMode<'a> {
    Retrain,
    Fixed {
        vocab: &'a Vocabulary,
        params: &'a EncoderParams,
        config: &'a EncoderConfig,
    },
}

#[derive(Debug)]
pub struct SweepRow {
    pub label: String,
    pub report: EvalReport,
}

pub struct SweepInputs<'a> {
    pub train_split: &'a CorpusSplit,
    pub eval_split: &'a CorpusSplit,
    pub gen_config: &'a GenerationConfig,
    pub train_config: &'a TrainConfig,
    pub encoder_config: &'a EncoderConfig,
    pub vocab_config: &'a VocabConfig,
    pub pool_cap: Option<usize>,
}

/// Run the cap or mask ablation: one row per axis value with everything
/// else (including seeds) held fixed.
pub fn sweep(
    inputs: &SweepInputs,
    cache: &mut SnippetCache,
    axis: SweepAxis,
    mode: SweepMode,
) -> Result<Vec<SweepRow>> {
    let variant = QueryVariant::for_mode(inputs.train_config.mode);
    let labels: Vec<String> = match axis {
        SweepAxis::Cap => CAP_SWEEP_VALUES.iter().map(|c| c.to_string()).collect(),
        SweepAxis::Mask => MaskType::ALL.iter().map(|m| m.letter().to_string()).collect(),
    };

    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let mut train_config = inputs.train_config.clone();
        let mut encoder_config = inputs.encoder_config.clone();
        match axis {
            SweepAxis::Cap => {
                train_config.snippet_cap = label.parse().expect("numeric cap label");
            }
            SweepAxis::Mask => {
                encoder_config.mask_type = MaskType::parse(&label)?;
            }
        }
        let options = EvalOptions {
            variants: vec![variant],
            cap: train_config.snippet_cap,
            k: train_config.samples_per_query,
            pool_cap: inputs.pool_cap,
            seed: train_config.seed,
        };
        let report = match &mode {
            SweepMode::Retrain => {
                let run = train(
                    inputs.train_split,
                    cache,
                    inputs.gen_config,
                    &train_config,
                    &encoder_config,
                    inputs.vocab_config,
                )?;
                eval_variants(
                    inputs.eval_split,
                    cache,
                    inputs.gen_config,
                    &run.vocab,
                    &run.params,
                    &run.encoder_config,
                    &options,
                )?
            }
            SweepMode::Fixed {
                vocab,
                params,
                config,
            } => {
                let eval_config = EncoderConfig {
                    mask_type: encoder_config.mask_type,
                    ..(*config).clone()
                };
                eval_variants(
                    inputs.eval_split,
                    cache,
                    inputs.gen_config,
                    vocab,
                    params,
                    &eval_config,
                    &options,
                )?
            }
        };
        out.push(SweepRow { label, report });
    }
    Ok(out)
}

/// Machine-readable sweep records: every report row tagged with its axis
/// value.
pub fn sweep_jsonl(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let axis_name = match axis {
        SweepAxis::Cap => "cap",
        SweepAxis::Mask => "mask",
    };
    let mut out = String::new();
    for row in rows {
        for r in &row.report.rows {
            let record = serde_json::json!({
                "axis": axis_name,
                "value": row.label,
                "variant": r.variant.label(),
                "language": r.language,
                "mrr": r.mrr,
                "mask": r.mask.letter(),
                "cap": r.cap,
                "k": r.k,
            });
            out.push_str(&record.to_string());
            out.push('\n');
        }
    }
    out
}

/// Sweep table rendering: axis label plus the overall MRR per row.
pub fn render_sweep_table(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let axis_name = match axis {
        SweepAxis::Cap => "cap",
        SweepAxis::Mask => "mask",
    };
    let mut out = format!("{axis_name:<6} {:>8}\n", "mrr");
    for row in rows {
        let overall = row
            .report
            .rows
            .iter()
            .find(|r| r.language == "overall")
            .map(|r| r.mrr)
            .unwrap_or(f64::NAN);
        out.push_str(&format!("{:<6} {overall:>8.4}\n", row.label));
    }
    out
}
