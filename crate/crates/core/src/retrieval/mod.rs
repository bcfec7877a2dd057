//! Dense candidate index, ranking, and evaluation metrics.

mod eval;
mod index_io;

pub use eval::{
    eval_variants, rank_dump, render_sweep_table, render_table, report_jsonl, sweep, sweep_jsonl,
    EvalOptions, EvalReport, EvalRow, QueryVariant, SweepAxis, SweepInputs, SweepMode, SweepRow,
    CAP_SWEEP_VALUES,
};
pub use index_io::{load_index, save_index};

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{DocCodePair, Vocabulary};
use crate::encoder::{
    assemble_target, extract_target, forward, DualQueryVector, EncoderConfig, EncoderParams,
};
use crate::error::{GacrError, Result};
use crate::training::params_fingerprint;

/// Encoded candidate pool: one target vector per candidate, rows in id
/// order, tagged with the fingerprint of the parameters that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateIndex {
    pub ids: Vec<String>,
    pub vectors: Array2<f64>,
    pub fingerprint: String,
}

/// Encode every candidate's code through the target path.
pub fn build_index(
    pairs: &[DocCodePair],
    vocab: &Vocabulary,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<CandidateIndex> {
    if config.vocab_size != vocab.len() {
        return Err(GacrError::Config(format!(
            "checkpoint vocabulary size {} does not match corpus vocabulary {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    for pair in pairs {
        if pair.id.contains('\n') {
            return Err(GacrError::Contract(format!(
                "candidate id {:?} contains a newline",
                pair.id
            )));
        }
    }
    let rows: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|pair| -> Result<Vec<f64>> {
            let input = assemble_target(
                &vocab.encode(&pair.code_tokens),
                config.max_seq_len,
                config.mask_type,
            );
            let (hidden, _) = forward(params, &input)?;
            Ok(extract_target(&hidden).v.to_vec())
        })
        .collect::<Result<_>>()?;

    let d = config.model_dim;
    let mut vectors = Array2::zeros((pairs.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            vectors[[i, j]] = *v;
        }
    }
    Ok(CandidateIndex {
        ids: pairs.iter().map(|p| p.id.clone()).collect(),
        vectors,
        fingerprint: params_fingerprint(params),
    })
}

/// One query's candidate ranking, scores descending, ties broken by
/// ascending pool index.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// 1-based rank of a candidate id, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|(c, _)| c == id).map(|p| p + 1)
    }
}

/// Rank the pool against a dual query vector by dot-product score.
pub fn search(
    query_id: &str,
    query: &DualQueryVector,
    index: &CandidateIndex,
    top_k: usize,
) -> Result<RankedList> {
    let d = index.vectors.ncols();
    if query.v_doc.len() != d || query.v_gen.len() != d {
        return Err(GacrError::Contract(format!(
            "query dimension {} does not match index dimension {d}",
            query.v_doc.len()
        )));
    }
    let doc_scores = index.vectors.dot(&query.v_doc);
    let gen_scores = index.vectors.dot(&query.v_gen);
    let mut scored: Vec<(usize, f64)> = (0..index.ids.len())
        .map(|i| (i, doc_scores[i] + gen_scores[i]))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries: scored
            .into_iter()
            .map(|(i, s)| (index.ids[i].clone(), s))
            .collect(),
    })
}

/// Mean reciprocal rank of the ground truth over ranked lists.
pub fn mrr(
    ranked: &[RankedList],
    truth: &std::collections::BTreeMap<String, String>,
) -> Result<f64> {
    if ranked.is_empty() {
        return Err(GacrError::Contract("mrr over zero queries".into()));
    }
    let mut sum = 0.0;
    for list in ranked {
        let truth_id = truth.get(&list.query_id).ok_or_else(|| {
            GacrError::Contract(format!("no ground truth for query {}", list.query_id))
        })?;
        let rank = list.rank_of(truth_id).ok_or_else(|| {
            GacrError::Contract(format!(
                "ground truth for query {} is not in its candidate pool",
                list.query_id
            ))
        })?;
        sum += 1.0 / rank as f64;
    }
    Ok(sum / ranked.len() as f64)
}

/// Count, per query, which of two systems ranked the ground truth higher
/// (smaller rank). Returns (a_better, b_better, ties).
pub fn compare_superior(
    ranks_a: &std::collections::BTreeMap<String, usize>,
    ranks_b: &std::collections::BTreeMap<String, usize>,
) -> Result<(usize, usize, usize)> {
    if ranks_a.len() != ranks_b.len() || ranks_a.keys().ne(ranks_b.keys()) {
        return Err(GacrError::Contract(
            "superior-query comparison needs identical query sets".into(),
        ));
    }
    let mut a_better = 0;
    let mut b_better = 0;
    let mut ties = 0;
    for (query, ra) in ranks_a {
        let rb = ranks_b[query];
        match ra.cmp(&rb) {
            std::cmp::Ordering::Less => a_better += 1,
            std::cmp::Ordering::Greater => b_better += 1,
            std::cmp::Ordering::Equal => ties += 1,
        }
    }
    Ok((a_better, b_better, ties))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use std::collections::BTreeMap;

    fn index_of(rows: &[Vec<f64>]) -> CandidateIndex {
        let d = rows[0].len();
        let mut vectors = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                vectors[[i, j]] = *v;
            }
        }
        CandidateIndex {
            ids: (0..rows.len()).map(|i| format!("c{i}")).collect(),
            vectors,
            fingerprint: "test".into(),
        }
    }

    fn query(doc: &[f64], gen: &[f64]) -> DualQueryVector {
        DualQueryVector {
            v_doc: arr1(doc),
            v_gen: arr1(gen),
        }
    }

    #[test]
    fn search_ranks_by_dot_product() {
        let index = index_of(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let q = query(&[1.0, 0.0], &[0.0, 0.0]);
        let r = search("q", &q, &index, 10).unwrap();
        assert_eq!(r.entries[0], ("c0".to_string(), 1.0));
        assert_eq!(r.entries[1], ("c1".to_string(), 0.0));
    }

    #[test]
    fn identical_candidates_rank_by_pool_index() {
        let index = index_of(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]);
        let q = query(&[1.0, 1.0], &[0.0, 0.0]);
        let r = search("q", &q, &index, 10).unwrap();
        let ids: Vec<&str> = r.entries.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, vec!["c0", "c1", "c2"]);
    }

    #[test]
    fn top_k_truncates() {
        let index = index_of(&[vec![3.0], vec![2.0], vec![1.0]]);
        let q = query(&[1.0], &[0.0]);
        assert_eq!(search("q", &q, &index, 2).unwrap().entries.len(), 2);
        assert!(search("q", &q, &index, 0).unwrap().entries.is_empty());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let index = index_of(&[vec![1.0, 2.0]]);
        let q = query(&[1.0], &[1.0]);
        assert!(search("q", &q, &index, 1).is_err());
    }

    /// Brute-force oracle: repeatedly select the best remaining candidate
    /// by explicit pairwise comparison.
    fn oracle_order(q: &DualQueryVector, index: &CandidateIndex) -> Vec<usize> {
        let n = index.ids.len();
        let score = |i: usize| {
            let row = index.vectors.row(i);
            let mut s = 0.0;
            for j in 0..row.len() {
                s += q.v_doc[j] * row[j] + q.v_gen[j] * row[j];
            }
            s
        };
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut order = Vec::with_capacity(n);
        while !remaining.is_empty() {
            let mut best = 0;
            for pos in 1..remaining.len() {
                let (i, j) = (remaining[pos], remaining[best]);
                if score(i) > score(j) || (score(i) == score(j) && i < j) {
                    best = pos;
                }
            }
            order.push(remaining.remove(best));
        }
        order
    }

    #[test]
    fn search_matches_brute_force_oracle_with_planted_ties() {
        use rand::Rng;
        let mut rng = crate::seeds::rng(3, "search-oracle");
        for trial in 0..50 {
            let n = rng.random_range(2..40);
            let d = rng.random_range(1..6);
            let mut rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            // plant duplicates to force ties
            if n > 3 {
                rows[2] = rows[0].clone();
                rows[3] = rows[0].clone();
            }
            let index = index_of(&rows);
            let vd: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vg: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = query(&vd, &vg);
            let got = search("q", &q, &index, n).unwrap();
            let got_ids: Vec<&str> = got.entries.iter().map(|(i, _)| i.as_str()).collect();
            let want: Vec<String> = oracle_order(&q, &index)
                .into_iter()
                .map(|i| index.ids[i].clone())
                .collect();
            let want_ids: Vec<&str> = want.iter().map(|s| s.as_str()).collect();
            assert_eq!(got_ids, want_ids, "trial {trial}");
        }
    }

    #[test]
    fn mrr_basic_values() {
        let lists = vec![
            RankedList {
                query_id: "a".into(),
                entries: vec![("ta".into(), 3.0), ("x".into(), 1.0)],
            },
            RankedList {
                query_id: "b".into(),
                entries: vec![("x".into(), 3.0), ("tb".into(), 1.0)],
            },
        ];
        let truth: BTreeMap<String, String> = [("a", "ta"), ("b", "tb")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let got = mrr(&lists, &truth).unwrap();
        assert!((got - 0.75).abs() < 1e-15);
    }

    #[test]
    fn mrr_of_ranks_1_2_4() {
        let make = |qid: &str, rank: usize| RankedList {
            query_id: qid.into(),
            entries: (0..4)
                .map(|i| {
                    let id = if i + 1 == rank {
                        format!("t{qid}")
                    } else {
                        format!("d{i}")
                    };
                    (id, -(i as f64))
                })
                .collect(),
        };
        let lists = vec![make("a", 1), make("b", 2), make("c", 4)];
        let truth: BTreeMap<String, String> = [("a", "ta"), ("b", "tb"), ("c", "tc")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let got = mrr(&lists, &truth).unwrap();
        assert!((got - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_truth_names_the_query() {
        let lists = vec![RankedList {
            query_id: "q7".into(),
            entries: vec![("x".into(), 1.0)],
        }];
        let truth: BTreeMap<String, String> =
            [("q7".to_string(), "absent".to_string())].into_iter().collect();
        let err = mrr(&lists, &truth).unwrap_err();
        assert!(err.to_string().contains("q7"));
    }

    #[test]
    fn mrr_agrees_with_independent_averaging() {
        use rand::Rng;
        let mut rng = crate::seeds::rng(8, "mrr-oracle");
        for _ in 0..200 {
            let n = rng.random_range(1..30);
            let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(1..=20usize)).collect();
            let lists: Vec<RankedList> = ranks
                .iter()
                .enumerate()
                .map(|(qi, &rank)| RankedList {
                    query_id: format!("q{qi}"),
                    entries: (0..20)
                        .map(|p| {
                            let id = if p + 1 == rank {
                                format!("truth{qi}")
                            } else {
                                format!("junk{qi}-{p}")
                            };
                            (id, -(p as f64))
                        })
                        .collect(),
                })
                .collect();
            let truth: BTreeMap<String, String> = (0..n)
                .map(|qi| (format!("q{qi}"), format!("truth{qi}")))
                .collect();
            let got = mrr(&lists, &truth).unwrap();
            // independent reimplementation: reciprocal-rank mean from ranks
            let expect: f64 =
                ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64;
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn superior_counting_partitions_queries() {
        let a: BTreeMap<String, usize> =
            [("x".to_string(), 1), ("y".to_string(), 5)].into_iter().collect();
        let b: BTreeMap<String, usize> =
            [("x".to_string(), 2), ("y".to_string(), 5)].into_iter().collect();
        assert_eq!(compare_superior(&a, &b).unwrap(), (1, 0, 1));
        assert_eq!(compare_superior(&a, &a).unwrap(), (0, 0, 2));
    }

    #[test]
    fn superior_counting_rejects_mismatched_query_sets() {
        let a: BTreeMap<String, usize> = [("x".to_string(), 1)].into_iter().collect();
        let b: BTreeMap<String, usize> = [("y".to_string(), 1)].into_iter().collect();
        assert!(compare_superior(&a, &b).is_err());
    }

    proptest::proptest! {
        #[test]
        fn ranking_invariant_under_positive_scaling(
            scores in proptest::collection::vec(-10.0f64..10.0, 2..30),
            scale in 0.001f64..1000.0,
        ) {
            let sort = |vals: &[f64]| {
                let mut idx: Vec<usize> = (0..vals.len()).collect();
                idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
                idx
            };
            let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
            proptest::prop_assert_eq!(sort(&scores), sort(&scaled));
        }

        #[test]
        fn superior_counts_partition(
            ranks in proptest::collection::vec((1usize..50, 1usize..50), 1..40)
        ) {
            let a: BTreeMap<String, usize> = ranks.iter().enumerate()
                .map(|(i, (ra, _))| (format!("q{i}"), *ra)).collect();
            let b: BTreeMap<String, usize> = ranks.iter().enumerate()
                .map(|(i, (_, rb))| (format!("q{i}"), *rb)).collect();
            let (x, y, t) = compare_superior(&a, &b).unwrap();
            proptest::prop_assert_eq!(x + y + t, ranks.len());
        }
    }
}
