//! Desk-scale masked-attention encoder.
//!
//! Queries are fused token sequences combining a documentation segment
//! with one or more generated-code segments, each headed by its own CLS.
//! Four attention-mask types control cross-segment information flow
//! during fusion; the query representation is the pair of CLS outputs
//! (documentation CLS, first generated CLS), and candidate code gets a
//! single CLS replicated to match dimensions.

mod backward;
mod forward;
mod gradcheck;
mod params;

pub use backward::backward;
pub(crate) use backward::backward_rows;
pub use forward::{forward, ForwardTrace};
pub use gradcheck::grad_check;
pub use params::{EncoderParams, LayerParams};

use ndarray::{Array1, Array2};

use crate::corpus::{CLS_ID, PAD_ID, SEP_ID};
use crate::error::{GacrError, Result};

/// Attention-mask type selecting the fusion pattern between the
/// documentation block and the generated-code block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MaskType {
    /// Full bidirectional cross-attention.
    A,
    /// Doc rows see only the doc block; generated rows see everything.
    B,
    /// Doc rows see everything; generated rows see only their block.
    C,
    /// Block-diagonal: no cross-segment flow at all.
    D,
}

impl MaskType {
    pub const ALL: [MaskType; 4] = [MaskType::A, MaskType::B, MaskType::C, MaskType::D];

    pub fn parse(s: &str) -> Result<MaskType> {
        match s {
            "A" | "a" => Ok(MaskType::A),
            "B" | "b" => Ok(MaskType::B),
            "C" | "c" => Ok(MaskType::C),
            "D" | "d" => Ok(MaskType::D),
            _ => Err(GacrError::Config(format!("unknown mask type {s:?}"))),
        }
    }

    pub fn letter(&self) -> &'static str {
        match self {
            MaskType::A => "A",
            MaskType::B => "B",
            MaskType::C => "C",
            MaskType::D => "D",
        }
    }
}

impl std::fmt::Display for MaskType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.letter())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub mask_type: MaskType,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            ffn_dim: 128,
            max_seq_len: 256,
            vocab_size: 8192,
            mask_type: MaskType::A,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1
            || self.num_heads < 1
            || self.model_dim < 1
            || self.ffn_dim < 1
            || self.vocab_size < 1
        {
            return Err(GacrError::Config("encoder dimensions must be >= 1".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(GacrError::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.max_seq_len < 4 {
            return Err(GacrError::Config("max_seq_len must be >= 4".into()));
        }
        Ok(())
    }
}

/// Per-position segment label inside a fused sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Doc,
    Gen,
    Tgt,
    Pad,
}

/// A token-id sequence ready for encoding: ids padded to the model
/// window, per-position segment labels, CLS anchor positions, and the
/// mask type to apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedInput {
    pub ids: Vec<usize>,
    pub segments: Vec<Segment>,
    pub cls_positions: Vec<usize>,
    pub true_len: usize,
    pub mask_type: MaskType,
}

impl FusedInput {
    fn from_blocks(
        blocks: Vec<(Segment, Vec<usize>)>,
        max_seq_len: usize,
        mask_type: MaskType,
    ) -> FusedInput {
        let mut ids = Vec::with_capacity(max_seq_len);
        let mut segments = Vec::with_capacity(max_seq_len);
        let mut cls_positions = Vec::new();
        for (seg, body) in blocks {
            cls_positions.push(ids.len());
            ids.push(CLS_ID);
            segments.push(seg);
            for id in body {
                ids.push(id);
                segments.push(seg);
            }
            ids.push(SEP_ID);
            segments.push(seg);
        }
        let true_len = ids.len();
        debug_assert!(true_len <= max_seq_len);
        ids.resize(max_seq_len, PAD_ID);
        segments.resize(max_seq_len, Segment::Pad);
        FusedInput {
            ids,
            segments,
            cls_positions,
            true_len,
            mask_type,
        }
    }
}

/// Lay out `[CLS] doc [SEP] [CLS] gen [SEP]` padded to `max_seq_len`.
///
/// When the sequence would overflow, the generated tail is truncated
/// first, then the doc tail; the four special tokens always survive.
pub fn assemble_single(
    doc_ids: &[usize],
    gen_ids: &[usize],
    max_seq_len: usize,
    mask_type: MaskType,
) -> Result<FusedInput> {
    if max_seq_len < 4 {
        return Err(GacrError::Config(format!(
            "sequence window {max_seq_len} cannot hold two CLS/SEP block frames"
        )));
    }
    let budget = max_seq_len - 4;
    let doc_keep = doc_ids.len().min(budget);
    let gen_keep = gen_ids.len().min(budget - doc_keep);
    Ok(FusedInput::from_blocks(
        vec![
            (Segment::Doc, doc_ids[..doc_keep].to_vec()),
            (Segment::Gen, gen_ids[..gen_keep].to_vec()),
        ],
        max_seq_len,
        mask_type,
    ))
}

/// Lay out `[CLS] doc [SEP] [CLS] G1 [SEP] ... [CLS] Gk [SEP]`.
///
/// Each snippet is first capped to `cap` tokens. The doc and first
/// snippet share the single-snippet truncation rule; snippets after the
/// first are kept whole (at their capped length) or dropped from the
/// tail once the window is full.
pub fn assemble_multi(
    doc_ids: &[usize],
    snippets: &[Vec<usize>],
    cap: usize,
    max_seq_len: usize,
    mask_type: MaskType,
) -> Result<FusedInput> {
    if snippets.is_empty() {
        return Err(GacrError::Contract(
            "assemble_multi needs at least one snippet".into(),
        ));
    }
    if max_seq_len < 4 {
        return Err(GacrError::Config(format!(
            "sequence window {max_seq_len} cannot hold two CLS/SEP block frames"
        )));
    }
    let doc_keep = doc_ids.len().min(max_seq_len - 4);
    let mut used = doc_keep + 4;
    let first: Vec<usize> = snippets[0]
        .iter()
        .take(cap.min(max_seq_len - used))
        .copied()
        .collect();
    used += first.len();

    let mut blocks = vec![
        (Segment::Doc, doc_ids[..doc_keep].to_vec()),
        (Segment::Gen, first),
    ];
    for snippet in &snippets[1..] {
        let body: Vec<usize> = snippet.iter().take(cap).copied().collect();
        if used + body.len() + 2 > max_seq_len {
            break; // trailing whole blocks are dropped
        }
        used += body.len() + 2;
        blocks.push((Segment::Gen, body));
    }
    Ok(FusedInput::from_blocks(blocks, max_seq_len, mask_type))
}

/// Lay out a candidate code sequence `[CLS] code [SEP]` padded to the
/// window, truncating the code tail to fit.
pub fn assemble_target(code_ids: &[usize], max_seq_len: usize, mask_type: MaskType) -> FusedInput {
    let keep = code_ids.len().min(max_seq_len.saturating_sub(2));
    FusedInput::from_blocks(
        vec![(Segment::Tgt, code_ids[..keep].to_vec())],
        max_seq_len,
        mask_type,
    )
}

/// Lay out a documentation-only query `[CLS] doc [SEP]`; its single CLS
/// vector is used for both halves of the dual query representation.
pub fn assemble_doc_only(
    doc_ids: &[usize],
    max_seq_len: usize,
    mask_type: MaskType,
) -> FusedInput {
    let keep = doc_ids.len().min(max_seq_len.saturating_sub(2));
    FusedInput::from_blocks(
        vec![(Segment::Doc, doc_ids[..keep].to_vec())],
        max_seq_len,
        mask_type,
    )
}

/// Boolean visibility matrix: entry (i, j) is true iff position i may
/// attend to position j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub allowed: Array2<bool>,
}

/// Visibility of column `j` from row `i` over the non-PAD prefix.
/// SEP tokens belong to their preceding segment's block.
fn visible(mask_type: MaskType, row: Segment, col: Segment) -> bool {
    match mask_type {
        MaskType::A => true,
        MaskType::B => row != Segment::Doc || col == Segment::Doc,
        MaskType::C => row != Segment::Gen || col == Segment::Gen,
        MaskType::D => row == col,
    }
}

/// The non-PAD corner of the attention mask, used by the forward pass.
pub(crate) fn mask_corner(input: &FusedInput) -> Array2<bool> {
    let n = input.true_len;
    Array2::from_shape_fn((n, n), |(i, j)| {
        visible(input.mask_type, input.segments[i], input.segments[j])
    })
}

/// Build the full window-sized mask for a fused input. PAD rows and
/// columns are always false.
pub fn build_mask(input: &FusedInput) -> AttentionMask {
    let len = input.ids.len();
    let corner = mask_corner(input);
    let n = input.true_len;
    let mut allowed = Array2::from_elem((len, len), false);
    for i in 0..n {
        for j in 0..n {
            allowed[[i, j]] = corner[[i, j]];
        }
    }
    AttentionMask { allowed }
}

/// Dual query representation: documentation CLS output and generated
/// CLS output.
#[derive(Debug, Clone, PartialEq)]
pub struct DualQueryVector {
    pub v_doc: Array1<f64>,
    pub v_gen: Array1<f64>,
}

/// Candidate representation; the single CLS output used twice.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector {
    pub v: Array1<f64>,
}

impl DualQueryVector {
    /// Score against a target: the concatenated dual vector dotted with
    /// the replicated target vector.
    pub fn score(&self, target: &TargetVector) -> f64 {
        self.v_doc.dot(&target.v) + self.v_gen.dot(&target.v)
    }
}

/// Extract the dual query vector from encoder output rows at the first
/// two CLS positions.
pub fn extract_query(hidden: &Array2<f64>, cls_positions: &[usize]) -> Result<DualQueryVector> {
    if cls_positions.len() < 2 {
        return Err(GacrError::Contract(format!(
            "query extraction needs at least 2 CLS positions, got {}",
            cls_positions.len()
        )));
    }
    Ok(DualQueryVector {
        v_doc: hidden.row(cls_positions[0]).to_owned(),
        v_gen: hidden.row(cls_positions[1]).to_owned(),
    })
}

/// Extract the target vector: encoder output row 0.
pub fn extract_target(hidden: &Array2<f64>) -> TargetVector {
    TargetVector {
        v: hidden.row(0).to_owned(),
    }
}

/// Query vector for single-segment queries: the CLS output replicated
/// into both halves.
pub fn replicated_query(hidden: &Array2<f64>) -> DualQueryVector {
    let row = hidden.row(0).to_owned();
    DualQueryVector {
        v_doc: row.clone(),
        v_gen: row,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layout_matches_length_law() {
        let f = assemble_single(&[5, 6], &[7, 8, 9], 16, MaskType::A).unwrap();
        assert_eq!(&f.ids[..9], &[2, 5, 6, 3, 2, 7, 8, 9, 3]);
        assert_eq!(f.true_len, 9);
        assert_eq!(f.cls_positions, vec![0, 4]);
        assert!(f.ids[9..].iter().all(|&id| id == PAD_ID));
        assert!(f.segments[9..].iter().all(|&s| s == Segment::Pad));
    }

    #[test]
    fn single_layout_empty_segments() {
        let f = assemble_single(&[], &[], 16, MaskType::A).unwrap();
        assert_eq!(&f.ids[..4], &[2, 3, 2, 3]);
        assert_eq!(f.true_len, 4);
        assert_eq!(f.cls_positions, vec![0, 2]);
    }

    #[test]
    fn single_layout_truncates_gen_first() {
        let f = assemble_single(&[5, 6], &[7, 8, 9], 8, MaskType::A).unwrap();
        assert_eq!(&f.ids[..8], &[2, 5, 6, 3, 2, 7, 8, 3]);
        assert_eq!(f.true_len, 8);
        assert_eq!(f.cls_positions, vec![0, 4]);
    }

    #[test]
    fn single_layout_truncates_doc_after_gen_is_gone() {
        let f = assemble_single(&[1; 10], &[9, 9], 8, MaskType::A).unwrap();
        // budget 4: doc keeps 4, gen keeps 0
        assert_eq!(&f.ids[..8], &[2, 1, 1, 1, 1, 3, 2, 3]);
        assert_eq!(f.true_len, 8);
        assert_eq!(f.cls_positions, vec![0, 6]);
    }

    #[test]
    fn window_below_four_is_rejected() {
        assert!(assemble_single(&[], &[], 3, MaskType::A).is_err());
    }

    #[test]
    fn multi_layout_enumerated_by_hand() {
        // [CLS] 5 [SEP] [CLS] 7 8 [SEP] [CLS] 9 [SEP]
        let f = assemble_multi(&[5], &[vec![7, 8], vec![9]], 64, 32, MaskType::A).unwrap();
        assert_eq!(&f.ids[..10], &[2, 5, 3, 2, 7, 8, 3, 2, 9, 3]);
        assert_eq!(f.cls_positions, vec![0, 3, 7]);
        assert_eq!(f.true_len, 10);
    }

    #[test]
    fn multi_with_one_snippet_equals_single() {
        let doc = [5, 6, 7];
        let gen = vec![8, 9, 10, 11];
        let m = assemble_multi(&doc, &[gen.clone()], 2, 32, MaskType::B).unwrap();
        let capped: Vec<usize> = gen[..2].to_vec();
        let s = assemble_single(&doc, &capped, 32, MaskType::B).unwrap();
        assert_eq!(m, s);
    }

    #[test]
    fn multi_cap_applies_per_snippet() {
        let f = assemble_multi(&[5], &[vec![7, 8], vec![9, 10]], 1, 32, MaskType::A).unwrap();
        assert_eq!(&f.ids[..f.true_len], &[2, 5, 3, 2, 7, 3, 2, 9, 3]);
    }

    #[test]
    fn multi_drops_trailing_blocks_that_overflow() {
        // window 12: doc block 3, first block 4 -> used 7; second block
        // needs 5 -> used 12 ok; third needs 4 -> dropped.
        let f = assemble_multi(
            &[5],
            &[vec![7, 8], vec![9, 10, 11], vec![12, 13]],
            64,
            12,
            MaskType::A,
        )
        .unwrap();
        assert_eq!(f.true_len, 12);
        assert_eq!(f.cls_positions, vec![0, 3, 7]);
    }

    #[test]
    fn multi_without_snippets_is_a_contract_error() {
        assert!(assemble_multi(&[5], &[], 4, 16, MaskType::A).is_err());
    }

    #[test]
    fn target_layout() {
        let f = assemble_target(&[9, 9], 8, MaskType::A);
        assert_eq!(f.ids, vec![2, 9, 9, 3, 0, 0, 0, 0]);
        assert_eq!(f.true_len, 4);
        assert_eq!(f.cls_positions, vec![0]);
    }

    #[test]
    fn target_truncates_to_window_minus_two() {
        let f = assemble_target(&[7; 10], 8, MaskType::A);
        assert_eq!(f.true_len, 8);
        assert_eq!(f.ids[..8].iter().filter(|&&id| id == 7).count(), 6);
    }

    #[test]
    fn target_empty_code() {
        let f = assemble_target(&[], 8, MaskType::A);
        assert_eq!(f.true_len, 2);
        assert_eq!(&f.ids[..2], &[2, 3]);
    }

    #[test]
    fn mask_type_a_is_all_true_over_non_pad() {
        let f = assemble_single(&[5], &[6], 6, MaskType::A).unwrap();
        let m = build_mask(&f);
        assert!(m.allowed.iter().all(|&b| b));
    }

    #[test]
    fn mask_type_d_is_block_diagonal() {
        let f = assemble_single(&[5], &[6], 6, MaskType::D).unwrap();
        let m = build_mask(&f);
        // doc block {0,1,2}, gen block {3,4,5}
        for i in 0..6 {
            for j in 0..6 {
                let same = (i < 3) == (j < 3);
                assert_eq!(m.allowed[[i, j]], same, "({i},{j})");
            }
        }
    }

    #[test]
    fn pad_columns_and_rows_are_false_for_every_type() {
        for mt in MaskType::ALL {
            let f = assemble_single(&[5], &[6], 8, mt).unwrap();
            let m = build_mask(&f);
            for i in 0..8 {
                for j in 6..8 {
                    assert!(!m.allowed[[i, j]]);
                    assert!(!m.allowed[[j, i]]);
                }
            }
        }
    }

    #[test]
    fn mask_b_and_c_are_transposes_of_each_other() {
        let fb = assemble_single(&[5, 6], &[7], 8, MaskType::B).unwrap();
        let fc = assemble_single(&[5, 6], &[7], 8, MaskType::C).unwrap();
        let mb = build_mask(&fb);
        let mc = build_mask(&fc);
        assert_eq!(mb.allowed.t().to_owned(), mc.allowed);
    }

    #[test]
    fn type_a_entries_superset_of_every_type() {
        for mt in MaskType::ALL {
            let fa = assemble_single(&[5, 6], &[7, 8], 12, MaskType::A).unwrap();
            let fo = assemble_single(&[5, 6], &[7, 8], 12, mt).unwrap();
            let ma = build_mask(&fa);
            let mo = build_mask(&fo);
            for (a, o) in ma.allowed.iter().zip(mo.allowed.iter()) {
                assert!(*a || !*o);
            }
        }
    }

    #[test]
    fn every_non_pad_row_attends_somewhere() {
        for mt in MaskType::ALL {
            let f = assemble_single(&[5, 6, 7], &[8], 12, mt).unwrap();
            let m = build_mask(&f);
            for i in 0..f.true_len {
                assert!(m.allowed.row(i).iter().any(|&b| b), "row {i} type {mt}");
                assert!(m.allowed[[i, i]], "diagonal {i} type {mt}");
            }
        }
    }

    #[test]
    fn extract_query_needs_two_cls() {
        let hidden = Array2::zeros((4, 3));
        assert!(extract_query(&hidden, &[0]).is_err());
        assert!(extract_query(&hidden, &[0, 2]).is_ok());
    }

    #[test]
    fn extract_query_reads_first_two_cls_rows() {
        let mut hidden = Array2::zeros((8, 2));
        hidden.row_mut(0).fill(1.0);
        hidden.row_mut(4).fill(2.0);
        hidden.row_mut(6).fill(3.0);
        let q = extract_query(&hidden, &[0, 4, 6]).unwrap();
        assert_eq!(q.v_doc[0], 1.0);
        assert_eq!(q.v_gen[0], 2.0);
    }

    #[test]
    fn score_decomposes_over_the_replicated_target() {
        let q = DualQueryVector {
            v_doc: ndarray::arr1(&[1.0, 2.0]),
            v_gen: ndarray::arr1(&[3.0, -1.0]),
        };
        let t = TargetVector {
            v: ndarray::arr1(&[0.5, 0.25]),
        };
        let concat = 1.0 * 0.5 + 2.0 * 0.25 + 3.0 * 0.5 + (-1.0) * 0.25;
        assert!((q.score(&t) - concat).abs() < 1e-15);
        let summed = (&q.v_doc + &q.v_gen).dot(&t.v);
        assert!((q.score(&t) - summed).abs() < 1e-12);
    }

    #[test]
    fn doc_only_score_is_twice_the_single_dot() {
        let hidden = ndarray::arr2(&[[1.0, 2.0], [9.0, 9.0]]);
        let q = replicated_query(&hidden);
        let t = TargetVector {
            v: ndarray::arr1(&[2.0, 1.0]),
        };
        assert_eq!(q.score(&t), 2.0 * (1.0 * 2.0 + 2.0 * 1.0));
    }

    proptest::proptest! {
        #[test]
        fn sequence_length_law(m in 0usize..40, p in 0usize..40) {
            let doc: Vec<usize> = vec![5; m];
            let gen: Vec<usize> = vec![6; p];
            let window = 128;
            proptest::prop_assume!(m + p + 4 <= window);
            let f = assemble_single(&doc, &gen, window, MaskType::A).unwrap();
            proptest::prop_assert_eq!(f.true_len, m + p + 4);
            proptest::prop_assert_eq!(f.cls_positions, vec![0, m + 2]);
        }

        #[test]
        fn second_cls_is_always_after_doc_block(m in 0usize..200, p in 0usize..200) {
            let f = assemble_single(&vec![5; m], &vec![6; p], 64, MaskType::A).unwrap();
            let kept_doc = m.min(60);
            proptest::prop_assert_eq!(f.cls_positions[1], kept_doc + 2);
            proptest::prop_assert!(f.true_len <= 64);
        }
    }
}
