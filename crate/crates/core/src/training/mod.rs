//! In-batch contrastive training.
//!
//! Each batch of (query, target) pairs yields a |B| x |B| score matrix;
//! every off-diagonal target acts as a negative for its row's query. The
//! default objective is the negative log-softmax of the diagonal. The
//! softmax-probability objective (no log) is also available behind
//! `LossForm::LiteralSoftmax` for comparison.

mod adam;
mod checkpoint;
mod pipeline;

pub use adam::OptimizerState;
pub use checkpoint::{params_fingerprint, Checkpoint};
pub use pipeline::{assemble_query, ensure_snippets, format_loss_log, train, TrainOutput};

use ndarray::{Array2, Axis};

use crate::encoder::{DualQueryVector, TargetVector};
use crate::error::{GacrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    DocOnly,
    GacrS,
    GacrM,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<TrainMode> {
        match s {
            "doc_only" => Ok(TrainMode::DocOnly),
            "gacr_s" => Ok(TrainMode::GacrS),
            "gacr_m" => Ok(TrainMode::GacrM),
            _ => Err(GacrError::Config(format!("unknown training mode {s:?}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrainMode::DocOnly => "doc_only",
            TrainMode::GacrS => "gacr_s",
            TrainMode::GacrM => "gacr_m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossForm {
    /// Negative mean log-softmax of the diagonal (the default).
    LogSoftmax,
    /// Negative mean softmax probability of the diagonal.
    LiteralSoftmax,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mode: TrainMode,
    pub snippet_cap: usize,
    pub samples_per_query: usize,
    pub seed: u64,
    pub loss_form: LossForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 10,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mode: TrainMode::GacrS,
            snippet_cap: 64,
            samples_per_query: 3,
            seed: 42,
            loss_form: LossForm::LogSoftmax,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(GacrError::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(GacrError::Config("learning_rate must be > 0".into()));
        }
        if self.snippet_cap < 1 {
            return Err(GacrError::Config("snippet_cap must be >= 1".into()));
        }
        if self.samples_per_query < 1 {
            return Err(GacrError::Config("samples_per_query must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pairwise scores: entry (b, j) is query b against target j.
pub fn batch_scores(
    queries: &[DualQueryVector],
    targets: &[TargetVector],
) -> Result<Array2<f64>> {
    if queries.len() != targets.len() {
        return Err(GacrError::Contract(format!(
            "batch has {} queries but {} targets",
            queries.len(),
            targets.len()
        )));
    }
    let b = queries.len();
    let mut scores = Array2::zeros((b, b));
    for (bi, q) in queries.iter().enumerate() {
        for (j, t) in targets.iter().enumerate() {
            scores[[bi, j]] = q.score(t);
        }
    }
    Ok(scores)
}

/// Contrastive loss over a square score matrix, with its exact gradient.
pub fn batch_loss(scores: &Array2<f64>, form: LossForm) -> Result<(f64, Array2<f64>)> {
    let b = scores.nrows();
    if scores.ncols() != b {
        return Err(GacrError::Contract(format!(
            "score matrix must be square, got {:?}",
            scores.dim()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(GacrError::Numeric("non-finite score in batch".into()));
    }
    if b == 0 {
        return Ok((0.0, Array2::zeros((0, 0))));
    }

    let bf = b as f64;
    let mut softmax = scores.clone();
    for mut row in softmax.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    match form {
        LossForm::LogSoftmax => {
            let mut loss = 0.0;
            for bi in 0..b {
                let row = scores.row(bi);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - scores[[bi, bi]];
            }
            loss /= bf;
            let mut grad = softmax;
            for bi in 0..b {
                grad[[bi, bi]] -= 1.0;
            }
            grad.mapv_inplace(|v| v / bf);
            Ok((loss, grad))
        }
        LossForm::LiteralSoftmax => {
            let diag: Vec<f64> = (0..b).map(|i| softmax[[i, i]]).collect();
            let loss = -diag.iter().sum::<f64>() / bf;
            let mut grad = Array2::zeros((b, b));
            for bi in 0..b {
                for j in 0..b {
                    let delta = if bi == j { 1.0 } else { 0.0 };
                    grad[[bi, j]] = -(diag[bi] * (delta - softmax[[bi, j]])) / bf;
                }
            }
            Ok((loss, grad))
        }
    }
}

/// Row sums of the loss gradient; zero for the log form by construction.
pub fn grad_row_sums(grad: &Array2<f64>) -> Vec<f64> {
    grad.sum_axis(Axis(1)).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn qv(doc: &[f64], gen: &[f64]) -> DualQueryVector {
        DualQueryVector {
            v_doc: arr1(doc),
            v_gen: arr1(gen),
        }
    }

    fn tv(v: &[f64]) -> TargetVector {
        TargetVector { v: arr1(v) }
    }

    #[test]
    fn scores_single_pair() {
        let s = batch_scores(&[qv(&[1.0], &[2.0])], &[tv(&[3.0])]).unwrap();
        assert_eq!(s.dim(), (1, 1));
        assert_eq!(s[[0, 0]], 9.0);
    }

    #[test]
    fn orthogonal_families_have_zero_off_diagonal() {
        let queries = vec![qv(&[1.0, 0.0], &[1.0, 0.0]), qv(&[0.0, 1.0], &[0.0, 1.0])];
        let targets = vec![tv(&[1.0, 0.0]), tv(&[0.0, 1.0])];
        let s = batch_scores(&queries, &targets).unwrap();
        assert_eq!(s[[0, 1]], 0.0);
        assert_eq!(s[[1, 0]], 0.0);
        assert_eq!(s[[0, 0]], 2.0);
    }

    #[test]
    fn scores_match_pairwise_oracle() {
        let mut rng = crate::seeds::rng(1, "score-oracle");
        use rand::Rng;
        let d = 5;
        let queries: Vec<DualQueryVector> = (0..4)
            .map(|_| {
                let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                qv(&a, &b)
            })
            .collect();
        let targets: Vec<TargetVector> = (0..4)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                tv(&v)
            })
            .collect();
        let s = batch_scores(&queries, &targets).unwrap();
        for b in 0..4 {
            for j in 0..4 {
                // independent route: explicit scalar loop over both halves
                let mut expect = 0.0;
                for i in 0..d {
                    expect += queries[b].v_doc[i] * targets[j].v[i];
                    expect += queries[b].v_gen[i] * targets[j].v[i];
                }
                assert!((s[[b, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(batch_scores(&[qv(&[1.0], &[1.0])], &[]).is_err());
    }

    #[test]
    fn uniform_scores_give_log_batch_size() {
        let s = Array2::from_elem((4, 4), 0.7);
        let (loss, grad) = batch_loss(&s, LossForm::LogSoftmax).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        for r in grad_row_sums(&grad) {
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_diagonal_drives_loss_to_zero() {
        let mut s = Array2::zeros((2, 2));
        s[[0, 0]] = 10.0;
        s[[1, 1]] = 10.0;
        let (loss, _) = batch_loss(&s, LossForm::LogSoftmax).unwrap();
        let expect = -(10.0f64.exp() / (10.0f64.exp() + 1.0)).ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!(loss < 5e-5);
    }

    #[test]
    fn single_element_batch_is_zero_loss() {
        let s = Array2::from_elem((1, 1), 3.3);
        let (loss, grad) = batch_loss(&s, LossForm::LogSoftmax).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad[[0, 0]], 0.0);
    }

    #[test]
    fn non_finite_scores_are_a_numeric_fault() {
        let s = Array2::from_elem((2, 2), f64::NAN);
        assert!(batch_loss(&s, LossForm::LogSoftmax).is_err());
    }

    #[test]
    fn literal_form_anchor_values() {
        let s = Array2::from_elem((4, 4), 1.0);
        let (loss, _) = batch_loss(&s, LossForm::LiteralSoftmax).unwrap();
        assert!((loss - (-0.25)).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = crate::seeds::rng(2, "loss-fd");
        use rand::Rng;
        for form in [LossForm::LogSoftmax, LossForm::LiteralSoftmax] {
            let mut s = Array2::zeros((3, 3));
            for v in s.iter_mut() {
                *v = rng.random_range(-2.0..2.0);
            }
            let (_, grad) = batch_loss(&s, form).unwrap();
            let eps = 1e-6;
            for b in 0..3 {
                for j in 0..3 {
                    let mut sp = s.clone();
                    sp[[b, j]] += eps;
                    let mut sm = s.clone();
                    sm[[b, j]] -= eps;
                    let (lp, _) = batch_loss(&sp, form).unwrap();
                    let (lm, _) = batch_loss(&sm, form).unwrap();
                    let numeric = (lp - lm) / (2.0 * eps);
                    assert!(
                        (grad[[b, j]] - numeric).abs() < 1e-8,
                        "{form:?} ({b},{j}): {} vs {numeric}",
                        grad[[b, j]]
                    );
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn log_loss_is_nonnegative(values in proptest::collection::vec(-30.0f64..30.0, 9)) {
            let s = Array2::from_shape_vec((3, 3), values).unwrap();
            let (loss, grad) = batch_loss(&s, LossForm::LogSoftmax).unwrap();
            proptest::prop_assert!(loss >= -1e-15);
            for r in grad_row_sums(&grad) {
                proptest::prop_assert!(r.abs() < 1e-12);
            }
        }

        #[test]
        fn loss_invariant_under_joint_permutation(values in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let s = Array2::from_shape_vec((4, 4), values).unwrap();
            // joint permutation of queries and targets = permuting rows and
            // columns by the same permutation
            let perm = [2usize, 0, 3, 1];
            let mut sp = Array2::zeros((4, 4));
            for b in 0..4 {
                for j in 0..4 {
                    sp[[b, j]] = s[[perm[b], perm[j]]];
                }
            }
            let (l1, _) = batch_loss(&s, LossForm::LogSoftmax).unwrap();
            let (l2, _) = batch_loss(&sp, LossForm::LogSoftmax).unwrap();
            proptest::prop_assert!((l1 - l2).abs() < 1e-12);
        }
    }
}
