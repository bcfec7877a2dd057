//! Forward pass with full activation capture for exact reverse-mode
//! differentiation.
//!
//! Layout per layer (post-norm): masked multi-head self-attention with
//! residual and layer norm, then a GELU feed-forward block with residual
//! and layer norm. Masked attention logits are forced to negative
//! infinity before normalization; a fully masked row yields a zero
//! context vector.
//!
//! Positions at or beyond `true_len` are PAD: they are excluded from the
//! computation entirely (mask columns for them are false everywhere, so
//! no visible position ever reads them) and their output rows are zero.

use ndarray::{s, Array1, Array2, Axis};

use crate::encoder::{mask_corner, EncoderParams, FusedInput};
use crate::error::{GacrError, Result};

pub(crate) const LN_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub attn_input: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention weights per head, each (n, n); masked entries are zero.
    pub attn_weights: Vec<Array2<f64>>,
    /// Concatenated per-head context vectors, before the output projection.
    pub ctx: Array2<f64>,
    pub resid1: Array2<f64>,
    pub ln1_norm: Array2<f64>,
    pub ln1_inv_std: Array1<f64>,
    pub ln1_out: Array2<f64>,
    pub ffn_pre: Array2<f64>,
    pub ffn_act: Array2<f64>,
    pub resid2: Array2<f64>,
    pub ln2_norm: Array2<f64>,
    pub ln2_inv_std: Array1<f64>,
}

/// Everything the backward pass needs about one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub ids: Vec<usize>,
    pub true_len: usize,
    pub window: usize,
    pub layers: Vec<LayerTrace>,
}

/// Layer norm over the feature axis. Returns (output, normalized, 1/std).
fn layer_norm(
    x: &Array2<f64>,
    scale: &Array2<f64>,
    shift: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let mut norm = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, mut row) in norm.rows_mut().into_iter().enumerate() {
        let m = mean[i];
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        row.mapv_inplace(|v| (v - m) * is);
    }
    let out = &norm * scale + shift;
    (out, norm, inv_std)
}

/// Row-wise softmax over logits where masked entries are -inf. A row with
/// no finite entry becomes all zeros.
fn masked_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Encode a fused input. Returns the hidden states padded to the model
/// window (PAD rows zero) and the trace for backward.
pub fn forward(params: &EncoderParams, input: &FusedInput) -> Result<(Array2<f64>, ForwardTrace)> {
    let vocab_size = params.token_embedding.nrows();
    let window = input.ids.len();
    let d = params.token_embedding.ncols();
    let n = input.true_len;
    if n > params.position_embedding.nrows() {
        return Err(GacrError::Contract(format!(
            "sequence length {n} exceeds position table {}",
            params.position_embedding.nrows()
        )));
    }
    for (pos, &id) in input.ids[..n].iter().enumerate() {
        if id >= vocab_size {
            return Err(GacrError::Contract(format!(
                "token id {id} at position {pos} outside vocabulary of {vocab_size}"
            )));
        }
    }

    let visible = mask_corner(input);
    let mut x = Array2::zeros((n, d));
    for (pos, &id) in input.ids[..n].iter().enumerate() {
        let row = &params.token_embedding.row(id) + &params.position_embedding.row(pos);
        x.row_mut(pos).assign(&row);
    }

    let num_heads = params.num_heads;
    if num_heads == 0 || d % num_heads != 0 {
        return Err(GacrError::Contract(format!(
            "model dim {d} not divisible into {num_heads} heads"
        )));
    }
    let dh = d / num_heads;
    let scale = (dh as f64).sqrt();

    let mut layers = Vec::with_capacity(params.layers.len());
    for (layer_index, lp) in params.layers.iter().enumerate() {
        let attn_input = x;
        let q = attn_input.dot(&lp.attn_w_q);
        let k = attn_input.dot(&lp.attn_w_k);
        let v = attn_input.dot(&lp.attn_w_v);

        let mut ctx = Array2::zeros((n, d));
        let mut attn_weights = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut logits = qh.dot(&kh.t()) / scale;
            for i in 0..n {
                for j in 0..n {
                    if !visible[[i, j]] {
                        logits[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
            masked_softmax_rows(&mut logits);
            ctx.slice_mut(cols).assign(&logits.dot(&vh));
            attn_weights.push(logits);
        }

        let attn_out = ctx.dot(&lp.attn_w_o);
        let resid1 = &attn_input + &attn_out;
        let (ln1_out, ln1_norm, ln1_inv_std) = layer_norm(&resid1, &lp.ln1_scale, &lp.ln1_shift);

        let ffn_pre = ln1_out.dot(&lp.ffn_w1) + &lp.ffn_b1;
        let ffn_act = ffn_pre.mapv(gelu);
        let ffn_out = ffn_act.dot(&lp.ffn_w2) + &lp.ffn_b2;
        let resid2 = &ln1_out + &ffn_out;
        let (out, ln2_norm, ln2_inv_std) = layer_norm(&resid2, &lp.ln2_scale, &lp.ln2_shift);

        if out.iter().any(|v| !v.is_finite()) {
            return Err(GacrError::NumericFault { layer: layer_index });
        }

        layers.push(LayerTrace {
            attn_input,
            q,
            k,
            v,
            attn_weights,
            ctx,
            resid1,
            ln1_norm,
            ln1_inv_std,
            ln1_out,
            ffn_pre,
            ffn_act,
            resid2,
            ln2_norm,
            ln2_inv_std,
        });
        x = out;
    }

    let mut hidden = Array2::zeros((window, d));
    hidden.slice_mut(s![..n, ..]).assign(&x);
    let trace = ForwardTrace {
        ids: input.ids[..n].to_vec(),
        true_len: n,
        window,
        layers,
    };
    Ok((hidden, trace))
}
