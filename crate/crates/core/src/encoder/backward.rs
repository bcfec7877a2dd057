//! Exact reverse-mode differentiation of the forward pass.
//!
//! Gradients mirror the parameter layout. The hot path accumulates into a
//! caller-owned gradient struct so a whole batch shares one allocation;
//! `backward` wraps it with the dense window-sized seed the public
//! contract expects.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::encoder::forward::{gelu_grad, ForwardTrace};
use crate::encoder::EncoderParams;
use crate::error::{GacrError, Result};

/// Layer-norm backward. `dy` is the loss gradient at the output; returns
/// the gradient at the input plus scale/shift gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    norm: &Array2<f64>,
    inv_std: &Array1<f64>,
    scale: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = dy.ncols() as f64;
    let d_shift = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_scale = (dy * norm).sum_axis(Axis(0)).insert_axis(Axis(0));

    let dnorm = dy * scale;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dn = dnorm.row(i);
        let nh = norm.row(i);
        let m1 = dn.sum() / d;
        let m2 = dn.dot(&nh) / d;
        let is = inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = is * (dn[j] - m1 - nh[j] * m2);
        }
    }
    (dx, d_scale, d_shift)
}

/// Accumulate parameter gradients for one encoded sequence given sparse
/// loss gradients at specific output rows (everything else is zero).
pub(crate) fn backward_rows(
    params: &EncoderParams,
    trace: &ForwardTrace,
    seed_rows: &[(usize, ArrayView1<f64>)],
    grads: &mut EncoderParams,
) -> Result<()> {
    let d = params.token_embedding.ncols();
    let n = trace.true_len;
    let num_heads = params.num_heads;
    let dh = d / num_heads;
    let scale = (dh as f64).sqrt();

    let mut g = Array2::zeros((n, d));
    for (row, grad) in seed_rows {
        if *row >= n {
            return Err(GacrError::Contract(format!(
                "gradient seeded at PAD row {row} (true_len {n})"
            )));
        }
        if grad.len() != d {
            return Err(GacrError::Contract(format!(
                "gradient row width {} does not match model dim {d}",
                grad.len()
            )));
        }
        let mut target = g.row_mut(*row);
        target += grad;
    }

    for (lt, (lp, lg)) in trace
        .layers
        .iter()
        .zip(params.layers.iter().zip(grads.layers.iter_mut()))
        .rev()
    {
        // layer norm 2
        let (d_resid2, d_scale2, d_shift2) =
            layer_norm_backward(&g, &lt.ln2_norm, &lt.ln2_inv_std, &lp.ln2_scale);
        lg.ln2_scale += &d_scale2;
        lg.ln2_shift += &d_shift2;

        // resid2 = ln1_out + ffn_out
        lg.ffn_b2 += &d_resid2.sum_axis(Axis(0)).insert_axis(Axis(0));
        lg.ffn_w2 += &lt.ffn_act.t().dot(&d_resid2);
        let d_act = d_resid2.dot(&lp.ffn_w2.t());
        let d_pre = &d_act * &lt.ffn_pre.mapv(gelu_grad);
        lg.ffn_b1 += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        lg.ffn_w1 += &lt.ln1_out.t().dot(&d_pre);
        let d_ln1_out = &d_resid2 + &d_pre.dot(&lp.ffn_w1.t());

        // layer norm 1
        let (d_resid1, d_scale1, d_shift1) =
            layer_norm_backward(&d_ln1_out, &lt.ln1_norm, &lt.ln1_inv_std, &lp.ln1_scale);
        lg.ln1_scale += &d_scale1;
        lg.ln1_shift += &d_shift1;

        // resid1 = attn_input + ctx . w_o
        lg.attn_w_o += &lt.ctx.t().dot(&d_resid1);
        let d_ctx = d_resid1.dot(&lp.attn_w_o.t());

        let mut d_q = Array2::zeros((n, d));
        let mut d_k = Array2::zeros((n, d));
        let mut d_v = Array2::zeros((n, d));
        for h in 0..num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let aw = &lt.attn_weights[h];
            let d_ctx_h = d_ctx.slice(cols);
            let vh = lt.v.slice(cols);
            let kh = lt.k.slice(cols);
            let qh = lt.q.slice(cols);

            d_v.slice_mut(cols).assign(&aw.t().dot(&d_ctx_h));

            let d_aw = d_ctx_h.dot(&vh.t());
            let row_dot = (aw * &d_aw).sum_axis(Axis(1)).insert_axis(Axis(1));
            let d_logits = (aw * &(&d_aw - &row_dot)) / scale;

            d_q.slice_mut(cols).assign(&d_logits.dot(&kh));
            d_k.slice_mut(cols).assign(&d_logits.t().dot(&qh));
        }

        lg.attn_w_q += &lt.attn_input.t().dot(&d_q);
        lg.attn_w_k += &lt.attn_input.t().dot(&d_k);
        lg.attn_w_v += &lt.attn_input.t().dot(&d_v);

        g = &d_resid1
            + &(d_q.dot(&lp.attn_w_q.t()) + d_k.dot(&lp.attn_w_k.t()) + d_v.dot(&lp.attn_w_v.t()));
    }

    for (pos, &id) in trace.ids.iter().enumerate() {
        let row = g.row(pos);
        let mut tok = grads.token_embedding.row_mut(id);
        tok += &row;
        let mut pe = grads.position_embedding.row_mut(pos);
        pe += &row;
    }
    Ok(())
}

/// Parameter gradients of a scalar loss whose gradient with respect to
/// the padded hidden output is `grad_hidden`.
pub fn backward(
    params: &EncoderParams,
    trace: &ForwardTrace,
    grad_hidden: &Array2<f64>,
) -> Result<EncoderParams> {
    let d = params.token_embedding.ncols();
    if grad_hidden.dim() != (trace.window, d) {
        return Err(GacrError::Contract(format!(
            "grad_hidden shape {:?} does not match hidden shape ({}, {d})",
            grad_hidden.dim(),
            trace.window,
        )));
    }
    let mut grads = params.zeros_like();
    let rows: Vec<(usize, ArrayView1<f64>)> = (0..trace.true_len)
        .map(|i| (i, grad_hidden.row(i)))
        .collect();
    backward_rows(params, trace, &rows, &mut grads)?;
    Ok(grads)
}
