//! Gradient verification harness.
//!
//! Builds a random batch of fused query/target sequences, computes the
//! full contrastive training loss, and compares the analytic gradient of
//! every probed parameter coordinate against central finite differences.

use ndarray::Array2;
use rand::Rng;

use crate::encoder::{
    assemble_single, assemble_target, backward_rows, extract_query, extract_target, forward,
    EncoderConfig, EncoderParams, FusedInput,
};
use crate::error::Result;
use crate::seeds;
use crate::training::{batch_loss, batch_scores, LossForm};

const FD_EPS: f64 = 1e-4;
const BATCH: usize = 3;

struct CheckSetup {
    queries: Vec<FusedInput>,
    targets: Vec<FusedInput>,
}

fn random_inputs(config: &EncoderConfig, seed: u64) -> Result<CheckSetup> {
    let mut rng = seeds::rng(seed, "gradcheck-inputs");
    let window = config.max_seq_len;
    let vocab = config.vocab_size;
    let mut queries = Vec::with_capacity(BATCH);
    let mut targets = Vec::with_capacity(BATCH);
    for _ in 0..BATCH {
        let budget = window - 4;
        let m = rng.random_range(1..=budget.min(8));
        let p = rng.random_range(0..=(budget - m).min(8));
        let doc: Vec<usize> = (0..m).map(|_| rng.random_range(4..vocab)).collect();
        let gen: Vec<usize> = (0..p).map(|_| rng.random_range(4..vocab)).collect();
        queries.push(assemble_single(&doc, &gen, window, config.mask_type)?);
        let n = rng.random_range(1..=(window - 2).min(10));
        let code: Vec<usize> = (0..n).map(|_| rng.random_range(4..vocab)).collect();
        targets.push(assemble_target(&code, window, config.mask_type));
    }
    Ok(CheckSetup { queries, targets })
}

fn training_loss(params: &EncoderParams, setup: &CheckSetup) -> Result<f64> {
    let mut queries = Vec::with_capacity(BATCH);
    let mut targets = Vec::with_capacity(BATCH);
    for input in &setup.queries {
        let (hidden, _) = forward(params, input)?;
        queries.push(extract_query(&hidden, &input.cls_positions)?);
    }
    for input in &setup.targets {
        let (hidden, _) = forward(params, input)?;
        targets.push(extract_target(&hidden));
    }
    let scores = batch_scores(&queries, &targets)?;
    Ok(batch_loss(&scores, LossForm::LogSoftmax)?.0)
}

fn analytic_gradients(params: &EncoderParams, setup: &CheckSetup) -> Result<EncoderParams> {
    let d = params.token_embedding.ncols();
    let mut queries = Vec::with_capacity(BATCH);
    let mut targets = Vec::with_capacity(BATCH);
    let mut query_traces = Vec::with_capacity(BATCH);
    let mut target_traces = Vec::with_capacity(BATCH);
    for input in &setup.queries {
        let (hidden, trace) = forward(params, input)?;
        queries.push(extract_query(&hidden, &input.cls_positions)?);
        query_traces.push(trace);
    }
    for input in &setup.targets {
        let (hidden, trace) = forward(params, input)?;
        targets.push(extract_target(&hidden));
        target_traces.push(trace);
    }
    let scores = batch_scores(&queries, &targets)?;
    let (_, grad_scores) = batch_loss(&scores, LossForm::LogSoftmax)?;

    let mut z_rows = Array2::zeros((BATCH, d));
    let mut q_sums = Array2::zeros((BATCH, d));
    for j in 0..BATCH {
        z_rows.row_mut(j).assign(&targets[j].v);
        q_sums
            .row_mut(j)
            .assign(&(&queries[j].v_doc + &queries[j].v_gen));
    }
    let grad_queries = grad_scores.dot(&z_rows);
    let grad_targets = grad_scores.t().dot(&q_sums);

    let mut grads = params.zeros_like();
    for b in 0..BATCH {
        let gq = grad_queries.row(b);
        let cls = &setup.queries[b].cls_positions;
        let seed_rows = [(cls[0], gq), (cls[1], gq)];
        backward_rows(params, &query_traces[b], &seed_rows, &mut grads)?;
        backward_rows(params, &target_traces[b], &[(0, grad_targets.row(b))], &mut grads)?;
    }
    Ok(grads)
}

/// Compare analytic gradients against central finite differences at
/// `num_probes` uniformly chosen parameter coordinates; returns the worst
/// relative error.
pub fn grad_check(config: &EncoderConfig, seed: u64, num_probes: usize) -> Result<f64> {
    if num_probes == 0 {
        return Ok(0.0);
    }
    config.validate()?;
    let init_config = EncoderConfig {
        seed,
        ..config.clone()
    };
    let mut params = EncoderParams::init(&init_config);
    let setup = random_inputs(&init_config, seed)?;
    let grads = analytic_gradients(&params, &setup)?;

    let sizes: Vec<usize> = params.arrays().iter().map(|a| a.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = seeds::rng(seed, "gradcheck-probes");

    let mut worst: f64 = 0.0;
    for _ in 0..num_probes {
        let mut flat = rng.random_range(0..total);
        let mut array_index = 0;
        while flat >= sizes[array_index] {
            flat -= sizes[array_index];
            array_index += 1;
        }

        let analytic = grads.arrays()[array_index].as_slice().expect("contiguous")[flat];
        let original = params.arrays()[array_index].as_slice().expect("contiguous")[flat];

        params.arrays_mut()[array_index].as_slice_mut().expect("contiguous")[flat] =
            original + FD_EPS;
        let plus = training_loss(&params, &setup)?;
        params.arrays_mut()[array_index].as_slice_mut().expect("contiguous")[flat] =
            original - FD_EPS;
        let minus = training_loss(&params, &setup)?;
        params.arrays_mut()[array_index].as_slice_mut().expect("contiguous")[flat] = original;

        let numeric = (plus - minus) / (2.0 * FD_EPS);
        let rel = if analytic.abs() < 1e-12 && numeric.abs() < 1e-12 {
            0.0
        } else {
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
        };
        worst = worst.max(rel);
    }
    Ok(worst)
}
