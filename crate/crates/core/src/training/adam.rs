//! Adam optimizer over the encoder parameter set.

use crate::encoder::EncoderParams;

/// First/second moment estimates mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: EncoderParams,
    pub v: EncoderParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> OptimizerState {
        OptimizerState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update, walking arrays in declaration order.
    pub fn apply(
        &mut self,
        params: &mut EncoderParams,
        grads: &EncoderParams,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let mut ps = params.arrays_mut();
        let gs = grads.arrays();
        let mut ms = self.m.arrays_mut();
        let mut vs = self.v.arrays_mut();
        for i in 0..ps.len() {
            let p = ps[i].as_slice_mut().expect("contiguous");
            let g = gs[i].as_slice().expect("contiguous");
            let m = ms[i].as_slice_mut().expect("contiguous");
            let v = vs[i].as_slice_mut().expect("contiguous");
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, MaskType};

    fn tiny_params() -> EncoderParams {
        EncoderParams::init(&EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            model_dim: 4,
            ffn_dim: 8,
            max_seq_len: 8,
            vocab_size: 10,
            mask_type: MaskType::A,
            seed: 1,
        })
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = tiny_params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = OptimizerState::new(&p);
        opt.apply(&mut p, &g, 1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn step_moves_against_gradient() {
        let mut p = tiny_params();
        let mut g = p.zeros_like();
        g.token_embedding[[0, 0]] = 1.0;
        let before = p.token_embedding[[0, 0]];
        let mut opt = OptimizerState::new(&p);
        opt.apply(&mut p, &g, 1e-3, 0.9, 0.999, 1e-8);
        assert!(p.token_embedding[[0, 0]] < before);
    }

    #[test]
    fn first_step_size_is_learning_rate() {
        // with bias correction, |delta| ~= lr for any nonzero gradient
        let mut p = tiny_params();
        let mut g = p.zeros_like();
        g.layers[0].ffn_w1[[2, 3]] = 0.37;
        let before = p.layers[0].ffn_w1[[2, 3]];
        let mut opt = OptimizerState::new(&p);
        opt.apply(&mut p, &g, 1e-3, 0.9, 0.999, 1e-8);
        let delta = (p.layers[0].ffn_w1[[2, 3]] - before).abs();
        assert!((delta - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn updates_are_deterministic() {
        let mut p1 = tiny_params();
        let mut p2 = tiny_params();
        let mut g = p1.zeros_like();
        g.token_embedding[[3, 1]] = -0.5;
        g.layers[0].attn_w_q[[1, 1]] = 0.25;
        let mut o1 = OptimizerState::new(&p1);
        let mut o2 = OptimizerState::new(&p2);
        for _ in 0..5 {
            o1.apply(&mut p1, &g, 1e-3, 0.9, 0.999, 1e-8);
            o2.apply(&mut p2, &g, 1e-3, 0.9, 0.999, 1e-8);
        }
        assert_eq!(p1, p2);
        assert_eq!(o1, o2);
    }
}
