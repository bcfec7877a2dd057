//! Trainable parameter arrays.
//!
//! Every parameter is a 64-bit `Array2`; vector-shaped parameters (biases,
//! layer-norm scale/shift) are stored as single-row matrices so the whole
//! set can be walked uniformly in a fixed declaration order. That order is
//! load-bearing: the checkpoint format, the optimizer state, and gradient
//! probing all index into it.

use ndarray::Array2;
use rand::Rng;

use crate::encoder::EncoderConfig;
use crate::seeds;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_w_q: Array2<f64>,
    pub attn_w_k: Array2<f64>,
    pub attn_w_v: Array2<f64>,
    pub attn_w_o: Array2<f64>,
    pub ln1_scale: Array2<f64>,
    pub ln1_shift: Array2<f64>,
    pub ffn_w1: Array2<f64>,
    pub ffn_b1: Array2<f64>,
    pub ffn_w2: Array2<f64>,
    pub ffn_b2: Array2<f64>,
    pub ln2_scale: Array2<f64>,
    pub ln2_shift: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// Head factorization of the attention projections.
    pub num_heads: usize,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut a = Array2::zeros((rows, cols));
    for v in a.iter_mut() {
        *v = rng.random_range(-limit..limit);
    }
    a
}

impl EncoderParams {
    /// Seeded initialization: Xavier-uniform weight matrices, zero biases,
    /// identity layer norms. The fill order is the declaration order, so
    /// the same seed and config always produce bitwise-identical values.
    pub fn init(config: &EncoderConfig) -> EncoderParams {
        let d = config.model_dim;
        let f = config.ffn_dim;
        let mut rng = seeds::rng(config.seed, "encoder-init");
        let token_embedding = xavier(config.vocab_size, d, &mut rng);
        let position_embedding = xavier(config.max_seq_len, d, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                attn_w_q: xavier(d, d, &mut rng),
                attn_w_k: xavier(d, d, &mut rng),
                attn_w_v: xavier(d, d, &mut rng),
                attn_w_o: xavier(d, d, &mut rng),
                ln1_scale: Array2::ones((1, d)),
                ln1_shift: Array2::zeros((1, d)),
                ffn_w1: xavier(d, f, &mut rng),
                ffn_b1: Array2::zeros((1, f)),
                ffn_w2: xavier(f, d, &mut rng),
                ffn_b2: Array2::zeros((1, d)),
                ln2_scale: Array2::ones((1, d)),
                ln2_shift: Array2::zeros((1, d)),
            })
            .collect();
        EncoderParams {
            num_heads: config.num_heads,
            token_embedding,
            position_embedding,
            layers,
        }
    }

    /// All-zero parameter set with shapes from the config.
    pub fn zeros(config: &EncoderConfig) -> EncoderParams {
        let d = config.model_dim;
        let f = config.ffn_dim;
        EncoderParams {
            num_heads: config.num_heads,
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_seq_len, d)),
            layers: (0..config.num_layers)
                .map(|_| LayerParams {
                    attn_w_q: Array2::zeros((d, d)),
                    attn_w_k: Array2::zeros((d, d)),
                    attn_w_v: Array2::zeros((d, d)),
                    attn_w_o: Array2::zeros((d, d)),
                    ln1_scale: Array2::zeros((1, d)),
                    ln1_shift: Array2::zeros((1, d)),
                    ffn_w1: Array2::zeros((d, f)),
                    ffn_b1: Array2::zeros((1, f)),
                    ffn_w2: Array2::zeros((f, d)),
                    ffn_b2: Array2::zeros((1, d)),
                    ln2_scale: Array2::zeros((1, d)),
                    ln2_shift: Array2::zeros((1, d)),
                })
                .collect(),
        }
    }

    /// Same shapes, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> EncoderParams {
        EncoderParams {
            num_heads: self.num_heads,
            token_embedding: Array2::zeros(self.token_embedding.raw_dim()),
            position_embedding: Array2::zeros(self.position_embedding.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_w_q: Array2::zeros(l.attn_w_q.raw_dim()),
                    attn_w_k: Array2::zeros(l.attn_w_k.raw_dim()),
                    attn_w_v: Array2::zeros(l.attn_w_v.raw_dim()),
                    attn_w_o: Array2::zeros(l.attn_w_o.raw_dim()),
                    ln1_scale: Array2::zeros(l.ln1_scale.raw_dim()),
                    ln1_shift: Array2::zeros(l.ln1_shift.raw_dim()),
                    ffn_w1: Array2::zeros(l.ffn_w1.raw_dim()),
                    ffn_b1: Array2::zeros(l.ffn_b1.raw_dim()),
                    ffn_w2: Array2::zeros(l.ffn_w2.raw_dim()),
                    ffn_b2: Array2::zeros(l.ffn_b2.raw_dim()),
                    ln2_scale: Array2::zeros(l.ln2_scale.raw_dim()),
                    ln2_shift: Array2::zeros(l.ln2_shift.raw_dim()),
                })
                .collect(),
        }
    }

    /// All parameter arrays in declaration order.
    pub fn arrays(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            v.extend([
                &l.attn_w_q,
                &l.attn_w_k,
                &l.attn_w_v,
                &l.attn_w_o,
                &l.ln1_scale,
                &l.ln1_shift,
                &l.ffn_w1,
                &l.ffn_b1,
                &l.ffn_w2,
                &l.ffn_b2,
                &l.ln2_scale,
                &l.ln2_shift,
            ]);
        }
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> =
            vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            v.extend([
                &mut l.attn_w_q,
                &mut l.attn_w_k,
                &mut l.attn_w_v,
                &mut l.attn_w_o,
                &mut l.ln1_scale,
                &mut l.ln1_shift,
                &mut l.ffn_w1,
                &mut l.ffn_b1,
                &mut l.ffn_w2,
                &mut l.ffn_b2,
                &mut l.ln2_scale,
                &mut l.ln2_shift,
            ]);
        }
        v
    }

    /// Array names matching `arrays()` order, for error messages and the
    /// checkpoint header.
    pub fn array_names(num_layers: usize) -> Vec<String> {
        let mut names = vec![
            "token_embedding".to_string(),
            "position_embedding".to_string(),
        ];
        for l in 0..num_layers {
            for field in [
                "attn_w_q",
                "attn_w_k",
                "attn_w_v",
                "attn_w_o",
                "ln1_scale",
                "ln1_shift",
                "ffn_w1",
                "ffn_b1",
                "ffn_w2",
                "ffn_b2",
                "ln2_scale",
                "ln2_shift",
            ] {
                names.push(format!("layer{l}.{field}"));
            }
        }
        names
    }

    pub fn num_values(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::MaskType;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            max_seq_len: 12,
            vocab_size: 20,
            mask_type: MaskType::A,
            seed: 5,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let c = tiny_config();
        assert_eq!(EncoderParams::init(&c), EncoderParams::init(&c));
    }

    #[test]
    fn different_seed_changes_values() {
        let a = EncoderParams::init(&tiny_config());
        let b = EncoderParams::init(&EncoderConfig {
            seed: 6,
            ..tiny_config()
        });
        assert_ne!(a, b);
    }

    #[test]
    fn shapes_follow_config() {
        let c = tiny_config();
        let p = EncoderParams::init(&c);
        assert_eq!(p.token_embedding.dim(), (20, 8));
        assert_eq!(p.position_embedding.dim(), (12, 8));
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].ffn_w1.dim(), (8, 16));
        assert_eq!(p.layers[0].ffn_w2.dim(), (16, 8));
        assert_eq!(p.layers[0].ln1_scale.dim(), (1, 8));
        assert!(p.all_finite());
    }

    #[test]
    fn array_walk_matches_names() {
        let c = tiny_config();
        let p = EncoderParams::init(&c);
        assert_eq!(
            p.arrays().len(),
            EncoderParams::array_names(c.num_layers).len()
        );
    }

    #[test]
    fn layer_norms_start_as_identity() {
        let p = EncoderParams::init(&tiny_config());
        assert!(p.layers[0].ln1_scale.iter().all(|&v| v == 1.0));
        assert!(p.layers[0].ln1_shift.iter().all(|&v| v == 0.0));
        assert!(p.layers[0].ffn_b1.iter().all(|&v| v == 0.0));
    }
}
