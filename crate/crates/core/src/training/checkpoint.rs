//! Checkpoint serialization.
//!
//! File layout: magic bytes `GACR1\n`, a textual header of config fields
//! (one `key value` pair per line) terminated by a `params` line, then
//! every parameter array in declaration order as row-major little-endian
//! 64-bit floats. An optional `optimizer` section follows with a `step`
//! line and the first/second moment arrays in the same order.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::encoder::{EncoderConfig, EncoderParams, MaskType};
use crate::error::{GacrError, Result};
use crate::training::OptimizerState;

const MAGIC: &[u8] = b"GACR1\n";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub optimizer: Option<OptimizerState>,
}

fn array_bytes(arrays: &[&Array2<f64>]) -> Vec<u8> {
    let total: usize = arrays.iter().map(|a| a.len() * 8).sum();
    let mut out = Vec::with_capacity(total);
    for a in arrays {
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Hex SHA-256 of the serialized parameter section; identifies which
/// parameters an index was built from.
pub fn params_fingerprint(params: &EncoderParams) -> String {
    let digest = Sha256::digest(&array_bytes(&params.arrays()));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(
        config: EncoderConfig,
        params: EncoderParams,
        optimizer: Option<OptimizerState>,
    ) -> Checkpoint {
        Checkpoint {
            config,
            params,
            optimizer,
        }
    }

    pub fn fingerprint(&self) -> String {
        params_fingerprint(&self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(
            format!(
                "num_layers {}\nnum_heads {}\nmodel_dim {}\nffn_dim {}\nmax_seq_len {}\nvocab_size {}\nmask_type {}\nseed {}\nparams\n",
                c.num_layers,
                c.num_heads,
                c.model_dim,
                c.ffn_dim,
                c.max_seq_len,
                c.vocab_size,
                c.mask_type,
                c.seed
            )
            .as_bytes(),
        );
        out.extend_from_slice(&array_bytes(&self.params.arrays()));
        if let Some(opt) = &self.optimizer {
            out.extend_from_slice(format!("optimizer\nstep {}\n", opt.step).as_bytes());
            out.extend_from_slice(&array_bytes(&opt.m.arrays()));
            out.extend_from_slice(&array_bytes(&opt.v.arrays()));
        }
        std::fs::write(path, out).map_err(|e| GacrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| GacrError::io(path, e))?;
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(GacrError::Checkpoint(format!(
                "bad magic in {}",
                path.display()
            )));
        }

        let mut pos = MAGIC.len();
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| pos + i)
                .ok_or_else(|| GacrError::Checkpoint("truncated header".into()))?;
            let line = std::str::from_utf8(&bytes[pos..end])
                .map_err(|_| GacrError::Checkpoint("non-utf8 header".into()))?;
            pos = end + 1;
            if line == "params" {
                break;
            }
            match line.split_once(' ') {
                Some((k, v)) => fields.insert(k.to_string(), v.to_string()),
                None => {
                    return Err(GacrError::Checkpoint(format!("malformed header line {line:?}")))
                }
            };
        }

        let get = |key: &str| -> Result<&String> {
            fields
                .get(key)
                .ok_or_else(|| GacrError::Checkpoint(format!("missing header field {key}")))
        };
        let get_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| GacrError::Checkpoint(format!("bad value for header field {key}")))
        };
        let config = EncoderConfig {
            num_layers: get_usize("num_layers")?,
            num_heads: get_usize("num_heads")?,
            model_dim: get_usize("model_dim")?,
            ffn_dim: get_usize("ffn_dim")?,
            max_seq_len: get_usize("max_seq_len")?,
            vocab_size: get_usize("vocab_size")?,
            mask_type: MaskType::parse(get("mask_type")?)?,
            seed: get("seed")?
                .parse()
                .map_err(|_| GacrError::Checkpoint("bad value for header field seed".into()))?,
        };
        config.validate()?;

        let mut params = EncoderParams::zeros(&config);
        pos = read_arrays(&bytes, pos, &mut params, &config)?;

        let optimizer = if pos < bytes.len() {
            let line_end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| pos + i)
                .ok_or_else(|| GacrError::Checkpoint("truncated optimizer tag".into()))?;
            if &bytes[pos..line_end] != b"optimizer" {
                return Err(GacrError::Checkpoint("unknown trailing section".into()));
            }
            pos = line_end + 1;
            let step_end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| pos + i)
                .ok_or_else(|| GacrError::Checkpoint("truncated optimizer step".into()))?;
            let step_line = std::str::from_utf8(&bytes[pos..step_end])
                .map_err(|_| GacrError::Checkpoint("non-utf8 optimizer step".into()))?;
            let step: u64 = step_line
                .strip_prefix("step ")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GacrError::Checkpoint("malformed optimizer step".into()))?;
            pos = step_end + 1;
            let mut m = EncoderParams::zeros(&config);
            pos = read_arrays(&bytes, pos, &mut m, &config)?;
            let mut v = EncoderParams::zeros(&config);
            pos = read_arrays(&bytes, pos, &mut v, &config)?;
            Some(OptimizerState { m, v, step })
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(GacrError::Checkpoint("trailing bytes after arrays".into()));
        }

        Ok(Checkpoint {
            config,
            params,
            optimizer,
        })
    }

    /// Reject loads whose stored dimensions differ from the expected
    /// config, naming the offending field.
    pub fn ensure_matches(&self, expected: &EncoderConfig) -> Result<()> {
        let c = &self.config;
        let checks = [
            ("num_layers", c.num_layers, expected.num_layers),
            ("num_heads", c.num_heads, expected.num_heads),
            ("model_dim", c.model_dim, expected.model_dim),
            ("ffn_dim", c.ffn_dim, expected.ffn_dim),
            ("max_seq_len", c.max_seq_len, expected.max_seq_len),
            ("vocab_size", c.vocab_size, expected.vocab_size),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(GacrError::Checkpoint(format!(
                    "shape mismatch in {name}: checkpoint has {got}, config wants {want}"
                )));
            }
        }
        Ok(())
    }
}

fn read_arrays(
    bytes: &[u8],
    mut pos: usize,
    params: &mut EncoderParams,
    config: &EncoderConfig,
) -> Result<usize> {
    let names = EncoderParams::array_names(config.num_layers);
    for (arr, name) in params.arrays_mut().into_iter().zip(names) {
        let want = arr.len() * 8;
        if pos + want > bytes.len() {
            return Err(GacrError::Checkpoint(format!(
                "truncated file while reading {name}"
            )));
        }
        let slice = arr.as_slice_mut().expect("contiguous");
        for (i, chunk) in bytes[pos..pos + want].chunks_exact(8).enumerate() {
            slice[i] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        pos += want;
    }
    Ok(pos)
}
