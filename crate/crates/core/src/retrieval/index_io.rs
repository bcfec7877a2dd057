//! Index persistence.
//!
//! Text header (magic, dim, count, fingerprint), then candidate ids one
//! per line, then the vector matrix as row-major little-endian f64.

use std::path::Path;

use ndarray::Array2;

use crate::error::{GacrError, Result};
use crate::retrieval::CandidateIndex;

const MAGIC: &[u8] = b"GACRIDX1\n";

pub fn save_index(index: &CandidateIndex, path: &Path) -> Result<()> {
    let (count, dim) = index.vectors.dim();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(
        format!(
            "dim {dim}\ncount {count}\nfingerprint {}\nids\n",
            index.fingerprint
        )
        .as_bytes(),
    );
    for id in &index.ids {
        out.extend_from_slice(id.as_bytes());
        out.push(b'\n');
    }
    out.extend_from_slice(b"vectors\n");
    for v in index.vectors.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| GacrError::io(path, e))
}

pub fn load_index(path: &Path) -> Result<CandidateIndex> {
    let bytes = std::fs::read(path).map_err(|e| GacrError::io(path, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(GacrError::Checkpoint(format!(
            "bad magic in index {}",
            path.display()
        )));
    }
    let mut pos = MAGIC.len();
    let next_line = |bytes: &[u8], pos: &mut usize| -> Result<String> {
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| *pos + i)
            .ok_or_else(|| GacrError::Checkpoint("truncated index header".into()))?;
        let line = std::str::from_utf8(&bytes[*pos..end])
            .map_err(|_| GacrError::Checkpoint("non-utf8 index header".into()))?
            .to_string();
        *pos = end + 1;
        Ok(line)
    };

    let parse_field = |line: &str, key: &str| -> Result<String> {
        line.strip_prefix(&format!("{key} "))
            .map(|v| v.to_string())
            .ok_or_else(|| GacrError::Checkpoint(format!("expected index field {key}")))
    };
    let dim: usize = parse_field(&next_line(&bytes, &mut pos)?, "dim")?
        .parse()
        .map_err(|_| GacrError::Checkpoint("bad index dim".into()))?;
    let count: usize = parse_field(&next_line(&bytes, &mut pos)?, "count")?
        .parse()
        .map_err(|_| GacrError::Checkpoint("bad index count".into()))?;
    let fingerprint = parse_field(&next_line(&bytes, &mut pos)?, "fingerprint")?;
    if next_line(&bytes, &mut pos)? != "ids" {
        return Err(GacrError::Checkpoint("expected ids section".into()));
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(next_line(&bytes, &mut pos)?);
    }
    if next_line(&bytes, &mut pos)? != "vectors" {
        return Err(GacrError::Checkpoint("expected vectors section".into()));
    }
    let want = count * dim * 8;
    if bytes.len() - pos != want {
        return Err(GacrError::Checkpoint(format!(
            "index vector section has {} bytes, expected {want}",
            bytes.len() - pos
        )));
    }
    let mut vectors = Array2::zeros((count, dim));
    let slice = vectors.as_slice_mut().expect("contiguous");
    for (i, chunk) in bytes[pos..].chunks_exact(8).enumerate() {
        slice[i] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    Ok(CandidateIndex {
        ids,
        vectors,
        fingerprint,
    })
}
