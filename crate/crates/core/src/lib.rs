//! Generation-augmented code retrieval.
//!
//! A documentation query is expanded with generated code snippets, fused
//! through a masked-attention bi-encoder into a dual-CLS query vector,
//! and ranked against candidate code by dot-product score. The crate
//! covers the whole desk-scale pipeline: corpus ingestion, snippet
//! generation (remote or deterministic stub), the encoder with exact
//! manual backpropagation, in-batch contrastive training, and MRR
//! evaluation with ablation sweeps.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod generation;
pub mod retrieval;
pub mod seeds;
pub mod synth;
pub mod training;

pub use error::{GacrError, Result};

/// Cap the global worker pool. Call once at startup, before any parallel
/// work; 0 keeps the default (one worker per core).
pub fn set_parallelism(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| GacrError::Config(format!("cannot size worker pool: {e}")))
}
