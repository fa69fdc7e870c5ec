//! Node embeddings: harmonic time encoding, temporal attention over recent
//! interaction partners, and additive augmentation of stale nodes with their
//! nearest neighbors in memory space.

mod attention;
mod augment;
mod time;

pub use attention::{
    attention_embed, attention_weights, embed_queries, AttentionLayerParams, EmbedContext,
    EmbeddingParams, MemorySource,
};
pub use augment::{
    embed_batch, embed_batch_values, reference_times, self_term, similar_term, BatchEmbeddings,
};
pub use time::TimeEncoder;

use crate::{Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarMode {
    /// Similar node contributes its attention embedding at the stale node's time.
    Attention,
    /// Similar node contributes its (mapped) memory state.
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConfig {
    pub layers: usize,
    pub neighbors: usize,
    pub heads: usize,
    pub d_emb: usize,
    pub similar_mode: SimilarMode,
    pub combine: Combine,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            layers: 1,
            neighbors: crate::temporal::DEFAULT_NEIGHBORS,
            heads: 2,
            d_emb: 32,
            similar_mode: SimilarMode::Attention,
            combine: Combine::Sum,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.neighbors == 0 || self.heads == 0 || self.d_emb == 0 {
            return Err(Error::Config(
                "layers, neighbors, heads and d_emb must be positive".into(),
            ));
        }
        if !self.d_emb.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_emb {} not divisible by {} heads",
                self.d_emb, self.heads
            )));
        }
        Ok(())
    }
}

/// Embedding of `node` at reference time `at_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub node: NodeId,
    pub at_time: f64,
    pub values: Vec<f64>,
}
