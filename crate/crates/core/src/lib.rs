//! Streaming temporal graph network with staleness-aware embedding augmentation.
//!
//! The pipeline replays a time-ordered interaction stream in batches. Each node
//! keeps a memory vector updated by a GRU when it takes part in an event, and
//! embeddings come from multi-head temporal attention over its most recent
//! interaction partners. Nodes whose last update lags far behind the rest of the
//! current batch (a per-batch quantile of the event-time gaps) additionally get
//! the embedding of their nearest neighbor in memory space added to their own.
//!
//! Module map:
//!
//! * [`ingest`]: interaction streams, JODIE CSV, synthetic streams, splits.
//! * [`temporal`]: per-node interaction history and last-N neighbor queries.
//! * [`memory`]: memory table, messages, GRU updater.
//! * [`staleness`]: event-time gaps, quantile threshold, stale set.
//! * [`similarity`]: ball tree and brute-force KNN over memory vectors.
//! * [`embedding`]: time encoding, temporal attention, stale-node augmentation.
//! * [`learn`]: tape autodiff, decoder, Adam, gradient checks, training loop.
//! * [`harness`]: metrics, evaluation, ablation tables, checkpoints, config.

pub mod embedding;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod learn;
pub mod memory;
pub mod similarity;
pub mod staleness;
pub mod temporal;

pub use error::{Error, Result};

/// Global node identifier. Sources occupy `0..num_sources`, destinations follow.
pub type NodeId = usize;

/// Ordinal index of an event in its original stream.
pub type EventId = usize;
