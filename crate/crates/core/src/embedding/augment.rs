use std::collections::{BTreeMap, HashMap};

use super::attention::{embed_queries, EmbedContext, MemorySource};
use super::{Combine, EmbeddingVector, SimilarMode};
use crate::ingest::Event;
use crate::learn::{ParameterStore, Tape, Tensor, Var};
use crate::memory::MemoryTable;
use crate::similarity::{KnnIndex, Neighbor, SimilarityConfig, SimilarityIndex};
use crate::staleness::StalenessReport;
use crate::temporal::TemporalAdjacency;
use crate::{Error, NodeId, Result};

use super::{EmbeddingConfig, EmbeddingParams};

/// Nodes needing an embedding for `batch`, each at the timestamp of its first
/// appearance (as source, destination or negative), ordered by node id.
///
/// `negatives[i * per_event + j]` is the j-th negative of event i.
pub fn reference_times(
    batch: &[Event],
    negatives: &[NodeId],
    per_event: usize,
) -> Vec<(NodeId, f64)> {
    let mut first: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (i, e) in batch.iter().enumerate() {
        first.entry(e.source).or_insert(e.timestamp);
        first.entry(e.destination).or_insert(e.timestamp);
        let negs = negatives
            .get(i * per_event..(i + 1) * per_event)
            .unwrap_or(&[]);
        for &n in negs {
            first.entry(n).or_insert(e.timestamp);
        }
    }
    first.into_iter().collect()
}

/// Output of [`embed_batch`].
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub queries: Vec<(NodeId, f64)>,
    /// Row of each node in `matrix`.
    pub rows: HashMap<NodeId, usize>,
    pub matrix: Var,
    /// Stale nodes that were augmented, with the similar nodes used.
    pub augmented: BTreeMap<NodeId, Vec<Neighbor>>,
    /// Stale nodes left on the plain path because no similar node was found.
    pub skipped: Vec<NodeId>,
}

impl BatchEmbeddings {
    pub fn row(&self, node: NodeId) -> Option<usize> {
        self.rows.get(&node).copied()
    }
}

fn mapped_memory(tape: &mut Tape, ctx: &EmbedContext<'_>, nodes: &[NodeId]) -> Var {
    let rows = ctx.memory.rows(tape, nodes);
    match ctx.params.self_proj {
        Some(id) => {
            let w = tape.param(ctx.store, id);
            tape.matmul(rows, w)
        }
        None => rows,
    }
}

fn combine_scale(combine: Combine, counts: &[usize], dim: usize) -> Option<Tensor> {
    match combine {
        Combine::Sum => None,
        Combine::Mean => {
            let mut data = Vec::with_capacity(counts.len() * dim);
            for &c in counts {
                data.extend(std::iter::repeat_n(1.0 / c as f64, dim));
            }
            Some(Tensor::from_vec(counts.len(), dim, data))
        }
    }
}

/// Embeddings of `queries` on the tape.
///
/// Nodes outside the report's stale set get their attention embedding. A stale
/// node with at least one similar node in `index` gets
/// `(self term + combined similar terms) + attention embedding`.
pub fn embed_batch(
    tape: &mut Tape,
    ctx: &EmbedContext<'_>,
    queries: &[(NodeId, f64)],
    report: &StalenessReport,
    index: Option<&SimilarityIndex>,
    sim_cfg: &SimilarityConfig,
) -> BatchEmbeddings {
    let mut augmented = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut aug_rows = Vec::new();
    for (i, &(node, _)) in queries.iter().enumerate() {
        if !report.is_stale(node) {
            continue;
        }
        let found = match index {
            Some(ix) if !ix.is_empty() => {
                ix.knn_query(ctx.memory.memory.state(node), sim_cfg.k, &[node])
            }
            _ => Vec::new(),
        };
        if found.is_empty() {
            skipped.push(node);
        } else {
            aug_rows.push(i);
            augmented.insert(node, found);
        }
    }

    let k_max = augmented.values().map(Vec::len).max().unwrap_or(0);
    let mut all_queries = queries.to_vec();
    if ctx.cfg.similar_mode == SimilarMode::Attention {
        for &i in &aug_rows {
            let (node, t) = queries[i];
            all_queries.extend(augmented[&node].iter().map(|nb| (nb.id, t)));
        }
    }
    let attention = embed_queries(tape, ctx, &all_queries);
    let rows = queries.iter().enumerate().map(|(i, q)| (q.0, i)).collect();
    if aug_rows.is_empty() {
        let matrix = if all_queries.len() == queries.len() {
            attention
        } else {
            tape.gather_rows(attention, (0..queries.len()).map(Some).collect())
        };
        return BatchEmbeddings {
            queries: queries.to_vec(),
            rows,
            matrix,
            augmented,
            skipped,
        };
    }

    let aug_nodes: Vec<NodeId> = aug_rows.iter().map(|&i| queries[i].0).collect();
    let self_terms = mapped_memory(tape, ctx, &aug_nodes);

    // Per slot k, the k-th similar node of every augmented node (or nothing).
    let similar_source = match ctx.cfg.similar_mode {
        SimilarMode::Attention => attention,
        SimilarMode::Memory => {
            let ids: Vec<NodeId> = aug_nodes
                .iter()
                .flat_map(|n| augmented[n].iter().map(|nb| nb.id))
                .collect();
            mapped_memory(tape, ctx, &ids)
        }
    };
    let base = match ctx.cfg.similar_mode {
        SimilarMode::Attention => queries.len(),
        SimilarMode::Memory => 0,
    };
    let mut offsets = Vec::with_capacity(aug_nodes.len());
    let mut next = base;
    for n in &aug_nodes {
        offsets.push(next);
        next += augmented[n].len();
    }
    let mut similar: Option<Var> = None;
    for slot in 0..k_max {
        let index: Vec<Option<usize>> = aug_nodes
            .iter()
            .zip(&offsets)
            .map(|(n, &off)| (slot < augmented[n].len()).then_some(off + slot))
            .collect();
        let term = tape.gather_rows(similar_source, index);
        similar = Some(match similar {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let mut similar = similar.expect("augmented nodes have at least one similar node");
    let counts: Vec<usize> = aug_nodes.iter().map(|n| augmented[n].len()).collect();
    if let Some(scale) = combine_scale(ctx.cfg.combine, &counts, ctx.params.d_emb) {
        let scale = tape.constant(scale);
        similar = tape.mul(similar, scale);
    }

    let own_attention = tape.gather_rows(attention, aug_rows.iter().map(|&i| Some(i)).collect());
    let extra = tape.add(self_terms, similar);
    let extra = tape.add(extra, own_attention);

    let stacked = tape.concat_rows(&[attention, extra]);
    let offset = all_queries.len();
    let mut index: Vec<Option<usize>> = (0..queries.len()).map(Some).collect();
    for (j, &i) in aug_rows.iter().enumerate() {
        index[i] = Some(offset + j);
    }
    let matrix = tape.gather_rows(stacked, index);
    BatchEmbeddings {
        queries: queries.to_vec(),
        rows,
        matrix,
        augmented,
        skipped,
    }
}

/// Plain-value variant of [`embed_batch`] keyed by node id.
#[allow(clippy::too_many_arguments)]
pub fn embed_batch_values(
    queries: &[(NodeId, f64)],
    memory: &MemoryTable,
    adjacency: &TemporalAdjacency,
    store: &ParameterStore,
    params: &EmbeddingParams,
    cfg: &EmbeddingConfig,
    report: &StalenessReport,
    index: Option<&SimilarityIndex>,
    sim_cfg: &SimilarityConfig,
) -> Result<BTreeMap<NodeId, EmbeddingVector>> {
    if !store.all_finite() {
        return Err(Error::Numeric("non-finite parameter values".into()));
    }
    let ctx = EmbedContext {
        store,
        params,
        cfg,
        adjacency,
        memory: MemorySource::stored(memory),
    };
    let mut tape = Tape::new();
    let out = embed_batch(&mut tape, &ctx, queries, report, index, sim_cfg);
    let m = tape.value(out.matrix);
    Ok(queries
        .iter()
        .enumerate()
        .map(|(i, &(node, t))| {
            (
                node,
                EmbeddingVector {
                    node,
                    at_time: t,
                    values: m.row_slice(i).to_vec(),
                },
            )
        })
        .collect())
}

/// Memory state of `node` mapped to the embedding width.
pub fn self_term(
    node: NodeId,
    memory: &MemoryTable,
    store: &ParameterStore,
    params: &EmbeddingParams,
    cfg: &EmbeddingConfig,
    adjacency: &TemporalAdjacency,
) -> Vec<f64> {
    let ctx = EmbedContext {
        store,
        params,
        cfg,
        adjacency,
        memory: MemorySource::stored(memory),
    };
    let mut tape = Tape::new();
    let v = mapped_memory(&mut tape, &ctx, &[node]);
    tape.value(v).row_slice(0).to_vec()
}

/// Contribution of similar node `similar` to a stale node embedded at `t`.
pub fn similar_term(
    similar: NodeId,
    t: f64,
    memory: &MemoryTable,
    adjacency: &TemporalAdjacency,
    store: &ParameterStore,
    params: &EmbeddingParams,
    cfg: &EmbeddingConfig,
) -> Vec<f64> {
    match cfg.similar_mode {
        SimilarMode::Memory => self_term(similar, memory, store, params, cfg, adjacency),
        SimilarMode::Attention => {
            let ctx = EmbedContext {
                store,
                params,
                cfg,
                adjacency,
                memory: MemorySource::stored(memory),
            };
            let mut tape = Tape::new();
            let v = embed_queries(&mut tape, &ctx, &[(similar, t)]);
            tape.value(v).row_slice(0).to_vec()
        }
    }
}
