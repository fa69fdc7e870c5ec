use std::collections::HashMap;

use rand::Rng;

use super::{EmbeddingConfig, EmbeddingVector, TimeEncoder};
use crate::learn::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::memory::MemoryTable;
use crate::temporal::TemporalAdjacency;
use crate::{Error, NodeId, Result};

/// Projections and feed-forward merge of one attention layer.
///
/// Queries are `[h(node) || enc(0)]`, keys and values
/// `[h(neighbor) || edge features || enc(t - t_neighbor)]`. The merge is
/// `W2 relu(W1 [attention || h(node)] + b1) + b2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionLayerParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub d_in: usize,
}

impl AttentionLayerParams {
    const NAMES: [&'static str; 7] = ["w_q", "w_k", "w_v", "ff_w1", "ff_b1", "ff_w2", "ff_b2"];

    fn shapes(d_in: usize, d_time: usize, d_edge: usize, d_emb: usize) -> [(usize, usize); 7] {
        [
            (d_in + d_time, d_emb),
            (d_in + d_edge + d_time, d_emb),
            (d_in + d_edge + d_time, d_emb),
            (d_emb + d_in, d_emb),
            (1, d_emb),
            (d_emb, d_emb),
            (1, d_emb),
        ]
    }

    fn from_ids(ids: &[ParamId], d_in: usize) -> Self {
        AttentionLayerParams {
            w_q: ids[0],
            w_k: ids[1],
            w_v: ids[2],
            ff_w1: ids[3],
            ff_b1: ids[4],
            ff_w2: ids[5],
            ff_b2: ids[6],
            d_in,
        }
    }

    pub fn all(&self) -> [ParamId; 7] {
        [
            self.w_q, self.w_k, self.w_v, self.ff_w1, self.ff_b1, self.ff_w2, self.ff_b2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub time: TimeEncoder,
    pub layers: Vec<AttentionLayerParams>,
    /// Memory -> embedding map for the self and memory-mode similar terms;
    /// `None` means identity (memory and embedding widths agree).
    pub self_proj: Option<ParamId>,
    pub d_memory: usize,
    pub d_edge: usize,
    pub d_emb: usize,
}

impl EmbeddingParams {
    /// Registers attention layers (and a self map when widths differ) in
    /// `store`, reusing an existing time encoder.
    pub fn init<R: Rng>(
        store: &mut ParameterStore,
        time: TimeEncoder,
        d_memory: usize,
        d_edge: usize,
        cfg: &EmbeddingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { d_memory } else { cfg.d_emb };
            let shapes = AttentionLayerParams::shapes(d_in, time.dim, d_edge, cfg.d_emb);
            let ids = AttentionLayerParams::NAMES
                .iter()
                .zip(shapes)
                .map(|(n, (r, c))| store.add_uniform(format!("attn.{l}.{n}"), r, c, rng))
                .collect::<Result<Vec<_>>>()?;
            layers.push(AttentionLayerParams::from_ids(&ids, d_in));
        }
        let self_proj = if d_memory == cfg.d_emb {
            None
        } else {
            Some(store.add_uniform("self_proj", d_memory, cfg.d_emb, rng)?)
        };
        Ok(EmbeddingParams {
            time,
            layers,
            self_proj,
            d_memory,
            d_edge,
            d_emb: cfg.d_emb,
        })
    }

    pub fn lookup(
        store: &ParameterStore,
        d_memory: usize,
        d_edge: usize,
        cfg: &EmbeddingConfig,
    ) -> Result<Self> {
        let time = TimeEncoder::lookup(store)?;
        let get = |n: String| {
            store
                .id(&n)
                .ok_or_else(|| Error::Config(format!("missing parameter `{n}`")))
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { d_memory } else { cfg.d_emb };
            let ids = AttentionLayerParams::NAMES
                .iter()
                .map(|n| get(format!("attn.{l}.{n}")))
                .collect::<Result<Vec<_>>>()?;
            layers.push(AttentionLayerParams::from_ids(&ids, d_in));
        }
        let self_proj = if d_memory == cfg.d_emb {
            None
        } else {
            Some(get("self_proj".into())?)
        };
        Ok(EmbeddingParams {
            time,
            layers,
            self_proj,
            d_memory,
            d_edge,
            d_emb: cfg.d_emb,
        })
    }
}

/// Where layer-0 inputs come from: stored memory, optionally with some rows
/// replaced by a differentiable replay of their latest update.
#[derive(Debug, Clone)]
pub struct MemorySource<'a> {
    pub memory: &'a MemoryTable,
    replayed: Option<(Var, HashMap<NodeId, usize>)>,
}

impl<'a> MemorySource<'a> {
    pub fn stored(memory: &'a MemoryTable) -> Self {
        MemorySource {
            memory,
            replayed: None,
        }
    }

    /// `rows` holds one replayed state per entry of `nodes`.
    pub fn with_replay(memory: &'a MemoryTable, rows: Var, nodes: &[NodeId]) -> Self {
        let map = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        MemorySource {
            memory,
            replayed: Some((rows, map)),
        }
    }

    /// Memory states of `nodes`, one row each.
    pub fn rows(&self, tape: &mut Tape, nodes: &[NodeId]) -> Var {
        let Some((replay, map)) = &self.replayed else {
            return tape.constant(self.memory.gather(nodes));
        };
        let offset = tape.value(*replay).rows();
        let mut stored = Vec::new();
        let index: Vec<Option<usize>> = nodes
            .iter()
            .map(|n| match map.get(n) {
                Some(&r) => Some(r),
                None => {
                    stored.push(*n);
                    Some(offset + stored.len() - 1)
                }
            })
            .collect();
        let constant = tape.constant(self.memory.gather(&stored));
        let all = tape.concat_rows(&[*replay, constant]);
        tape.gather_rows(all, index)
    }
}

/// Read-only inputs of an embedding pass.
#[derive(Debug, Clone)]
pub struct EmbedContext<'a> {
    pub store: &'a ParameterStore,
    pub params: &'a EmbeddingParams,
    pub cfg: &'a EmbeddingConfig,
    pub adjacency: &'a TemporalAdjacency,
    pub memory: MemorySource<'a>,
}

pub(crate) struct LayerOutput {
    pub embeddings: Var,
    /// Attention weights of the top layer, one `queries x neighbors` matrix per head.
    pub weights: Vec<Var>,
}

/// Temporal attention embeddings of `(node, time)` queries after `cfg.layers`
/// layers, one row per query.
pub fn embed_queries(tape: &mut Tape, ctx: &EmbedContext<'_>, queries: &[(NodeId, f64)]) -> Var {
    embed_layer(tape, ctx, queries, ctx.cfg.layers).embeddings
}

pub(crate) fn embed_layer(
    tape: &mut Tape,
    ctx: &EmbedContext<'_>,
    queries: &[(NodeId, f64)],
    layer: usize,
) -> LayerOutput {
    if layer == 0 {
        let nodes: Vec<NodeId> = queries.iter().map(|q| q.0).collect();
        return LayerOutput {
            embeddings: ctx.memory.rows(tape, &nodes),
            weights: Vec::new(),
        };
    }
    let p = ctx.params.layers[layer - 1];
    let n_slots = ctx.cfg.neighbors;
    let d_edge = ctx.params.d_edge;

    let mut counts = Vec::with_capacity(queries.len());
    let mut nb_queries = Vec::new();
    let mut slot_index = Vec::with_capacity(queries.len() * n_slots);
    let mut slot_dt = Vec::with_capacity(queries.len() * n_slots);
    let mut slot_feat = Vec::with_capacity(queries.len() * n_slots * d_edge);
    for &(node, t) in queries {
        let recs = ctx.adjacency.last_n_neighbors(node, t, n_slots);
        counts.push(recs.len());
        for slot in 0..n_slots {
            match recs.get(slot) {
                Some(r) => {
                    slot_index.push(Some(nb_queries.len()));
                    nb_queries.push((r.neighbor, t));
                    slot_dt.push(t - r.timestamp);
                    match ctx.adjacency.edge_features(r.event_id) {
                        Some(f) if f.len() == d_edge => slot_feat.extend_from_slice(f),
                        _ => slot_feat.extend(std::iter::repeat_n(0.0, d_edge)),
                    }
                }
                None => {
                    slot_index.push(None);
                    slot_dt.push(0.0);
                    slot_feat.extend(std::iter::repeat_n(0.0, d_edge));
                }
            }
        }
    }

    let own = embed_layer(tape, ctx, queries, layer - 1).embeddings;
    let nb = embed_layer(tape, ctx, &nb_queries, layer - 1).embeddings;
    let nb = tape.gather_rows(nb, slot_index);
    let feats = tape.constant(Tensor::from_vec(queries.len() * n_slots, d_edge, slot_feat));
    let nb_time = ctx.params.time.encode_on_tape(tape, ctx.store, &slot_dt);
    let kv_in = tape.concat_cols(&[nb, feats, nb_time]);
    let q_time = ctx
        .params
        .time
        .encode_on_tape(tape, ctx.store, &vec![0.0; queries.len()]);
    let q_in = tape.concat_cols(&[own, q_time]);

    let w_q = tape.param(ctx.store, p.w_q);
    let w_k = tape.param(ctx.store, p.w_k);
    let w_v = tape.param(ctx.store, p.w_v);
    let q = tape.matmul(q_in, w_q);
    let k = tape.matmul(kv_in, w_k);
    let v = tape.matmul(kv_in, w_v);

    let heads = ctx.cfg.heads;
    let d_head = ctx.params.d_emb / heads;
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut head_out = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let scores = tape.group_dot(qh, kh, n_slots, scale);
        let w = tape.masked_softmax(scores, counts.clone());
        head_out.push(tape.group_weighted_sum(w, vh));
        weights.push(w);
    }
    let attn = tape.concat_cols(&head_out);

    let merged = tape.concat_cols(&[attn, own]);
    let w1 = tape.param(ctx.store, p.ff_w1);
    let b1 = tape.param(ctx.store, p.ff_b1);
    let w2 = tape.param(ctx.store, p.ff_w2);
    let b2 = tape.param(ctx.store, p.ff_b2);
    let hidden = tape.matmul(merged, w1);
    let hidden = tape.add_row(hidden, b1);
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, w2);
    let out = tape.add_row(out, b2);
    LayerOutput {
        embeddings: out,
        weights,
    }
}

fn check_finite(store: &ParameterStore) -> Result<()> {
    if let Some((_, name, _)) = store.iter().find(|(_, _, t)| !t.is_finite()) {
        return Err(Error::Numeric(format!("parameter `{name}` is not finite")));
    }
    Ok(())
}

/// Attention embedding of a single node from stored memory.
pub fn attention_embed(
    node: NodeId,
    t: f64,
    memory: &MemoryTable,
    adjacency: &TemporalAdjacency,
    store: &ParameterStore,
    params: &EmbeddingParams,
    cfg: &EmbeddingConfig,
) -> Result<EmbeddingVector> {
    check_finite(store)?;
    let ctx = EmbedContext {
        store,
        params,
        cfg,
        adjacency,
        memory: MemorySource::stored(memory),
    };
    let mut tape = Tape::new();
    let out = embed_queries(&mut tape, &ctx, &[(node, t)]);
    Ok(EmbeddingVector {
        node,
        at_time: t,
        values: tape.value(out).row_slice(0).to_vec(),
    })
}

/// Top-layer attention weights of `node` at `t`, one vector per head over the
/// available neighbors (oldest first).
pub fn attention_weights(
    node: NodeId,
    t: f64,
    memory: &MemoryTable,
    adjacency: &TemporalAdjacency,
    store: &ParameterStore,
    params: &EmbeddingParams,
    cfg: &EmbeddingConfig,
) -> Vec<Vec<f64>> {
    let ctx = EmbedContext {
        store,
        params,
        cfg,
        adjacency,
        memory: MemorySource::stored(memory),
    };
    let mut tape = Tape::new();
    let out = embed_layer(&mut tape, &ctx, &[(node, t)], cfg.layers);
    let available = adjacency.last_n_neighbors(node, t, cfg.neighbors).len();
    out.weights
        .iter()
        .map(|w| tape.value(*w).row_slice(0)[..available].to_vec())
        .collect()
}
