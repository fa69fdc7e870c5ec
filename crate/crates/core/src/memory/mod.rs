//! Per-node memory: messages from events, most-recent aggregation and the GRU
//! updater.

mod gru;

pub use gru::{gru_cell, GruParams};

use std::collections::BTreeMap;

use crate::embedding::TimeEncoder;
use crate::ingest::Event;
use crate::learn::{ParameterStore, Tape, Tensor, Var};
use crate::{Error, NodeId, Result};

/// `last_update` of a node that has never been touched.
pub const NEVER: f64 = f64::NEG_INFINITY;

/// Memory vectors and last-update times for every node.
///
/// A node with `last_update == NEVER` has an all-zero state.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTable {
    dim: usize,
    states: Vec<f64>,
    last_update: Vec<f64>,
}

impl MemoryTable {
    pub fn new(num_nodes: usize, dim: usize) -> Self {
        MemoryTable {
            dim,
            states: vec![0.0; num_nodes * dim],
            last_update: vec![NEVER; num_nodes],
        }
    }

    /// Restores a table, checking the zero-state invariant.
    pub fn from_parts(dim: usize, states: Vec<f64>, last_update: Vec<f64>) -> Result<Self> {
        if states.len() != last_update.len() * dim {
            return Err(Error::Config("memory state/time length mismatch".into()));
        }
        let table = MemoryTable {
            dim,
            states,
            last_update,
        };
        for node in 0..table.num_nodes() {
            if !table.is_initialized(node) && table.state(node).iter().any(|v| *v != 0.0) {
                return Err(Error::Config(format!(
                    "uninitialized node {node} has non-zero state"
                )));
            }
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.last_update.len()
    }

    pub fn state(&self, node: NodeId) -> &[f64] {
        &self.states[node * self.dim..(node + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update[node]
    }

    pub fn last_updates(&self) -> &[f64] {
        &self.last_update
    }

    pub fn is_initialized(&self, node: NodeId) -> bool {
        self.last_update[node] > NEVER
    }

    pub fn initialized_nodes(&self) -> Vec<NodeId> {
        (0..self.num_nodes())
            .filter(|&n| self.is_initialized(n))
            .collect()
    }

    /// Rows of `nodes` stacked into a matrix.
    pub fn gather(&self, nodes: &[NodeId]) -> Tensor {
        Tensor::from_rows(
            &nodes.iter().map(|&n| self.state(n)).collect::<Vec<_>>(),
            self.dim,
        )
    }

    fn write(&mut self, node: NodeId, state: &[f64], t: f64) -> Result<()> {
        if t < self.last_update[node] {
            return Err(Error::Ordering(format!(
                "update of node {node} at t={t} precedes its last update {}",
                self.last_update[node]
            )));
        }
        self.states[node * self.dim..(node + 1) * self.dim].copy_from_slice(state);
        self.last_update[node] = t;
        Ok(())
    }

    /// Time since the last update, zero for never-updated nodes.
    pub fn elapsed(&self, node: NodeId, t: f64) -> f64 {
        if self.is_initialized(node) {
            t - self.last_update[node]
        } else {
            0.0
        }
    }
}

/// `concat(own state, counterpart state, enc(dt), edge features)` addressed to
/// `target`, stamped with the event time and its position in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMessage {
    pub target: NodeId,
    pub payload: Vec<f64>,
    pub timestamp: f64,
    pub position: usize,
}

/// A memory write kept so the step can be replayed on a tape: the state before
/// the write, the message payload and the write time.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingUpdate {
    pub node: NodeId,
    pub prev_state: Vec<f64>,
    pub payload: Vec<f64>,
    pub timestamp: f64,
}

/// Messages to the source and the destination of `event`.
pub fn compute_messages(
    mem: &MemoryTable,
    event: &Event,
    position: usize,
    store: &ParameterStore,
    time_enc: &TimeEncoder,
    d_edge: usize,
) -> Result<(RawMessage, RawMessage)> {
    if event.features.len() != d_edge {
        return Err(Error::Config(format!(
            "event {} has {} features, expected {d_edge}",
            event.event_id,
            event.features.len()
        )));
    }
    if store.get(time_enc.frequencies).cols() != time_enc.dim {
        return Err(Error::Config("time encoder dimension mismatch".into()));
    }
    let message = |me: NodeId, other: NodeId| -> Result<RawMessage> {
        if event.timestamp < mem.last_update(me) {
            return Err(Error::Ordering(format!(
                "event {} at t={} precedes last update of node {me}",
                event.event_id, event.timestamp
            )));
        }
        let dt = mem.elapsed(me, event.timestamp);
        let mut payload = Vec::with_capacity(2 * mem.dim() + time_enc.dim + d_edge);
        payload.extend_from_slice(mem.state(me));
        payload.extend_from_slice(mem.state(other));
        payload.extend(time_enc.encode(store, dt));
        payload.extend_from_slice(&event.features);
        Ok(RawMessage {
            target: me,
            payload,
            timestamp: event.timestamp,
            position,
        })
    };
    Ok((
        message(event.source, event.destination)?,
        message(event.destination, event.source)?,
    ))
}

/// Keeps the latest message per target (ties go to the later batch position),
/// ordered by target id.
pub fn aggregate_messages(messages: Vec<RawMessage>) -> Vec<RawMessage> {
    let mut latest: BTreeMap<NodeId, RawMessage> = BTreeMap::new();
    for m in messages {
        match latest.get(&m.target) {
            Some(cur) if (cur.timestamp, cur.position) >= (m.timestamp, m.position) => {}
            _ => {
                latest.insert(m.target, m);
            }
        }
    }
    latest.into_values().collect()
}

/// Replays `updates` through the GRU on `tape`, one row per update.
pub fn replay_updates(
    tape: &mut Tape,
    store: &ParameterStore,
    gru: &GruParams,
    updates: &[PendingUpdate],
) -> Var {
    let x = Tensor::from_rows(
        &updates
            .iter()
            .map(|u| u.payload.as_slice())
            .collect::<Vec<_>>(),
        gru.input_dim,
    );
    let h = Tensor::from_rows(
        &updates
            .iter()
            .map(|u| u.prev_state.as_slice())
            .collect::<Vec<_>>(),
        gru.hidden,
    );
    let x = tape.constant(x);
    let h = tape.constant(h);
    gru_cell(tape, store, gru, x, h)
}

/// Applies one aggregated message per node and returns the replayable record
/// of each write.
pub fn apply_messages(
    mem: &mut MemoryTable,
    messages: &[RawMessage],
    store: &ParameterStore,
    gru: &GruParams,
) -> Result<Vec<PendingUpdate>> {
    if messages.is_empty() {
        return Ok(Vec::new());
    }
    let mut updates = Vec::with_capacity(messages.len());
    for m in messages {
        if m.payload.len() != gru.input_dim {
            return Err(Error::Config(format!(
                "payload of {} values, GRU expects {}",
                m.payload.len(),
                gru.input_dim
            )));
        }
        if m.payload.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite payload for node {}",
                m.target
            )));
        }
        if m.timestamp < mem.last_update(m.target) {
            return Err(Error::Ordering(format!(
                "message at t={} precedes last update of node {}",
                m.timestamp, m.target
            )));
        }
        updates.push(PendingUpdate {
            node: m.target,
            prev_state: mem.state(m.target).to_vec(),
            payload: m.payload.clone(),
            timestamp: m.timestamp,
        });
    }
    let mut tape = Tape::new();
    let out = replay_updates(&mut tape, store, gru, &updates);
    let out = tape.value(out);
    for (r, u) in updates.iter().enumerate() {
        mem.write(u.node, out.row_slice(r), u.timestamp)?;
    }
    Ok(updates)
}

/// Single-node form of [`apply_messages`].
pub fn update_memory(
    mem: &mut MemoryTable,
    msg: &RawMessage,
    store: &ParameterStore,
    gru: &GruParams,
) -> Result<()> {
    apply_messages(mem, std::slice::from_ref(msg), store, gru).map(|_| ())
}
