//! Per-node interaction history answering "last N partners before t" queries.

use std::collections::HashMap;

use crate::ingest::Event;
use crate::{Error, EventId, NodeId, Result};

/// Default number of temporal neighbors attended over.
pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborRecord {
    pub neighbor: NodeId,
    pub event_id: EventId,
    pub timestamp: f64,
}

impl NeighborRecord {
    fn key(&self) -> (f64, EventId) {
        (self.timestamp, self.event_id)
    }
}

/// Undirected temporal adjacency: every interaction is visible from both
/// endpoints, each list sorted by `(timestamp, event_id)`. Edge features are
/// kept alongside, keyed by event id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalAdjacency {
    lists: Vec<Vec<NeighborRecord>>,
    features: HashMap<EventId, Vec<f64>>,
}

impl TemporalAdjacency {
    pub fn new(num_nodes: usize) -> Self {
        TemporalAdjacency {
            lists: vec![Vec::new(); num_nodes],
            features: HashMap::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.lists.len()
    }

    pub fn insert_interaction(&mut self, event: &Event) -> Result<()> {
        let src = NeighborRecord {
            neighbor: event.destination,
            event_id: event.event_id,
            timestamp: event.timestamp,
        };
        let dst = NeighborRecord {
            neighbor: event.source,
            ..src
        };
        for node in [event.source, event.destination] {
            if let Some(last) = self.lists.get(node).and_then(|l| l.last()) {
                if src.key() < last.key() {
                    return Err(Error::Ordering(format!(
                        "event {} at t={} precedes event {} at t={} for node {node}",
                        event.event_id, event.timestamp, last.event_id, last.timestamp
                    )));
                }
            }
        }
        let needed = event.source.max(event.destination) + 1;
        if self.lists.len() < needed {
            self.lists.resize(needed, Vec::new());
        }
        self.lists[event.source].push(src);
        self.lists[event.destination].push(dst);
        self.features.insert(event.event_id, event.features.clone());
        Ok(())
    }

    /// The `n` most recent records of `node` strictly before `t`, oldest first.
    pub fn last_n_neighbors(&self, node: NodeId, t: f64, n: usize) -> &[NeighborRecord] {
        let Some(list) = self.lists.get(node) else {
            return &[];
        };
        let end = list.partition_point(|r| r.timestamp < t);
        &list[end.saturating_sub(n)..end]
    }

    /// Full history of `node`.
    pub fn history(&self, node: NodeId) -> &[NeighborRecord] {
        self.lists.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn edge_features(&self, event_id: EventId) -> Option<&[f64]> {
        self.features.get(&event_id).map(Vec::as_slice)
    }

    /// Stored `(event_id, features)` pairs in ascending event order.
    pub fn features_sorted(&self) -> Vec<(EventId, &[f64])> {
        let mut out: Vec<(EventId, &[f64])> = self
            .features
            .iter()
            .map(|(&k, v)| (k, v.as_slice()))
            .collect();
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    /// Rebuilds an adjacency from raw lists and features, checking ordering.
    pub fn from_parts(
        lists: Vec<Vec<NeighborRecord>>,
        features: HashMap<EventId, Vec<f64>>,
    ) -> Result<Self> {
        for (node, list) in lists.iter().enumerate() {
            if list.windows(2).any(|w| w[1].key() < w[0].key()) {
                return Err(Error::Ordering(format!(
                    "history of node {node} is unsorted"
                )));
            }
        }
        Ok(TemporalAdjacency { lists, features })
    }
}
