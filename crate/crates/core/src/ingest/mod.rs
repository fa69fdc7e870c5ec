//! Interaction streams: JODIE CSV I/O, synthetic community streams and
//! chronological splits with held-out nodes.

mod jodie;
mod split;
mod synthetic;

pub use jodie::{parse_jodie_csv, read_jodie, write_jodie, write_jodie_csv, JODIE_HEADER};
pub use split::{chronological_split, Split, SplitSpec};
pub use synthetic::{dormancy_windows, generate_synthetic, Dormancy, SyntheticSpec};

use std::ops::Range;

use crate::{EventId, NodeId};

/// One time-stamped source -> destination interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub event_id: EventId,
    pub source: NodeId,
    pub destination: NodeId,
    pub timestamp: f64,
    pub features: Vec<f64>,
}

/// A chronologically ordered, bipartite interaction stream.
///
/// Destination ids are offset by `num_sources`, so node ids are globally
/// unique: sources use `0..num_sources` and destinations
/// `num_sources..num_sources + num_destinations`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub num_sources: usize,
    pub num_destinations: usize,
    pub d_edge: usize,
}

impl EventStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_sources + self.num_destinations
    }

    pub fn destination_range(&self) -> Range<NodeId> {
        self.num_sources..self.num_nodes()
    }

    /// A stream over the same id spaces holding `events`.
    pub fn with_events(&self, events: Vec<Event>) -> EventStream {
        EventStream {
            events,
            num_sources: self.num_sources,
            num_destinations: self.num_destinations,
            d_edge: self.d_edge,
        }
    }

    pub fn first_timestamp(&self) -> Option<f64> {
        self.events.first().map(|e| e.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.events.last().map(|e| e.timestamp)
    }

    /// Checks the stream invariants: increasing event ids, non-decreasing
    /// timestamps, id ranges and a shared feature dimension.
    pub fn validate(&self) -> crate::Result<()> {
        let mut prev: Option<&Event> = None;
        for (pos, e) in self.events.iter().enumerate() {
            let fail = |message: String| crate::Error::Validation {
                line: pos as u64,
                message,
            };
            if e.source >= self.num_sources {
                return Err(fail(format!("source {} out of range", e.source)));
            }
            if !self.destination_range().contains(&e.destination) {
                return Err(fail(format!("destination {} out of range", e.destination)));
            }
            if e.features.len() != self.d_edge {
                return Err(fail(format!(
                    "feature dimension {} != {}",
                    e.features.len(),
                    self.d_edge
                )));
            }
            if !e.timestamp.is_finite() || e.timestamp < 0.0 {
                return Err(fail(format!("invalid timestamp {}", e.timestamp)));
            }
            if let Some(p) = prev {
                if e.event_id <= p.event_id {
                    return Err(fail("event ids not increasing".into()));
                }
                if e.timestamp < p.timestamp {
                    return Err(fail("timestamps decreasing".into()));
                }
            }
            prev = Some(e);
        }
        Ok(())
    }
}

/// Consecutive chronological chunks of at most `batch_size` events.
///
/// Panics if `batch_size` is zero.
pub fn batch_iter(stream: &EventStream, batch_size: usize) -> std::slice::Chunks<'_, Event> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    stream.events.chunks(batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(n: usize) -> EventStream {
        let events = (0..n)
            .map(|i| Event {
                event_id: i,
                source: i % 3,
                destination: 3 + i % 2,
                timestamp: i as f64,
                features: vec![],
            })
            .collect();
        EventStream {
            events,
            num_sources: 3,
            num_destinations: 2,
            d_edge: 0,
        }
    }

    #[test]
    fn batches_of_four() {
        let s = stream(10);
        let sizes: Vec<usize> = batch_iter(&s, 4).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn oversized_batch_is_single() {
        let s = stream(10);
        assert_eq!(batch_iter(&s, 10).count(), 1);
        assert_eq!(batch_iter(&s, 50).count(), 1);
    }

    #[test]
    fn batches_concatenate_to_stream() {
        let s = stream(23);
        for bs in 1..30 {
            let joined: Vec<Event> = batch_iter(&s, bs).flatten().cloned().collect();
            assert_eq!(joined, s.events);
        }
    }

    #[test]
    fn validate_rejects_out_of_range_destination() {
        let mut s = stream(3);
        s.events[1].destination = 1;
        assert!(s.validate().is_err());
        assert!(stream(3).validate().is_ok());
    }
}
