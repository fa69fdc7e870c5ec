use std::ops::Range;

use rand::Rng;

use crate::ingest::Event;
use crate::NodeId;

/// One uniformly drawn destination per event, redrawn while it equals the
/// event's true destination.
///
/// Panics if the destination range holds fewer than two nodes.
pub fn sample_negatives<R: Rng>(
    batch: &[Event],
    destinations: Range<NodeId>,
    per_event: usize,
    rng: &mut R,
) -> Vec<NodeId> {
    assert!(destinations.len() >= 2, "need at least two destinations");
    let mut out = Vec::with_capacity(batch.len() * per_event);
    for e in batch {
        for _ in 0..per_event {
            let neg = loop {
                let d = rng.random_range(destinations.clone());
                if d != e.destination {
                    break d;
                }
            };
            out.push(neg);
        }
    }
    out
}
