use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Event, EventStream};
use crate::{Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub new_node_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.70,
            val_frac: 0.15,
            new_node_frac: 0.10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f < 1.0;
        if !frac_ok(self.train_frac) || !frac_ok(self.val_frac) {
            return Err(Error::Split(
                "train/val fractions must lie in (0, 1)".into(),
            ));
        }
        if self.train_frac + self.val_frac >= 1.0 {
            return Err(Error::Split("train_frac + val_frac must be < 1".into()));
        }
        if !(0.0..=0.5).contains(&self.new_node_frac) {
            return Err(Error::Split("new_node_frac must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

/// Train/validation/test streams plus the nodes withheld from training.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: EventStream,
    pub val: EventStream,
    pub test: EventStream,
    pub new_nodes: BTreeSet<NodeId>,
}

impl Split {
    pub fn is_inductive(&self, event: &Event) -> bool {
        self.new_nodes.contains(&event.source) || self.new_nodes.contains(&event.destination)
    }

    /// Positions of the transductive and inductive events of `stream`.
    pub fn partition(&self, stream: &EventStream) -> (Vec<usize>, Vec<usize>) {
        let (ind, trans): (Vec<usize>, Vec<usize>) =
            (0..stream.len()).partition(|&i| self.is_inductive(&stream.events[i]));
        (trans, ind)
    }
}

// Linear interpolation between order statistics of sorted values.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Splits `stream` at the timestamp quantiles `train_frac` and
/// `train_frac + val_frac`.
///
/// A `new_node_frac` share of the nodes active after the training cut is
/// sampled as "new": their training events are dropped, so they are first seen
/// during validation or test.
pub fn chronological_split(stream: &EventStream, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if stream.is_empty() {
        return Err(Error::Split("empty stream".into()));
    }
    let times: Vec<f64> = stream.events.iter().map(|e| e.timestamp).collect();
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Split("stream is not sorted by timestamp".into()));
    }
    let val_time = interpolated_quantile(&times, spec.train_frac);
    let test_time = interpolated_quantile(&times, spec.train_frac + spec.val_frac);

    let late: BTreeSet<NodeId> = stream
        .events
        .iter()
        .filter(|e| e.timestamp > val_time)
        .flat_map(|e| [e.source, e.destination])
        .collect();
    let late: Vec<NodeId> = late.into_iter().collect();
    let count = (spec.new_node_frac * late.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let new_nodes: BTreeSet<NodeId> = rand::seq::index::sample(&mut rng, late.len(), count)
        .into_iter()
        .map(|i| late[i])
        .collect();

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for e in &stream.events {
        if e.timestamp <= val_time {
            if !new_nodes.contains(&e.source) && !new_nodes.contains(&e.destination) {
                train.push(e.clone());
            }
        } else if e.timestamp <= test_time {
            val.push(e.clone());
        } else {
            test.push(e.clone());
        }
    }
    if train.is_empty() {
        return Err(Error::Split("training split is empty".into()));
    }
    Ok(Split {
        train: stream.with_events(train),
        val: stream.with_events(val),
        test: stream.with_events(test),
        new_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, SyntheticSpec};

    fn uniform(n: usize) -> EventStream {
        let events = (0..n)
            .map(|i| Event {
                event_id: i,
                source: i % 10,
                destination: 10 + (i * 7) % 10,
                timestamp: i as f64,
                features: vec![],
            })
            .collect();
        EventStream {
            events,
            num_sources: 10,
            num_destinations: 10,
            d_edge: 0,
        }
    }

    #[test]
    fn seventy_fifteen_fifteen() {
        let spec = SplitSpec {
            new_node_frac: 0.0,
            ..SplitSpec::default()
        };
        let s = chronological_split(&uniform(100), &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
    }

    #[test]
    fn no_new_nodes_keeps_train_and_has_no_inductive_events() {
        let spec = SplitSpec {
            new_node_frac: 0.0,
            ..SplitSpec::default()
        };
        let stream = uniform(100);
        let s = chronological_split(&stream, &spec).unwrap();
        assert_eq!(s.train.events, stream.events[..70].to_vec());
        assert!(s.new_nodes.is_empty());
        assert!(s.partition(&s.val).1.is_empty());
        assert!(s.partition(&s.test).1.is_empty());
    }

    #[test]
    fn new_nodes_never_in_train() {
        let stream = generate_synthetic(&SyntheticSpec {
            num_events: 2000,
            num_users: 40,
            num_items: 40,
            num_communities: 4,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let spec = SplitSpec {
            new_node_frac: 0.1,
            seed: 3,
            ..SplitSpec::default()
        };
        let s = chronological_split(&stream, &spec).unwrap();
        assert!(!s.new_nodes.is_empty());
        for e in &s.train.events {
            assert!(!s.new_nodes.contains(&e.source));
            assert!(!s.new_nodes.contains(&e.destination));
        }
        let (trans, ind) = s.partition(&s.test);
        assert_eq!(trans.len() + ind.len(), s.test.len());
        assert!(!ind.is_empty());
        let max_train = s.train.last_timestamp().unwrap();
        assert!(max_train <= s.val.first_timestamp().unwrap());
        assert!(s.val.last_timestamp().unwrap() <= s.test.first_timestamp().unwrap());
    }

    #[test]
    fn bad_fractions_rejected() {
        let spec = SplitSpec {
            train_frac: 0.9,
            val_frac: 0.2,
            ..SplitSpec::default()
        };
        assert!(chronological_split(&uniform(10), &spec).is_err());
    }

    #[test]
    fn empty_train_is_error() {
        // One user, one item: withholding either empties the training range.
        let events = (0..10)
            .map(|i| Event {
                event_id: i,
                source: 0,
                destination: 1,
                timestamp: i as f64,
                features: vec![],
            })
            .collect();
        let stream = EventStream {
            events,
            num_sources: 1,
            num_destinations: 1,
            d_edge: 0,
        };
        let spec = SplitSpec {
            new_node_frac: 0.5,
            ..SplitSpec::default()
        };
        assert!(matches!(
            chronological_split(&stream, &spec),
            Err(Error::Split(_))
        ));
    }
}
