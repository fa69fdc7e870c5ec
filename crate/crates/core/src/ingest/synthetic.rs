use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use super::{Event, EventStream};
use crate::{Error, NodeId, Result};

/// A closed interval `[start, end]` during which a user emits no events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dormancy {
    pub user: NodeId,
    pub start: f64,
    pub end: f64,
}

impl Dormancy {
    fn covers(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Parameters for a community-structured bipartite stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_communities: usize,
    pub num_events: usize,
    pub intra_prob: f64,
    pub noise_std: f64,
    pub dormancy: Vec<Dormancy>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_users: 200,
            num_items: 200,
            num_communities: 8,
            num_events: 20_000,
            intra_prob: 0.9,
            noise_std: 0.1,
            dormancy: Vec::new(),
            seed: 0,
        }
    }
}

/// Generates a synthetic interaction stream.
///
/// Users and items are split into equal contiguous communities. Inter-event
/// gaps are unit-rate exponential. Each event picks a user uniformly among
/// those not dormant at the event time, then an item from the user's community
/// with probability `intra_prob`, otherwise uniformly from the other
/// communities. Edge features are the one-hot item community plus Gaussian
/// noise, so `d_edge == num_communities`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EventStream> {
    let c = spec.num_communities;
    if c == 0 || !spec.num_users.is_multiple_of(c) || !spec.num_items.is_multiple_of(c) {
        return Err(Error::Generation(format!(
            "{c} communities must evenly divide {} users and {} items",
            spec.num_users, spec.num_items
        )));
    }
    if spec.num_users == 0 || spec.num_items == 0 {
        return Err(Error::Generation(
            "need at least one user and one item".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.intra_prob) {
        return Err(Error::Generation(format!(
            "intra_prob {} not in [0, 1]",
            spec.intra_prob
        )));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::Generation(format!(
            "noise_std {} invalid",
            spec.noise_std
        )));
    }
    for d in &spec.dormancy {
        if d.user >= spec.num_users || d.start > d.end || d.start.is_nan() || d.end.is_nan() {
            return Err(Error::Generation(format!("invalid dormancy window {d:?}")));
        }
    }
    if let Some(t) = all_dormant_instant(spec.num_users, &spec.dormancy) {
        return Err(Error::Generation(format!("every user is dormant at t={t}")));
    }

    let users_per = spec.num_users / c;
    let items_per = spec.num_items / c;
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut events = Vec::with_capacity(spec.num_events);
    let mut t = 0.0_f64;
    for event_id in 0..spec.num_events {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap;
        let user = loop {
            let u = rng.random_range(0..spec.num_users);
            if !spec.dormancy.iter().any(|d| d.user == u && d.covers(t)) {
                break u;
            }
        };
        let home = user / users_per;
        let draw: f64 = rng.random();
        let community = if c == 1 || draw < spec.intra_prob {
            home
        } else {
            let other = rng.random_range(0..c - 1);
            if other >= home {
                other + 1
            } else {
                other
            }
        };
        let item = community * items_per + rng.random_range(0..items_per);
        let features = (0..c)
            .map(|j| {
                let base = if j == community { 1.0 } else { 0.0 };
                base + noise.sample(&mut rng)
            })
            .collect();
        events.push(Event {
            event_id,
            source: user,
            destination: spec.num_users + item,
            timestamp: t,
            features,
        });
    }

    Ok(EventStream {
        events,
        num_sources: spec.num_users,
        num_destinations: spec.num_items,
        d_edge: c,
    })
}

// The set of all-dormant instants is an intersection of unions of closed
// intervals; if non-empty, its leftmost point is some window's start.
fn all_dormant_instant(num_users: usize, windows: &[Dormancy]) -> Option<f64> {
    windows
        .iter()
        .map(|w| w.start)
        .find(|&t| (0..num_users).all(|u| windows.iter().any(|w| w.user == u && w.covers(t))))
}

/// Dormancy windows for the first `ceil(frac * num_users)` users of a random
/// permutation, each of length `length` placed uniformly in `[0, horizon - length]`.
pub fn dormancy_windows(
    num_users: usize,
    frac: f64,
    horizon: f64,
    length: f64,
    seed: u64,
) -> Vec<Dormancy> {
    let count = ((frac * num_users as f64).ceil() as usize).min(num_users);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = rand::seq::index::sample(&mut rng, num_users, count).into_vec();
    users.sort_unstable();
    let span = (horizon - length).max(0.0);
    users
        .into_iter()
        .map(|user| {
            let start = rng.random::<f64>() * span;
            Dormancy {
                user,
                start,
                end: start + length,
            }
        })
        .collect()
}
