//! Exact k-nearest-neighbor search over initialized memory vectors.

mod ball_tree;

pub use ball_tree::{Ball, BallKind, BallTree};

use std::cmp::Ordering;

use crate::memory::MemoryTable;
use crate::{Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    BallTree,
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    pub k: usize,
    pub backend: Backend,
    pub leaf_capacity: usize,
    /// Rebuild the index every this many batches.
    pub rebuild_every: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            k: 1,
            backend: Backend::BallTree,
            leaf_capacity: 16,
            rebuild_every: 1,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.leaf_capacity == 0 || self.rebuild_every == 0 {
            return Err(Error::Config(
                "k, leaf_capacity and rebuild_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Node ids with copies of their vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    ids: Vec<NodeId>,
    dim: usize,
    points: Vec<f64>,
}

impl CandidateSet {
    pub fn new(dim: usize) -> Self {
        CandidateSet {
            ids: Vec::new(),
            dim,
            points: Vec::new(),
        }
    }

    pub fn from_parts(ids: Vec<NodeId>, dim: usize, points: Vec<f64>) -> Result<Self> {
        if points.len() != ids.len() * dim {
            return Err(Error::Config("candidate points do not match ids".into()));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate candidate ids".into()));
        }
        Ok(CandidateSet { ids, dim, points })
    }

    pub fn push(&mut self, id: NodeId, point: &[f64]) {
        assert_eq!(point.len(), self.dim, "candidate dimension mismatch");
        self.ids.push(id);
        self.points.extend_from_slice(point);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn id(&self, i: usize) -> NodeId {
        self.ids[i]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// Nodes with history, paired with their current memory vectors.
pub fn collect_candidates(mem: &MemoryTable) -> CandidateSet {
    let mut set = CandidateSet::new(mem.dim());
    for node in mem.initialized_nodes() {
        set.push(node, mem.state(node));
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: NodeId,
    pub distance: f64,
}

impl Neighbor {
    fn order(&self, other: &Neighbor) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The `k` best neighbors seen so far, ascending by (distance, id).
#[derive(Debug)]
pub(crate) struct TopK {
    k: usize,
    items: Vec<Neighbor>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        TopK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    pub(crate) fn is_full(&self) -> bool {
        self.items.len() >= self.k
    }

    pub(crate) fn worst(&self) -> Option<f64> {
        self.items.last().map(|n| n.distance)
    }

    pub(crate) fn offer(&mut self, cand: Neighbor) {
        if self.k == 0 {
            return;
        }
        if self.is_full() && cand.order(self.items.last().unwrap()) != Ordering::Less {
            return;
        }
        let pos = self
            .items
            .partition_point(|n| n.order(&cand) == Ordering::Less);
        self.items.insert(pos, cand);
        self.items.truncate(self.k);
    }

    pub(crate) fn into_vec(self) -> Vec<Neighbor> {
        self.items
    }
}

pub trait KnnIndex {
    /// Up to `k` candidates not in `exclude`, nearest first, distance ties
    /// broken by ascending id.
    fn knn_query(&self, query: &[f64], k: usize, exclude: &[NodeId]) -> Vec<Neighbor>;
}

/// Brute force: scan every candidate.
impl KnnIndex for CandidateSet {
    fn knn_query(&self, query: &[f64], k: usize, exclude: &[NodeId]) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let mut top = TopK::new(k);
        for i in 0..self.len() {
            let id = self.ids[i];
            if exclude.contains(&id) {
                continue;
            }
            top.offer(Neighbor {
                id,
                distance: euclidean(query, self.point(i)),
            });
        }
        top.into_vec()
    }
}

/// Index over one candidate snapshot, either backend.
#[derive(Debug, Clone, PartialEq)]
pub enum SimilarityIndex {
    BallTree(BallTree),
    BruteForce(CandidateSet),
}

impl SimilarityIndex {
    pub fn build(candidates: CandidateSet, cfg: &SimilarityConfig) -> Self {
        match cfg.backend {
            Backend::BallTree => {
                SimilarityIndex::BallTree(BallTree::build(candidates, cfg.leaf_capacity))
            }
            Backend::BruteForce => SimilarityIndex::BruteForce(candidates),
        }
    }

    pub fn candidates(&self) -> &CandidateSet {
        match self {
            SimilarityIndex::BallTree(t) => t.candidates(),
            SimilarityIndex::BruteForce(c) => c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.candidates().is_empty()
    }
}

impl KnnIndex for SimilarityIndex {
    fn knn_query(&self, query: &[f64], k: usize, exclude: &[NodeId]) -> Vec<Neighbor> {
        match self {
            SimilarityIndex::BallTree(t) => t.knn_query(query, k, exclude),
            SimilarityIndex::BruteForce(c) => c.knn_query(query, k, exclude),
        }
    }
}
