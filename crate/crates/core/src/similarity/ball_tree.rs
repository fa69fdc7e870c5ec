use super::{euclidean, CandidateSet, KnnIndex, Neighbor, TopK};
use crate::NodeId;

// Lower bounds within this relative slack of the current k-th distance are
// still explored, so rounding in centroid distances cannot drop a tie.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum BallKind {
    /// Positions `start..end` of the tree's point order.
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub centroid: Vec<f64>,
    pub radius: f64,
    pub kind: BallKind,
}

/// Binary ball tree over a candidate set.
///
/// Each internal ball splits its points between two poles: the point farthest
/// from the centroid, and the point farthest from that one. Points go to the
/// nearer pole, ties to the first. Splitting stops once a ball holds at most
/// `leaf_capacity` points.
#[derive(Debug, Clone, PartialEq)]
pub struct BallTree {
    candidates: CandidateSet,
    order: Vec<usize>,
    balls: Vec<Ball>,
    leaf_capacity: usize,
}

impl BallTree {
    /// Panics if `candidates` is empty or `leaf_capacity` is zero.
    pub fn build(candidates: CandidateSet, leaf_capacity: usize) -> Self {
        assert!(leaf_capacity >= 1, "leaf_capacity must be at least 1");
        let mut tree = BallTree {
            order: (0..candidates.len()).collect(),
            candidates,
            balls: Vec::new(),
            leaf_capacity,
        };
        if !tree.candidates.is_empty() {
            tree.build_ball(0, tree.order.len());
        }
        tree
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    pub fn root(&self) -> Option<&Ball> {
        self.balls.first()
    }

    /// Candidate indices held under ball `b`.
    pub fn members(&self, b: usize) -> Vec<usize> {
        match self.balls[b].kind {
            BallKind::Leaf { start, end } => self.order[start..end].to_vec(),
            BallKind::Split { left, right } => {
                let mut m = self.members(left);
                m.extend(self.members(right));
                m
            }
        }
    }

    /// Node ids held under ball `b`.
    pub fn member_ids(&self, b: usize) -> Vec<NodeId> {
        self.members(b)
            .into_iter()
            .map(|i| self.candidates.id(i))
            .collect()
    }

    /// Number of balls on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(t: &BallTree, b: usize) -> usize {
            match t.balls[b].kind {
                BallKind::Leaf { .. } => 1,
                BallKind::Split { left, right } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        if self.balls.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }

    fn point(&self, pos: usize) -> &[f64] {
        self.candidates.point(self.order[pos])
    }

    fn build_ball(&mut self, start: usize, end: usize) -> usize {
        let dim = self.candidates.dim();
        let count = (end - start) as f64;
        let mut centroid = vec![0.0; dim];
        for pos in start..end {
            for (c, v) in centroid.iter_mut().zip(self.point(pos)) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= count;
        }
        let mut radius = 0.0f64;
        let mut pole_a = start;
        for pos in start..end {
            let d = euclidean(&centroid, self.point(pos));
            if d > radius {
                radius = d;
                pole_a = pos;
            }
        }

        let id = self.balls.len();
        self.balls.push(Ball {
            centroid,
            radius,
            kind: BallKind::Leaf { start, end },
        });
        if end - start <= self.leaf_capacity {
            return id;
        }

        let a = self.point(pole_a).to_vec();
        let mut pole_b = start;
        let mut far = -1.0;
        for pos in start..end {
            let d = euclidean(&a, self.point(pos));
            if d > far {
                far = d;
                pole_b = pos;
            }
        }
        let b = self.point(pole_b).to_vec();

        // Stable partition: points nearer A first.
        let (near_a, near_b): (Vec<usize>, Vec<usize>) =
            self.order[start..end].iter().partition(|&&i| {
                let p = self.candidates.point(i);
                euclidean(&a, p) <= euclidean(&b, p)
            });
        let mid = if near_a.is_empty() || near_b.is_empty() {
            // All points coincide; fall back to halving.
            start + (end - start) / 2
        } else {
            let mid = start + near_a.len();
            self.order[start..mid].copy_from_slice(&near_a);
            self.order[mid..end].copy_from_slice(&near_b);
            mid
        };

        let left = self.build_ball(start, mid);
        let right = self.build_ball(mid, end);
        self.balls[id].kind = BallKind::Split { left, right };
        id
    }

    /// Like [`KnnIndex::knn_query`], also returning every ball skipped by the
    /// bound `dist(query, centroid) - radius > k-th best distance`.
    pub fn knn_query_traced(
        &self,
        query: &[f64],
        k: usize,
        exclude: &[NodeId],
    ) -> (Vec<Neighbor>, Vec<usize>) {
        assert_eq!(
            query.len(),
            self.candidates.dim(),
            "query dimension mismatch"
        );
        let mut top = TopK::new(k);
        let mut pruned = Vec::new();
        if !self.balls.is_empty() && k > 0 {
            let d = euclidean(query, &self.balls[0].centroid);
            self.search(0, d, query, exclude, &mut top, &mut pruned);
        }
        (top.into_vec(), pruned)
    }

    fn search(
        &self,
        b: usize,
        centroid_dist: f64,
        query: &[f64],
        exclude: &[NodeId],
        top: &mut TopK,
        pruned: &mut Vec<usize>,
    ) {
        let ball = &self.balls[b];
        if top.is_full() {
            let kth = top.worst().expect("full");
            if centroid_dist - ball.radius > kth + PRUNE_SLACK * (1.0 + kth) {
                pruned.push(b);
                return;
            }
        }
        match ball.kind {
            BallKind::Leaf { start, end } => {
                for pos in start..end {
                    let i = self.order[pos];
                    let id = self.candidates.id(i);
                    if exclude.contains(&id) {
                        continue;
                    }
                    top.offer(Neighbor {
                        id,
                        distance: euclidean(query, self.candidates.point(i)),
                    });
                }
            }
            BallKind::Split { left, right } => {
                let dl = euclidean(query, &self.balls[left].centroid);
                let dr = euclidean(query, &self.balls[right].centroid);
                if dl <= dr {
                    self.search(left, dl, query, exclude, top, pruned);
                    self.search(right, dr, query, exclude, top, pruned);
                } else {
                    self.search(right, dr, query, exclude, top, pruned);
                    self.search(left, dl, query, exclude, top, pruned);
                }
            }
        }
    }
}

impl KnnIndex for BallTree {
    fn knn_query(&self, query: &[f64], k: usize, exclude: &[NodeId]) -> Vec<Neighbor> {
        self.knn_query_traced(query, k, exclude).0
    }
}
