//! Exact nearest-neighbour queries over a point cloud snapshot.
//!
//! A balanced kd-tree with small leaf buckets. All queries are exact; among
//! points at equal distance the lower point index wins, so results are fully
//! deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Read-only kd-tree over a copy of a cloud's positions.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Builds an index over `cloud`. Fails on an empty cloud.
pub fn build_index(cloud: &PointCloud) -> Result<NeighborIndex> {
    NeighborIndex::from_points(cloud.points())
}

impl NeighborIndex {
    pub fn from_points(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many points".into()));
        }
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build(&points, &mut order, 0, points.len(), &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Vec3 {
        let p = self.points[index];
        Vec3::new(p[0], p[1], p[2])
    }

    /// The `k` nearest points as `(index, distance)`, ascending by distance
    /// then index.
    pub fn knn(&self, query: &Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if k > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds cloud size {}",
                self.points.len()
            )));
        }
        let q = [query.x, query.y, query.z];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, &q, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        Ok(found
            .into_iter()
            .map(|c| (c.index as usize, c.dist2.sqrt()))
            .collect())
    }

    /// Nearest point as `(index, distance)`.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let q = [query.x, query.y, query.z];
        let mut best = Candidate {
            dist2: f64::INFINITY,
            index: u32::MAX,
        };
        self.nearest_rec(0, &q, &mut best);
        (best.index as usize, best.dist2.sqrt())
    }

    /// Nearest point within distance `r` (inclusive), if any. Same answer as
    /// [`NeighborIndex::nearest`] when that lies within `r`, but far queries
    /// are pruned early.
    pub fn nearest_within(&self, query: &Vec3, r: f64) -> Option<(usize, f64)> {
        let q = [query.x, query.y, query.z];
        // Ties at exactly r must stay reachable, hence the sentinel index.
        let mut best = Candidate {
            dist2: r * r,
            index: u32::MAX,
        };
        self.nearest_rec(0, &q, &mut best);
        (best.index != u32::MAX).then(|| (best.index as usize, best.dist2.sqrt()))
    }

    /// All points within distance `r` (inclusive), ascending by distance then
    /// index.
    pub fn radius_search(&self, query: &Vec3, r: f64) -> Result<Vec<(usize, f64)>> {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive, got {r}"
            )));
        }
        let q = [query.x, query.y, query.z];
        let mut found = Vec::new();
        self.radius_rec(0, &q, r * r, &mut found);
        found.sort_unstable();
        Ok(found
            .into_iter()
            .map(|c| (c.index as usize, c.dist2.sqrt()))
            .collect())
    }

    fn knn_rec(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start as usize..end as usize] {
                    let c = Candidate {
                        dist2: dist2(&self.points[idx as usize], q),
                        index: idx,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near as usize, q, k, heap);
                // `<=` keeps equidistant candidates with lower indices reachable.
                if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.dist2)
                {
                    self.knn_rec(far as usize, q, k, heap);
                }
            }
        }
    }

    fn nearest_rec(&self, node: usize, q: &[f64; 3], best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start as usize..end as usize] {
                    let c = Candidate {
                        dist2: dist2(&self.points[idx as usize], q),
                        index: idx,
                    };
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_rec(near as usize, q, best);
                if diff * diff <= best.dist2 {
                    self.nearest_rec(far as usize, q, best);
                }
            }
        }
    }

    fn radius_rec(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start as usize..end as usize] {
                    let d2 = dist2(&self.points[idx as usize], q);
                    if d2 <= r2 {
                        out.push(Candidate { dist2: d2, index: idx });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.radius_rec(near as usize, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_rec(far as usize, q, r2, out);
                }
            }
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    let slice = &mut order[start..end];
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] - lo[axis] <= 0.0 {
        // All points coincide.
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let value = points[slice[mid] as usize][axis];
    // Left subtree holds coordinates <= value, right subtree >= value.
    nodes.push(Node::Split {
        axis: axis as u8,
        value,
        left: 0,
        right: 0,
    });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    if let Node::Split {
        left: l, right: r, ..
    } = &mut nodes[id as usize]
    {
        *l = left;
        *r = right;
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert_eq!(build_index(&cloud(vec![])).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn single_point_finds_itself() {
        let idx = build_index(&cloud(vec![Vec3::new(0.3, 0.2, 0.1)])).unwrap();
        assert_eq!(idx.knn(&Vec3::new(0.3, 0.2, 0.1), 1).unwrap(), vec![(0, 0.0)]);
    }

    #[test]
    fn collinear_points() {
        let pts = (0..3).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let idx = build_index(&cloud(pts)).unwrap();
        let res = idx.knn(&Vec3::new(0.9, 0.0, 0.0), 2).unwrap();
        assert_eq!(res[0].0, 1);
        assert_eq!(res[1].0, 0);
        assert!(idx.knn(&Vec3::zeros(), 4).is_err());
    }

    #[test]
    fn cube_center_query() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        let idx = build_index(&cloud(pts)).unwrap();
        let res = idx.knn(&Vec3::repeat(0.5), 1).unwrap();
        // Every corner is equidistant; tie-break selects index 0.
        assert_eq!(res[0].0, 0);
        assert!((res[0].1 - 3f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn equidistant_ties_prefer_lower_index() {
        let pts = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
        ];
        let idx = build_index(&cloud(pts)).unwrap();
        let res = idx.knn(&Vec3::zeros(), 4).unwrap();
        assert_eq!(res.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(idx.nearest(&Vec3::zeros()).0, 0);
    }

    #[test]
    fn radius_on_unit_grid() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let idx = build_index(&cloud(pts)).unwrap();
        let res = idx.radius_search(&Vec3::new(2.0, 2.0, 2.0), 1.05).unwrap();
        assert_eq!(res.len(), 7);
        assert_eq!(res[0].1, 0.0);
        assert!(res[1..].iter().all(|r| (r.1 - 1.0).abs() < 1e-15));
        let only_self = idx.radius_search(&Vec3::new(2.0, 2.0, 2.0), 0.5).unwrap();
        assert_eq!(only_self.len(), 1);
    }

    #[test]
    fn matches_linear_scan_on_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = build_index(&cloud(pts.clone())).unwrap();
        for _ in 0..50 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            let mut brute: Vec<(usize, f64)> =
                pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let got = idx.knn(&q, 10).unwrap();
            for (g, b) in got.iter().zip(&brute[..10]) {
                assert_eq!(g.0, b.0);
                assert!((g.1 - b.1).abs() < 1e-12);
            }
        }
    }
}
