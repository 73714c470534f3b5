//! Exact nearest-neighbor index over a fixed point set.
//!
//! A plain kd-tree with median splits. Queries are exact (verified against
//! brute force in the tests); the index is read-only after construction and
//! safe to query concurrently.

use super::Vec3;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

impl NeighborIndex {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("neighbor index over empty set".into()));
        }
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        index.root = index.build_range(0, points.len());
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        // Split on the widest axis at the median point.
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = hi - lo;
        let axis = if extent[0] >= extent[1] && extent[0] >= extent[2] {
            0
        } else if extent[1] >= extent[2] {
            1
        } else {
            2
        };
        if extent[axis] <= 0.0 {
            // All points coincide on every axis; no useful split.
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let threshold = self.points[self.order[mid] as usize][axis];
        let node_slot = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end }); // placeholder
        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        self.nodes[node_slot] = Node::Split {
            axis,
            threshold,
            left,
            right,
        };
        node_slot
    }

    /// Index and distance of the exact nearest neighbor of `query`.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        (best.0, best.1.sqrt())
    }

    fn nearest_rec(&self, node: usize, query: &Vec3, best: &mut (usize, f64)) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && (i as usize) < best.0) {
                        *best = (i as usize, d2);
                    }
                }
            }
            Node::Split {
                axis,
                threshold,
                left,
                right,
            } => {
                let delta = query[*axis] - threshold;
                let (near, far) = if delta < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.nearest_rec(near, query, best);
                if delta * delta <= best.1 {
                    self.nearest_rec(far, query, best);
                }
            }
        }
    }

    /// The `k` exact nearest neighbors of `query`, sorted by increasing
    /// distance (ties broken by index). Returns fewer if the set is smaller.
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_rec(self.root, query, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, node: usize, query: &Vec3, k: usize, heap: &mut Vec<(f64, usize)>) {
        let worst = |h: &Vec<(f64, usize)>| {
            if h.len() < k {
                f64::INFINITY
            } else {
                h.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max)
            }
        };
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    if heap.len() < k {
                        heap.push((d2, i as usize));
                    } else {
                        // Replace the current worst entry, breaking ties toward
                        // lower indices so results are order-independent.
                        let (wi, &wval) = heap
                            .iter()
                            .enumerate()
                            .max_by(|a, b| {
                                a.1 .0
                                    .partial_cmp(&b.1 .0)
                                    .unwrap()
                                    .then(b.1 .1.cmp(&a.1 .1))
                            })
                            .map(|(i, v)| (i, v))
                            .unwrap();
                        if d2 < wval.0 || (d2 == wval.0 && (i as usize) < wval.1) {
                            heap[wi] = (d2, i as usize);
                        }
                    }
                }
            }
            Node::Split {
                axis,
                threshold,
                left,
                right,
            } => {
                let delta = query[*axis] - threshold;
                let (near, far) = if delta < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.knn_rec(near, query, k, heap);
                if delta * delta <= worst(heap) {
                    self.knn_rec(far, query, k, heap);
                }
            }
        }
    }

    /// All points within `radius` (inclusive) of `query`, sorted by distance
    /// then index.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_rec(self.root, query, radius * radius, &mut out);
        let mut out: Vec<(usize, f64)> = out.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn radius_rec(&self, node: usize, query: &Vec3, r2: f64, out: &mut Vec<(usize, f64)>) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    if d2 <= r2 {
                        out.push((i as usize, d2));
                    }
                }
            }
            Node::Split {
                axis,
                threshold,
                left,
                right,
            } => {
                let delta = query[*axis] - threshold;
                let (near, far) = if delta < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.radius_rec(near, query, r2, out);
                if delta * delta <= r2 {
                    self.radius_rec(far, query, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> f64 {
        points
            .iter()
            .map(|p| (p - q).norm())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn nearest_matches_brute_force_over_seeded_trials() {
        for trial in 0..100u64 {
            let n = 1 + (trial as usize * 37) % 2000;
            let points = random_points(trial, n);
            let index = NeighborIndex::build(&points).unwrap();
            let queries = random_points(trial + 10_000, 20);
            for q in &queries {
                let (_, d) = index.nearest(q);
                let expect = brute_nearest(&points, q);
                assert!(
                    (d - expect).abs() < 1e-12,
                    "trial {trial}: got {d}, expected {expect}"
                );
            }
        }
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let points = random_points(5, 300);
        let index = NeighborIndex::build(&points).unwrap();
        let q = Vec3::new(0.1, -0.2, 0.05);
        for k in [1, 4, 17, 300] {
            let got = index.k_nearest(&q, k);
            let mut expect: Vec<(usize, f64)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .collect();
            expect.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            expect.truncate(k);
            assert_eq!(got.len(), expect.len());
            for (g, e) in got.iter().zip(&expect) {
                assert!((g.1 - e.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn within_radius_matches_brute_force() {
        let points = random_points(9, 500);
        let index = NeighborIndex::build(&points).unwrap();
        let q = Vec3::new(0.0, 0.0, 0.0);
        for radius in [0.05, 0.3, 1.0] {
            let got = index.within_radius(&q, radius);
            let expect: Vec<usize> = (0..points.len())
                .filter(|&i| (points[i] - q).norm() <= radius)
                .collect();
            let mut got_ids: Vec<usize> = got.iter().map(|(i, _)| *i).collect();
            got_ids.sort_unstable();
            assert_eq!(got_ids, expect);
        }
    }

    #[test]
    fn duplicate_points_are_handled() {
        let points = vec![Vec3::zeros(); 40];
        let index = NeighborIndex::build(&points).unwrap();
        let (i, d) = index.nearest(&Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(i, 0);
        assert!((d - 0.5).abs() < 1e-12);
        assert_eq!(index.k_nearest(&Vec3::zeros(), 5).len(), 5);
    }
}
