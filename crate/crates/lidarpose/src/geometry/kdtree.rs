//! KD-tree over a point cloud for exact k-NN and radius queries.
//!
//! Results match a brute-force scan: neighbors sorted by ascending distance,
//! ties broken by ascending point index. Read-only after construction.

use nalgebra::Vector3;
use std::cmp::Ordering;

#[derive(Debug, Clone)]
struct Node {
    /// Index into `points`.
    point: usize,
    axis: usize,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

/// Spatial index built over a fixed set of points.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    root: Option<Box<Node>>,
}

/// (distance, index) with total ordering: distance first, then index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist2: f64,
    index: usize,
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .partial_cmp(&other.dist2)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

impl NeighborIndex {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let root = build_node(points, &mut indices, 0);
        NeighborIndex {
            points: points.to_vec(),
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// k nearest neighbors of `query`, sorted ascending by (distance, index).
    /// Returns min(k, N) entries as (index, distance).
    pub fn query(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        // max-heap of the current k best
        let mut heap: std::collections::BinaryHeap<Entry> = std::collections::BinaryHeap::new();
        self.knn_recurse(self.root.as_deref(), query, k, &mut heap);
        let mut out: Vec<Entry> = heap.into_vec();
        out.sort();
        out.into_iter()
            .map(|e| (e.index, e.dist2.sqrt()))
            .collect()
    }

    /// All points within `radius` (inclusive), sorted ascending by (distance, index).
    pub fn query_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_recurse(self.root.as_deref(), query, radius * radius, &mut out);
        out.sort();
        out.into_iter()
            .map(|e| (e.index, e.dist2.sqrt()))
            .collect()
    }

    fn knn_recurse(
        &self,
        node: Option<&Node>,
        query: &Vector3<f64>,
        k: usize,
        heap: &mut std::collections::BinaryHeap<Entry>,
    ) {
        let Some(node) = node else { return };
        let p = &self.points[node.point];
        let d2 = (p - query).norm_squared();
        let entry = Entry {
            dist2: d2,
            index: node.point,
        };
        if heap.len() < k {
            heap.push(entry);
        } else if let Some(worst) = heap.peek() {
            if entry < *worst {
                heap.pop();
                heap.push(entry);
            }
        }

        let delta = query[node.axis] - p[node.axis];
        let (near, far) = if delta <= 0.0 {
            (node.left.as_deref(), node.right.as_deref())
        } else {
            (node.right.as_deref(), node.left.as_deref())
        };
        self.knn_recurse(near, query, k, heap);
        // Visit the far side if the splitting plane could still hold a closer
        // point, or an equal-distance point with a smaller index.
        let worst = heap.peek().map(|e| e.dist2).unwrap_or(f64::INFINITY);
        if heap.len() < k || delta * delta <= worst {
            self.knn_recurse(far, query, k, heap);
        }
    }

    fn radius_recurse(
        &self,
        node: Option<&Node>,
        query: &Vector3<f64>,
        r2: f64,
        out: &mut Vec<Entry>,
    ) {
        let Some(node) = node else { return };
        let p = &self.points[node.point];
        let d2 = (p - query).norm_squared();
        if d2 <= r2 {
            out.push(Entry {
                dist2: d2,
                index: node.point,
            });
        }
        let delta = query[node.axis] - p[node.axis];
        let (near, far) = if delta <= 0.0 {
            (node.left.as_deref(), node.right.as_deref())
        } else {
            (node.right.as_deref(), node.left.as_deref())
        };
        self.radius_recurse(near, query, r2, out);
        if delta * delta <= r2 {
            self.radius_recurse(far, query, r2, out);
        }
    }
}

fn build_node(points: &[Vector3<f64>], indices: &mut [usize], depth: usize) -> Option<Box<Node>> {
    if indices.is_empty() {
        return None;
    }
    let axis = depth % 3;
    // Sort by (coordinate, index) so equal coordinates split deterministically.
    indices.sort_by(|&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mid = indices.len() / 2;
    let point = indices[mid];
    let (left, right) = indices.split_at_mut(mid);
    let right = &mut right[1..];
    Some(Box::new(Node {
        point,
        axis,
        left: build_node(points, left, depth + 1),
        right: build_node(points, right, depth + 1),
    }))
}

/// Brute-force k-NN oracle: the reference for index correctness tests.
pub fn brute_force_knn(points: &[Vector3<f64>], query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<Entry> = points
        .iter()
        .enumerate()
        .map(|(i, p)| Entry {
            dist2: (p - query).norm_squared(),
            index: i,
        })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter()
        .map(|e| (e.index, e.dist2.sqrt()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        for (n, seed) in [(1usize, 0u64), (17, 1), (200, 2), (2000, 3)] {
            let pts = random_cloud(n, seed);
            let index = NeighborIndex::build(&pts);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..20 {
                let q = Vector3::new(rng.gen(), rng.gen(), rng.gen());
                for k in [1, 5, n + 3] {
                    let got: Vec<usize> = index.query(&q, k).into_iter().map(|e| e.0).collect();
                    let want: Vec<usize> =
                        brute_force_knn(&pts, &q, k).into_iter().map(|e| e.0).collect();
                    assert_eq!(got, want, "n={n} k={k}");
                    assert_eq!(got.len(), k.min(n));
                }
            }
        }
    }

    #[test]
    fn knn_with_duplicate_points_breaks_ties_by_index() {
        let pts = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let index = NeighborIndex::build(&pts);
        let got: Vec<usize> = index
            .query(&Vector3::zeros(), 3)
            .into_iter()
            .map(|e| e.0)
            .collect();
        assert_eq!(got, vec![0, 1, 2]);
    }

    #[test]
    fn radius_matches_brute_force() {
        let pts = random_cloud(500, 9);
        let index = NeighborIndex::build(&pts);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let q = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let r = 0.2;
            let got: Vec<usize> = index.query_radius(&q, r).into_iter().map(|e| e.0).collect();
            let mut want: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - q).norm() <= r)
                .map(|(i, p)| (i, (p - q).norm()))
                .collect();
            want.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let want: Vec<usize> = want.into_iter().map(|e| e.0).collect();
            assert_eq!(got, want);
        }
    }
}
