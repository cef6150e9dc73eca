//! Static 3D kd-tree for nearest-neighbor and fixed-radius queries.

use crate::scene::Vec3;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

const NONE: u32 = u32::MAX;

pub struct KdTree<'a> {
    points: &'a [Vec3],
    nodes: Vec<Node>,
    root: u32,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(points, &mut idx, 0, &mut nodes);
        KdTree {
            points,
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `q` as `(index, squared distance)`; equal distances
    /// resolve to the smaller index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.nearest_filtered(q, usize::MAX)
    }

    /// Nearest point other than `self_index`.
    pub fn nearest_other(&self, self_index: usize) -> Option<(usize, f64)> {
        self.nearest_filtered(&self.points[self_index], self_index)
    }

    fn nearest_filtered(&self, q: &Vec3, skip: usize) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, q, skip, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn nearest_rec(&self, node: u32, q: &Vec3, skip: usize, best: &mut (usize, f64)) {
        if node == NONE {
            return;
        }
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let i = n.point as usize;
        if i != skip {
            let d = (p - q).norm_squared();
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        }
        let diff = q[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, q, skip, best);
        if diff * diff <= best.1 {
            self.nearest_rec(far, q, skip, best);
        }
    }

    /// Indices of all points with `|p - q| <= radius`, ascending.
    pub fn within(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_rec(self.root, q, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    /// Number of points with `|p - q| <= radius`.
    pub fn count_within(&self, q: &Vec3, radius: f64) -> usize {
        let mut out = Vec::new();
        self.within_rec(self.root, q, radius * radius, &mut out);
        out.len()
    }

    fn within_rec(&self, node: u32, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        if node == NONE {
            return;
        }
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        if (p - q).norm_squared() <= r2 {
            out.push(n.point as usize);
        }
        let diff = q[n.axis as usize] - p[n.axis as usize];
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_rec(n.left, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_rec(n.right, q, r2, out);
        }
    }
}

fn build(points: &[Vec3], idx: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
    if idx.is_empty() {
        return NONE;
    }
    let axis = depth % 3;
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let slot = nodes.len();
    nodes.push(Node {
        point: idx[mid],
        axis: axis as u8,
        left: NONE,
        right: NONE,
    });
    let (lo, rest) = idx.split_at_mut(mid);
    let left = build(points, lo, depth + 1, nodes);
    let right = build(points, &mut rest[1..], depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot as u32
}

/// Median distance from each point to its nearest other point.
pub fn median_nn_distance(points: &[Vec3]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let tree = KdTree::new(points);
    let mut d: Vec<f64> = (0..points.len())
        .map(|i| tree.nearest_other(i).map_or(0.0, |(_, d2)| d2.sqrt()))
        .collect();
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, f64::total_cmp);
    Some(d[mid])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // coarse grid values force exact ties
                Vec3::new(
                    rng.random_range(0..6) as f64 * 0.5,
                    rng.random_range(0..6) as f64 * 0.5,
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let pts = cloud(1, 300);
        let tree = KdTree::new(&pts);
        let queries = cloud(2, 200);
        for q in &queries {
            let want = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .fold((usize::MAX, f64::INFINITY), |b, c| {
                    if c.1 < b.1 || (c.1 == b.1 && c.0 < b.0) {
                        c
                    } else {
                        b
                    }
                });
            assert_eq!(tree.nearest(q), Some(want));
        }
    }

    #[test]
    fn radius_matches_linear_scan() {
        let pts = cloud(3, 300);
        let tree = KdTree::new(&pts);
        for q in pts.iter().take(50) {
            let want: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i] - q).norm_squared() <= 0.36)
                .collect();
            assert_eq!(tree.within(q, 0.6), want);
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Vec3::zeros()).is_none());
        assert!(tree.within(&Vec3::zeros(), 1.0).is_empty());
        assert_eq!(median_nn_distance(&[]), None);
    }
}
