use rayon::prelude::*;

use crate::scene::Vec3;
use crate::spatial::KdTree;

/// Indices of the points that belong to some DBSCAN cluster, ascending.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Core points and the border points within `eps` of a core
/// point are retained; everything else is noise.
pub fn dbscan_filter(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<usize> {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let tree = KdTree::new(points);
    let neighbors: Vec<Vec<usize>> = points.par_iter().map(|p| tree.within(p, eps)).collect();
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();
    (0..points.len())
        .filter(|&i| core[i] || neighbors[i].iter().any(|&j| core[j]))
        .collect()
}
