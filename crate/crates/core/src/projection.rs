//! Pinhole projection and the two per-view point filters: field of view and
//! depth-map surface consistency.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Camera, DepthMap, Vec3};

/// Default surface-consistency threshold in scene units.
pub const DEFAULT_TAU_DEPTH: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    /// Index of the source point.
    pub index: usize,
    /// Continuous pixel column.
    pub w: f64,
    /// Continuous pixel row.
    pub h: f64,
    /// Camera-space z.
    pub depth: f64,
}

impl ProjectedPoint {
    /// Integer pixel containing the projection. Only meaningful for
    /// in-bounds points.
    #[inline]
    pub fn pixel(&self) -> (usize, usize) {
        (self.w.floor() as usize, self.h.floor() as usize)
    }

    #[inline]
    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.w >= 0.0 && self.w < width as f64 && self.h >= 0.0 && self.h < height as f64
    }
}

/// Projects `p` into `camera`. Returns `Ok(None)` when the point is on or
/// behind the image plane.
pub fn project_point(camera: &Camera, index: usize, p: &Vec3) -> Result<Option<ProjectedPoint>> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("point"));
    }
    let pc = camera.to_camera(p);
    if pc.z <= 0.0 {
        return Ok(None);
    }
    Ok(Some(ProjectedPoint {
        index,
        w: camera.fx * pc.x / pc.z + camera.cx,
        h: camera.fy * pc.y / pc.z + camera.cy,
        depth: pc.z,
    }))
}

/// Keeps the points whose projection lands inside the image with positive
/// depth. Non-finite points are dropped.
pub fn filter_in_bounds(points: &[Vec3], camera: &Camera) -> Vec<ProjectedPoint> {
    points
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| match project_point(camera, i, p) {
            Ok(Some(pp)) if pp.in_bounds(camera.width, camera.height) => Some(pp),
            _ => None,
        })
        .collect()
}

/// Keeps points whose depth agrees with the depth map at their (floored)
/// pixel within `tau_depth`. Points over invalid depth cells are dropped.
pub fn filter_surface_consistent(
    projected: &[ProjectedPoint],
    depth: &DepthMap,
    camera: &Camera,
    tau_depth: f64,
) -> Result<Vec<ProjectedPoint>> {
    if !(tau_depth > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tau_depth must be positive, got {tau_depth}"
        )));
    }
    if (depth.width, depth.height) != camera.dims() {
        return Err(Error::DimensionMismatch {
            expected: camera.dims(),
            got: (depth.width, depth.height),
        });
    }
    Ok(projected
        .par_iter()
        .filter(|pp| {
            if !pp.in_bounds(depth.width, depth.height) {
                return false;
            }
            let (w, h) = pp.pixel();
            match depth.get(w, h) {
                Some(d) => (d - pp.depth).abs() < tau_depth,
                None => false,
            }
        })
        .copied()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Quat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(f: f64, c: f64, w: usize, h: usize) -> Camera {
        Camera::new(f, f, c, c, w, h, Quat::identity(), Vec3::zeros()).unwrap()
    }

    #[test]
    fn identity_pinhole() {
        let pp = project_point(&cam(1.0, 0.0, 1, 1), 0, &Vec3::new(0.0, 0.0, 1.0))
            .unwrap()
            .unwrap();
        assert_eq!((pp.w, pp.h, pp.depth), (0.0, 0.0, 1.0));
    }

    #[test]
    fn pinhole_arithmetic() {
        let pp = project_point(&cam(100.0, 50.0, 100, 100), 0, &Vec3::new(0.1, 0.0, 1.0))
            .unwrap()
            .unwrap();
        assert!((pp.w - 60.0).abs() < 1e-12);
        assert_eq!((pp.h, pp.depth), (50.0, 1.0));
    }

    #[test]
    fn behind_camera_is_out_of_view() {
        let c = cam(10.0, 5.0, 10, 10);
        assert!(project_point(&c, 0, &Vec3::new(0.0, 0.0, -1.0))
            .unwrap()
            .is_none());
        assert!(project_point(&c, 0, &Vec3::new(f64::NAN, 0.0, 1.0)).is_err());
    }

    #[test]
    fn out_of_bounds_dropped_center_kept() {
        let c = cam(10.0, 8.0, 16, 16);
        // projects to (W + 3, 2)
        let off = Vec3::new((19.0 - 8.0) / 10.0, (2.0 - 8.0) / 10.0, 1.0);
        let center = Vec3::new(0.0, 0.0, 2.0);
        let kept = filter_in_bounds(&[off, center], &c);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].index, 1);
    }

    #[test]
    fn in_bounds_matches_scalar_reprojection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = Camera::look_at(
            Vec3::new(0.5, -2.0, 0.7),
            Vec3::zeros(),
            Vec3::z(),
            40.0,
            45.0,
            20.0,
            15.0,
            40,
            30,
        )
        .unwrap();
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        let got: Vec<usize> = filter_in_bounds(&pts, &c).iter().map(|p| p.index).collect();
        // independent scalar re-projection
        let r = c.rotation.to_rotation_matrix().into_inner();
        let want: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let x = r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + c.translation.x;
                let y = r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + c.translation.y;
                let z = r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + c.translation.z;
                if z <= 0.0 {
                    return false;
                }
                let u = c.fx * x / z + c.cx;
                let v = c.fy * y / z + c.cy;
                (0.0..40.0).contains(&u) && (0.0..30.0).contains(&v)
            })
            .map(|(i, _)| i)
            .collect();
        assert!(!want.is_empty());
        assert_eq!(got, want);
    }

    fn flat_depth(w: usize, h: usize, d: f32) -> DepthMap {
        DepthMap::from_data(w, h, vec![d; w * h]).unwrap()
    }

    #[test]
    fn surface_consistency_threshold() {
        let c = cam(10.0, 4.0, 8, 8);
        let depth = flat_depth(8, 8, 1.0);
        let near = ProjectedPoint {
            index: 0,
            w: 4.0,
            h: 4.0,
            depth: 1.01,
        };
        let far = ProjectedPoint {
            index: 1,
            depth: 1.05,
            ..near
        };
        let kept = filter_surface_consistent(&[near, far], &depth, &c, DEFAULT_TAU_DEPTH).unwrap();
        assert_eq!(kept, vec![near]);
    }

    #[test]
    fn invalid_depth_cells_drop_points_and_dims_checked() {
        let c = cam(10.0, 4.0, 8, 8);
        let depth = DepthMap::new(8, 8);
        let p = ProjectedPoint {
            index: 0,
            w: 1.0,
            h: 1.0,
            depth: 1.0,
        };
        assert!(filter_surface_consistent(&[p], &depth, &c, 0.5)
            .unwrap()
            .is_empty());
        assert!(filter_surface_consistent(&[p], &DepthMap::new(4, 8), &c, 0.5).is_err());
        assert!(filter_surface_consistent(&[p], &depth, &c, 0.0).is_err());
    }

    #[test]
    fn occluded_plane_is_dropped() {
        // Camera at the origin looking down +z; an opaque plane at z = 1
        // covers the whole image, so the depth map reads 1 everywhere and
        // every point of the plane at z = 2 is hidden.
        let c = cam(20.0, 16.0, 32, 32);
        let depth = flat_depth(32, 32, 1.0);
        let mut pts = Vec::new();
        for i in 0..16 {
            for j in 0..16 {
                let x = (i as f64 - 7.5) * 0.05;
                let y = (j as f64 - 7.5) * 0.05;
                pts.push(Vec3::new(x, y, 1.0));
                pts.push(Vec3::new(2.0 * x, 2.0 * y, 2.0));
            }
        }
        let inb = filter_in_bounds(&pts, &c);
        let kept = filter_surface_consistent(&inb, &depth, &c, DEFAULT_TAU_DEPTH).unwrap();
        assert!(kept.iter().all(|p| (pts[p.index].z - 1.0).abs() < 1e-12));
        assert_eq!(kept.len(), inb.iter().filter(|p| p.depth < 1.5).count());
    }

    proptest::proptest! {
        #[test]
        fn filters_nest_and_tau_is_monotone(seed in 0u64..200, tau_a in 0.001f64..0.3, tau_b in 0.001f64..0.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = cam(12.0, 8.0, 16, 16);
            let depth = DepthMap::from_data(
                16, 16,
                (0..256).map(|_| rng.random_range(0.5f32..2.0)).collect(),
            ).unwrap();
            let pts: Vec<Vec3> = (0..200).map(|_| Vec3::new(
                rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..2.5),
            )).collect();
            let inb = filter_in_bounds(&pts, &c);
            let (lo, hi) = if tau_a < tau_b { (tau_a, tau_b) } else { (tau_b, tau_a) };
            let small = filter_surface_consistent(&inb, &depth, &c, lo).unwrap();
            let large = filter_surface_consistent(&inb, &depth, &c, hi).unwrap();
            let inb_idx: Vec<usize> = inb.iter().map(|p| p.index).collect();
            let large_idx: Vec<usize> = large.iter().map(|p| p.index).collect();
            for p in &small {
                proptest::prop_assert!(large_idx.contains(&p.index));
            }
            for i in &large_idx {
                proptest::prop_assert!(inb_idx.contains(i));
            }
        }
    }
}
