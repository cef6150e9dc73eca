//! Label-addressed scene edits.

use nalgebra::{Isometry3, Matrix4, Rotation3, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::scene::{Gaussian, Label, Vec3};

fn ensure_exists(scene: &[Gaussian], label: Label) -> Result<()> {
    if scene.iter().any(|g| g.label == label) {
        Ok(())
    } else {
        Err(Error::UnknownLabel(label))
    }
}

pub fn remove_instance(scene: &[Gaussian], label: Label) -> Result<Vec<Gaussian>> {
    ensure_exists(scene, label)?;
    Ok(scene.iter().filter(|g| g.label != label).cloned().collect())
}

/// Appends a translated copy of `label` under a fresh label one above the
/// largest in the scene. Returns the new scene and the fresh label.
pub fn duplicate_instance(scene: &[Gaussian], label: Label, offset: Vec3) -> Result<(Vec<Gaussian>, Label)> {
    ensure_exists(scene, label)?;
    let fresh = scene.iter().map(|g| g.label).max().unwrap_or(0) + 1;
    let copies: Vec<Gaussian> = scene
        .iter()
        .filter(|g| g.label == label)
        .map(|g| Gaussian {
            mean: g.mean + offset,
            label: fresh,
            ..g.clone()
        })
        .collect();
    let mut out = scene.to_vec();
    out.extend(copies);
    Ok((out, fresh))
}

/// Checks that a homogeneous 4x4 matrix is a proper rigid motion and
/// converts it.
pub fn rigid_from_matrix(m: &Matrix4<f64>) -> Result<Isometry3<f64>> {
    const TOL: f64 = 1e-6;
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("transform"));
    }
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let bottom_ok = m[(3, 0)] == 0.0 && m[(3, 1)] == 0.0 && m[(3, 2)] == 0.0 && (m[(3, 3)] - 1.0).abs() < TOL;
    let ortho = (r.transpose() * r - nalgebra::Matrix3::identity()).amax() < TOL;
    if !bottom_ok || !ortho || r.determinant() < 0.0 {
        return Err(Error::NonRigidTransform);
    }
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = Translation3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    Ok(Isometry3::from_parts(t, rot))
}

/// Moves `label` by a rigid motion: means are transformed and rotations
/// composed. The identity leaves the scene bit-identical.
pub fn transform_instance(scene: &[Gaussian], label: Label, motion: &Isometry3<f64>) -> Result<Vec<Gaussian>> {
    ensure_exists(scene, label)?;
    if *motion == Isometry3::identity() {
        return Ok(scene.to_vec());
    }
    Ok(scene
        .iter()
        .map(|g| {
            if g.label != label {
                return g.clone();
            }
            Gaussian {
                mean: motion.transform_point(&g.mean.into()).coords,
                rotation: motion.rotation * g.rotation,
                ..g.clone()
            }
        })
        .collect())
}

pub fn recolor_instance(scene: &[Gaussian], label: Label, rgb: Vec3) -> Result<Vec<Gaussian>> {
    ensure_exists(scene, label)?;
    if !rgb.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::InvalidGaussian(format!("color {rgb:?} outside [0, 1]")));
    }
    Ok(scene
        .iter()
        .map(|g| {
            if g.label == label {
                Gaussian { color: rgb, ..g.clone() }
            } else {
                g.clone()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merging::instance_bbox;
    use crate::raster::{render, RenderMode};
    use crate::scene::{instance_subset, Camera, Quat};
    use nalgebra::Vector3;

    fn scene() -> Vec<Gaussian> {
        let mut s = Vec::new();
        for i in 0..3 {
            s.push(Gaussian::isotropic(Vec3::new(i as f64 * 0.1, 0.0, 2.0), 0.05, 0.8, Vec3::new(0.9, 0.1, 0.1)).with_label(1));
        }
        for i in 0..2 {
            s.push(Gaussian::isotropic(Vec3::new(-0.2, i as f64 * 0.1, 2.5), 0.05, 0.7, Vec3::new(0.1, 0.1, 0.9)).with_label(2));
        }
        s
    }

    fn camera() -> Camera {
        Camera::new(40.0, 40.0, 12.0, 12.0, 24, 24, Quat::identity(), Vec3::zeros()).unwrap()
    }

    #[test]
    fn remove_examples() {
        let s = scene();
        let out = remove_instance(&s, 2).unwrap();
        assert_eq!(out.len(), 3);
        assert!(instance_subset(&out, 2).is_empty());
        assert!(matches!(remove_instance(&s, 9), Err(Error::UnknownLabel(9))));
        let complement: Vec<Gaussian> = s.iter().filter(|g| g.label != 2).cloned().collect();
        assert_eq!(
            render(&out, &camera(), RenderMode::Rgb).rgb,
            render(&complement, &camera(), RenderMode::Rgb).rgb
        );
    }

    #[test]
    fn duplicate_examples() {
        let s = scene();
        let (out, fresh) = duplicate_instance(&s, 1, Vec3::zeros()).unwrap();
        assert_eq!((out.len(), fresh), (8, 3));
        let copy = instance_subset(&out, fresh);
        let orig = instance_subset(&s, 1);
        for (c, o) in copy.iter().zip(&orig) {
            assert_eq!(c.mean, o.mean);
            assert_eq!(c.rotation, o.rotation);
        }
        let off = Vec3::new(1.0, -2.0, 0.5);
        let (out, fresh) = duplicate_instance(&s, 1, off).unwrap();
        let a = instance_bbox(&orig).unwrap();
        let b = instance_bbox(&instance_subset(&out, fresh)).unwrap();
        assert!((b.min - a.min - off).norm() < 1e-12 && (b.max - a.max - off).norm() < 1e-12);
        // removing the copy restores the original rendering
        let (dup, fresh) = duplicate_instance(&s, 2, Vec3::zeros()).unwrap();
        let back = remove_instance(&dup, fresh).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn transform_examples() {
        let s = scene();
        assert_eq!(transform_instance(&s, 1, &Isometry3::identity()).unwrap(), s);
        let t = Vector3::new(0.5, 0.25, -1.0);
        let moved = transform_instance(&s, 1, &Isometry3::translation(t.x, t.y, t.z)).unwrap();
        let centroid = |sc: &[Gaussian]| {
            let sub = instance_subset(sc, 1);
            sub.iter().map(|g| g.mean).sum::<Vec3>() / sub.len() as f64
        };
        assert!((centroid(&moved) - centroid(&s) - t).norm() < 1e-12);
        assert_eq!(&moved[3..], &s[3..]);

        let rot = Isometry3::rotation(Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let turned = transform_instance(&s, 2, &rot).unwrap();
        let g = &turned[3];
        assert!((g.mean - Vec3::new(0.0, -0.2, 2.5)).norm() < 1e-12);
        assert!(g.rotation.angle_to(&(rot.rotation * s[3].rotation)) < 1e-12);
    }

    #[test]
    fn rigid_validation() {
        let mut m = Matrix4::identity();
        m[(0, 3)] = 2.0;
        assert!(rigid_from_matrix(&m).is_ok());
        m[(0, 0)] = 2.0;
        assert!(matches!(rigid_from_matrix(&m), Err(Error::NonRigidTransform)));
        let mut mirror = Matrix4::identity();
        mirror[(2, 2)] = -1.0;
        assert!(matches!(rigid_from_matrix(&mirror), Err(Error::NonRigidTransform)));
    }

    #[test]
    fn recolor_examples() {
        let s = scene();
        let out = recolor_instance(&s, 2, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(out[3..].iter().all(|g| g.color == Vec3::new(1.0, 0.0, 0.0)));
        assert_eq!(&out[..3], &s[..3]);
        assert!(recolor_instance(&s, 5, Vec3::zeros()).is_err());
    }
}
