//! Synthetic labeled scenes, ground-truth views and controlled mask
//! corruption.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{full_opacity_mask, render, RenderMode};
use crate::scene::{
    instance_labels, Camera, DepthMap, Gaussian, Label, Mask, MaskSet, MaskStage, Quat, Vec3, ViewAssets,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub permute_ids: bool,
    /// Per view, probability that one mask is cut in two by a random line.
    pub split_prob: f64,
    /// Per mask, probability that it is deleted.
    pub drop_prob: f64,
    /// Masks grow by this many pixels into unclaimed pixels.
    pub dilation_px: usize,
}

impl Corruption {
    pub fn none() -> Self {
        Corruption {
            permute_ids: false,
            split_prob: 0.0,
            drop_prob: 0.0,
            dilation_px: 0,
        }
    }
}

impl Default for Corruption {
    fn default() -> Self {
        Corruption {
            permute_ids: true,
            ..Corruption::none()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub objects: usize,
    pub gaussians_per_object: usize,
    /// Distance between neighboring object centers.
    pub spacing: f64,
    pub cameras: usize,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub corruption: Corruption,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            objects: 5,
            gaussians_per_object: 400,
            spacing: 0.7,
            cameras: 20,
            orbit_radius: 3.0,
            orbit_height: 1.5,
            width: 128,
            height: 128,
            fov_deg: 45.0,
            corruption: Corruption::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corruption;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.objects == 0 || self.gaussians_per_object == 0 || self.cameras == 0 {
            return bad("object, Gaussian and camera counts must be at least 1");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if !(0.0..=1.0).contains(&c.split_prob) || !(0.0..=1.0).contains(&c.drop_prob) {
            return bad("corruption probabilities must lie in [0, 1]");
        }
        if !(self.spacing > 0.0 && self.orbit_radius > 0.0 && self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("spacing, orbit radius and field of view must be positive");
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.fov_deg.to_radians() / 2.0).tan()
    }
}

/// Object centers on a ring in the ground plane with `spacing` between
/// neighbors.
fn object_centers(n: usize, spacing: f64) -> Vec<Vec3> {
    if n == 1 {
        return vec![Vec3::zeros()];
    }
    let ring = spacing / (2.0 * (std::f64::consts::PI / n as f64).sin());
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            Vec3::new(ring * t.cos(), ring * t.sin(), 0.0)
        })
        .collect()
}

/// Labeled scene of ellipsoidal shells (labels `1..=objects`) and orbit
/// cameras facing the scene center.
pub fn generate_scene(spec: &SynthSpec) -> Result<(Vec<Gaussian>, Vec<Camera>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.gaussians_per_object;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut scene = Vec::with_capacity(spec.objects * n);
    for (k, center) in object_centers(spec.objects, spec.spacing).into_iter().enumerate() {
        let radii = Vec3::new(
            rng.random_range(0.15..0.3),
            rng.random_range(0.15..0.3),
            rng.random_range(0.15..0.3),
        );
        let base = Vec3::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        // splat size proportional to the mean point spacing on the shell
        let area = 4.0 * std::f64::consts::PI * radii.mean().powi(2);
        let sigma = 0.6 * (area / n as f64).sqrt();
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            let dir = Vec3::new(r * t.cos(), r * t.sin(), z);
            let mean = center + dir.component_mul(&radii);
            let jitter = Vec3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            let color = (base + jitter).map(|c| c.clamp(0.0, 1.0));
            let scale = Vec3::new(sigma, sigma, 0.5 * sigma) * rng.random_range(0.9..1.1);
            let rotation = Quat::rotation_between(&Vec3::z(), &dir).unwrap_or_else(Quat::identity);
            scene.push(Gaussian::new(mean, scale, rotation, rng.random_range(0.85..0.99), color).with_label(k as Label + 1));
        }
    }
    let focal = spec.focal();
    let cameras = (0..spec.cameras)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / spec.cameras as f64;
            let eye = Vec3::new(spec.orbit_radius * t.cos(), spec.orbit_radius * t.sin(), spec.orbit_height);
            Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::z(),
                focal,
                focal,
                spec.width as f64 / 2.0,
                spec.height as f64 / 2.0,
                spec.width,
                spec.height,
            )
        })
        .collect::<Result<_>>()?;
    Ok((scene, cameras))
}

/// Ground-truth assets per camera. Depth is the camera-space z of the mean
/// of the splat contributing most to each pixel. The mask of instance `l`
/// holds the pixels whose dominant splat belongs to `l` and that `l`'s
/// full-opacity silhouette covers, so masks are pairwise disjoint.
pub fn render_gt_views(scene: &[Gaussian], cameras: &[Camera]) -> Vec<ViewAssets> {
    let labels: Vec<Label> = instance_labels(scene).into_iter().collect();
    cameras
        .par_iter()
        .enumerate()
        .map(|(view, cam)| {
            let out = render(scene, cam, RenderMode::Rgb);
            let (width, height) = cam.dims();
            let mut depth = DepthMap::new(width, height);
            for h in 0..height {
                for w in 0..width {
                    if let Some(i) = out.ids[h * width + w] {
                        depth.set(w, h, cam.to_camera(&scene[i].mean).z);
                    }
                }
            }
            let mut masks = MaskSet::new(view, width, height, MaskStage::Raw);
            for &l in &labels {
                let full = full_opacity_mask(scene, cam, l);
                let m = Mask::from_fn(width, height, |w, h| {
                    full.get(w, h) && out.ids[h * width + w].is_some_and(|i| scene[i].label == l)
                });
                if !m.is_empty() {
                    masks.masks.push((l, m));
                }
            }
            ViewAssets {
                camera: cam.clone(),
                image: out.rgb,
                depth,
                masks,
            }
        })
        .collect()
}

fn split_by_line(mask: &Mask, rng: &mut ChaCha8Rng) -> Option<(Mask, Mask)> {
    let n = mask.count() as f64;
    if n < 2.0 {
        return None;
    }
    let (sx, sy) = mask
        .pixels()
        .fold((0.0, 0.0), |(a, b), (w, h)| (a + w as f64, b + h as f64));
    let (cx, cy) = (sx / n, sy / n);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (nx, ny) = (angle.cos(), angle.sin());
    let side = |w: usize, h: usize| (w as f64 - cx) * nx + (h as f64 - cy) * ny >= 0.0;
    let a = Mask::from_fn(mask.width, mask.height, |w, h| mask.get(w, h) && side(w, h));
    let b = Mask::from_fn(mask.width, mask.height, |w, h| mask.get(w, h) && !side(w, h));
    (!a.is_empty() && !b.is_empty()).then_some((a, b))
}

/// Corrupts ground-truth mask sets view by view: optionally splits one mask
/// in two along a random line through its centroid, drops masks
/// independently, dilates the survivors into unclaimed pixels and
/// relabels them with local ids. Without permutation, ids stay the ground
/// truth ids and split halves get fresh ids above the largest one.
pub fn corrupt_masks(gt: &[MaskSet], c: &Corruption, seed: u64) -> Result<Vec<MaskSet>> {
    if !(0.0..=1.0).contains(&c.split_prob) || !(0.0..=1.0).contains(&c.drop_prob) {
        return Err(Error::InvalidConfig("corruption probabilities must lie in [0, 1]".into()));
    }
    gt.par_iter()
        .map(|set| {
            set.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(set.view as u64);
            let fresh_id = set.ids().into_iter().max().unwrap_or(0) + 1;
            let mut masks: Vec<(u32, Mask)> = set.masks.clone();

            if !masks.is_empty() && rng.random_bool(c.split_prob) {
                let k = rng.random_range(0..masks.len());
                if let Some((a, b)) = split_by_line(&masks[k].1, &mut rng) {
                    let id = masks[k].0;
                    masks[k] = (id, a);
                    masks.insert(k + 1, (fresh_id, b));
                }
            }
            masks.retain(|_| !rng.random_bool(c.drop_prob));

            if c.dilation_px > 0 {
                let mut claimed = Mask::new(set.width, set.height);
                for (_, m) in &masks {
                    claimed.union_with(m);
                }
                for (_, m) in masks.iter_mut() {
                    let grown = crate::propagation::dilate(m, c.dilation_px);
                    for (i, &g) in grown.data.iter().enumerate() {
                        if g && !claimed.data[i] {
                            m.data[i] = true;
                            claimed.data[i] = true;
                        }
                    }
                }
            }

            if c.permute_ids {
                let mut ids: Vec<u32> = (1..=masks.len() as u32).collect();
                ids.shuffle(&mut rng);
                for ((id, _), new) in masks.iter_mut().zip(ids) {
                    *id = new;
                }
                masks.sort_by_key(|(id, _)| *id);
            }
            Ok(MaskSet {
                view: set.view,
                width: set.width,
                height: set.height,
                stage: MaskStage::Raw,
                masks,
            })
        })
        .collect()
}
