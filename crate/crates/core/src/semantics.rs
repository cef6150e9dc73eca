//! Instance descriptors and open-vocabulary queries.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::merging::BoundingBox3D;
use crate::raster::{full_opacity_mask, render, RenderMode};
use crate::scene::{Camera, Gaussian, InstanceDescriptor, Label, Mask, Vec3};

pub const DEFAULT_TAU_CORR: f64 = 0.02;
pub const SPHERE_ELEVATIONS: usize = 6;
pub const SPHERE_AZIMUTHS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryConfig {
    pub tau_corr: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            tau_corr: DEFAULT_TAU_CORR,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_corr >= 0.0 && self.tau_corr.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "tau_corr must be non-negative, got {}",
                self.tau_corr
            )))
        }
    }
}

/// Unit descriptors per instance and, optionally, per Gaussian.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorTable {
    pub instances: BTreeMap<Label, InstanceDescriptor>,
    pub gaussians: Option<BTreeMap<usize, InstanceDescriptor>>,
}

impl DescriptorTable {
    /// Builds a table from raw per-view vectors; several vectors for one
    /// label are aggregated.
    pub fn from_views(entries: &[(Label, Vec<f64>)]) -> Result<Self> {
        let mut grouped: BTreeMap<Label, Vec<&[f64]>> = BTreeMap::new();
        for (l, v) in entries {
            grouped.entry(*l).or_default().push(v);
        }
        let mut instances = BTreeMap::new();
        let mut dim = None;
        for (l, vs) in grouped {
            let d = aggregate_instance_descriptor(&vs)?;
            match dim {
                None => dim = Some(d.dim()),
                Some(expected) if expected != d.dim() => {
                    return Err(Error::DescriptorDim {
                        expected,
                        got: d.dim(),
                    })
                }
                _ => {}
            }
            instances.insert(l, d);
        }
        Ok(DescriptorTable {
            instances,
            gaussians: None,
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.instances.values().next().map(InstanceDescriptor::dim)
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Mean of the per-view vectors, normalized.
pub fn aggregate_instance_descriptor<V: AsRef<[f64]>>(views: &[V]) -> Result<InstanceDescriptor> {
    let first = views.first().ok_or(Error::DegenerateDescriptor)?.as_ref();
    let mut sum = vec![0.0; first.len()];
    for v in views {
        let v = v.as_ref();
        if v.len() != sum.len() {
            return Err(Error::DescriptorDim {
                expected: sum.len(),
                got: v.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = views.len() as f64;
    InstanceDescriptor::new(sum.into_iter().map(|s| s / n).collect())
}

/// `1 - cos(a, b)` for unit `b`.
fn cosine_distance(a: &[f64], a_norm: f64, b: &InstanceDescriptor) -> f64 {
    let dot: f64 = a.iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
    1.0 - dot / a_norm
}

/// Every label whose cosine distance to `text` is within `tau_corr` of the
/// best one, as `(label, distance)` sorted by distance then label.
pub fn query_open_vocab(text: &[f64], table: &DescriptorTable, cfg: &QueryConfig) -> Result<Vec<(Label, f64)>> {
    cfg.validate()?;
    if table.is_empty() {
        return Ok(Vec::new());
    }
    let dim = table.dim().unwrap_or(0);
    if text.len() != dim {
        return Err(Error::DescriptorDim {
            expected: dim,
            got: text.len(),
        });
    }
    let norm = text.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateDescriptor);
    }
    let mut scored: Vec<(Label, f64)> = table
        .instances
        .iter()
        .map(|(&l, d)| (l, cosine_distance(text, norm, d)))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let best = scored[0].1;
    // the best label always matches, even with tau_corr = 0
    let keep = scored
        .iter()
        .enumerate()
        .filter(|(i, (_, d))| *i == 0 || (best - d).abs() < cfg.tau_corr)
        .map(|(_, x)| *x)
        .collect();
    Ok(keep)
}

/// Per-view union of the full-opacity silhouettes of `labels`.
pub fn query_masks(labels: &[Label], scene: &[Gaussian], cameras: &[Camera]) -> Vec<Mask> {
    cameras
        .par_iter()
        .map(|cam| {
            let mut m = Mask::new(cam.width, cam.height);
            for &l in labels {
                m.union_with(&full_opacity_mask(scene, cam, l));
            }
            m
        })
        .collect()
}

/// Cameras on the upper hemisphere around `centroid` at radius twice the
/// box diagonal, all looking at `centroid`. Elevations are
/// `(i + 1/2) * 90 / 6` degrees and azimuths `j * 30` degrees, ordered
/// elevation-major. The principal point is the image center.
pub fn sample_sphere_cameras(
    bbox: &BoundingBox3D,
    centroid: Vec3,
    focal: f64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera>> {
    let d = bbox.diagonal();
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::DegenerateBox);
    }
    let radius = 2.0 * d;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let mut cams = Vec::with_capacity(SPHERE_ELEVATIONS * SPHERE_AZIMUTHS);
    for i in 0..SPHERE_ELEVATIONS {
        let el = ((i as f64 + 0.5) * 90.0 / SPHERE_ELEVATIONS as f64).to_radians();
        for j in 0..SPHERE_AZIMUTHS {
            let az = (j as f64 * 360.0 / SPHERE_AZIMUTHS as f64).to_radians();
            let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            cams.push(Camera::look_at(
                centroid + radius * dir,
                centroid,
                Vec3::z(),
                focal,
                focal,
                cx,
                cy,
                width,
                height,
            )?);
        }
    }
    Ok(cams)
}

/// Dense per-pixel feature map, `dim` values per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn constant(width: usize, height: usize, v: &[f64]) -> Self {
        FeatureMap {
            width,
            height,
            dim: v.len(),
            data: v.repeat(width * height),
        }
    }

    pub fn pixel(&self, w: usize, h: usize) -> &[f64] {
        let i = (h * self.width + w) * self.dim;
        &self.data[i..i + self.dim]
    }
}

/// Per-Gaussian descriptors: within each view, every pixel's feature goes to
/// the Gaussian contributing most to it and is averaged per Gaussian; the
/// per-view averages are then averaged over the views where the Gaussian
/// owned a pixel, and normalized. Gaussians that own no pixel anywhere, or
/// whose average is zero, get `None`.
pub fn assign_dense_descriptors(
    scene: &[Gaussian],
    cameras: &[Camera],
    features: &[FeatureMap],
) -> Result<Vec<Option<InstanceDescriptor>>> {
    if cameras.len() != features.len() {
        return Err(Error::InvalidConfig(format!(
            "{} cameras but {} feature maps",
            cameras.len(),
            features.len()
        )));
    }
    let dim = features.first().map_or(0, |f| f.dim);
    for (cam, f) in cameras.iter().zip(features) {
        if (f.width, f.height) != cam.dims() {
            return Err(Error::DimensionMismatch {
                expected: cam.dims(),
                got: (f.width, f.height),
            });
        }
        if f.dim != dim || f.data.len() != f.width * f.height * f.dim {
            return Err(Error::DescriptorDim {
                expected: dim,
                got: f.dim,
            });
        }
    }
    // per view: gaussian -> mean feature over owned pixels
    let per_view: Vec<BTreeMap<usize, Vec<f64>>> = cameras
        .par_iter()
        .zip(features.par_iter())
        .map(|(cam, fm)| {
            let ids = render(scene, cam, RenderMode::ArgmaxIds).ids;
            let mut acc: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
            for h in 0..cam.height {
                for w in 0..cam.width {
                    if let Some(g) = ids[h * cam.width + w] {
                        let e = acc.entry(g).or_insert_with(|| (vec![0.0; dim], 0));
                        for (s, x) in e.0.iter_mut().zip(fm.pixel(w, h)) {
                            *s += x;
                        }
                        e.1 += 1;
                    }
                }
            }
            acc.into_iter()
                .map(|(g, (sum, n))| (g, sum.into_iter().map(|s| s / n as f64).collect()))
                .collect()
        })
        .collect();
    let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; scene.len()];
    for view in per_view {
        for (g, mean) in view {
            let e = sums[g].get_or_insert_with(|| (vec![0.0; dim], 0));
            for (s, x) in e.0.iter_mut().zip(&mean) {
                *s += x;
            }
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| {
            s.and_then(|(sum, n)| InstanceDescriptor::new(sum.into_iter().map(|x| x / n as f64).collect()).ok())
        })
        .collect())
}
