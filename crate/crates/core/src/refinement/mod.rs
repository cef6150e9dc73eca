//! Mask reprojection and refinement.
//!
//! For every view and instance, the instance's visible splats are rendered
//! at full opacity to get a geometric silhouette. Their projected centers are
//! sampled farthest-point style into a few prompts for an external
//! segmenter. The propagated mask and the segmenter's mask then compete on
//! IoU against the silhouette.

mod segmenter;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::projection::project_point;
use crate::raster::{full_opacity_mask, render, visible_gaussians, RenderMode};
use crate::scene::{instance_labels, Camera, Gaussian, Label, Mask, MaskSet, MaskStage, Vec3};

pub use segmenter::{FailingSegmenter, MaskBankSegmenter, OracleSegmenter, Prompt, Segmenter};

pub const DEFAULT_TAU_IOU: f64 = 0.95;
pub const DEFAULT_PROMPTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementConfig {
    pub tau_iou: f64,
    pub n_prompts: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            tau_iou: DEFAULT_TAU_IOU,
            n_prompts: DEFAULT_PROMPTS,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_iou > 0.0 && self.tau_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau_iou must be in (0, 1], got {}",
                self.tau_iou
            )));
        }
        if self.n_prompts == 0 {
            return Err(Error::InvalidConfig("n_prompts must be at least 1".into()));
        }
        Ok(())
    }
}

fn lex_less(a: &Prompt, b: &Prompt) -> bool {
    a[0] < b[0] || (a[0] == b[0] && a[1] < b[1])
}

fn dist2(a: &Prompt, b: &Prompt) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Greedy farthest-point sampling of up to `n` prompts from `candidates`,
/// seeded with the candidate nearest to `centroid`. Ties go to the
/// lexicographically smaller `(w, h)`. Duplicate candidates are collapsed.
pub fn sample_prompts(candidates: &[Prompt], centroid: Prompt, n: usize) -> Result<Vec<Prompt>> {
    let mut pool: Vec<Prompt> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !pool.contains(c) {
            pool.push(*c);
        }
    }
    if pool.is_empty() {
        return Err(Error::NoVisibleSplats);
    }
    let pick = |score: &dyn Fn(&Prompt) -> f64, maximize: bool, used: &[bool]| -> usize {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in pool.iter().enumerate() {
            if used[i] {
                continue;
            }
            let s = score(p);
            let better = match best {
                None => true,
                Some((bi, bs)) => {
                    let strictly = if maximize { s > bs } else { s < bs };
                    strictly || (s == bs && lex_less(p, &pool[bi]))
                }
            };
            if better {
                best = Some((i, s));
            }
        }
        best.expect("pool has unused candidates").0
    };

    let mut used = vec![false; pool.len()];
    let first = pick(&|p| dist2(p, &centroid), false, &used);
    used[first] = true;
    let mut out = vec![pool[first]];
    let mut nearest: Vec<f64> = pool.iter().map(|p| dist2(p, &pool[first])).collect();
    while out.len() < n && out.len() < pool.len() {
        let next = pick(&|p| nearest[pool.iter().position(|q| q == p).unwrap()], true, &used);
        used[next] = true;
        out.push(pool[next]);
        for (i, p) in pool.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &pool[next]));
        }
    }
    Ok(out)
}

/// Intersection over union. Two empty masks have IoU one.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.check_dims(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Propagated,
    Segmenter,
    None,
}

/// Chooses the final mask. With a propagated mask the candidate closer to
/// the silhouette wins (ties keep the propagated one); without one the
/// segmenter mask is kept only when its IoU exceeds `tau_iou`.
pub fn refine_mask(
    propagated: Option<&Mask>,
    segmented: &Mask,
    silhouette: &Mask,
    tau_iou: f64,
) -> Result<(Option<Mask>, Provenance)> {
    let sam_iou = iou(segmented, silhouette)?;
    match propagated {
        Some(prop) => {
            if iou(prop, silhouette)? >= sam_iou {
                Ok((Some(prop.clone()), Provenance::Propagated))
            } else {
                Ok((Some(segmented.clone()), Provenance::Segmenter))
            }
        }
        None if sam_iou > tau_iou => Ok((Some(segmented.clone()), Provenance::Segmenter)),
        None => Ok((None, Provenance::None)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPair {
    pub view: usize,
    pub label: Label,
    pub provenance: Provenance,
    /// Segmenter error, when the pair fell back.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RefinementOutput {
    pub masks: Vec<MaskSet>,
    pub pairs: Vec<RefinedPair>,
}

impl RefinementOutput {
    pub fn failures(&self) -> impl Iterator<Item = &RefinedPair> {
        self.pairs.iter().filter(|p| p.failure.is_some())
    }
}

/// Refines every `(view, instance)` pair with at least one visible splat.
/// `propagated[k]` holds the propagated masks of `cameras[k]`.
pub fn refine_all(
    scene: &[Gaussian],
    cameras: &[Camera],
    propagated: &[MaskSet],
    segmenter: &dyn Segmenter,
    cfg: &RefinementConfig,
) -> Result<RefinementOutput> {
    cfg.validate()?;
    if cameras.len() != propagated.len() {
        return Err(Error::InvalidConfig(format!(
            "{} cameras but {} mask sets",
            cameras.len(),
            propagated.len()
        )));
    }
    let labels: Vec<Label> = instance_labels(scene).into_iter().collect();
    let centroids: Vec<Vec3> = labels
        .iter()
        .map(|&l| {
            let (sum, n) = scene
                .iter()
                .filter(|g| g.label == l)
                .fold((Vec3::zeros(), 0usize), |(s, n), g| (s + g.mean, n + 1));
            sum / n as f64
        })
        .collect();

    let per_view: Vec<(MaskSet, Vec<RefinedPair>)> = cameras
        .par_iter()
        .zip(propagated.par_iter())
        .map(|(camera, prop)| {
            let visible = visible_gaussians(scene, camera);
            let results: Vec<Option<(Label, Option<Mask>, RefinedPair)>> = labels
                .par_iter()
                .zip(centroids.par_iter())
                .map(|(&label, centroid)| {
                    refine_pair(scene, camera, prop, &visible, label, centroid, segmenter, cfg)
                })
                .collect::<Result<_>>()?;
            let mut set = MaskSet::new(prop.view, camera.width, camera.height, MaskStage::Refined);
            let mut pairs = Vec::new();
            for (label, mask, pair) in results.into_iter().flatten() {
                if let Some(m) = mask {
                    set.masks.push((label, m));
                }
                pairs.push(pair);
            }
            resolve_overlaps(&mut set, scene, camera);
            Ok((set, pairs))
        })
        .collect::<Result<_>>()?;

    let mut masks = Vec::with_capacity(per_view.len());
    let mut pairs = Vec::new();
    for (set, p) in per_view {
        masks.push(set);
        pairs.extend(p);
    }
    Ok(RefinementOutput { masks, pairs })
}

/// Makes the masks of a view disjoint. A pixel claimed by several masks goes
/// to the instance owning the pixel's argmax splat when that instance is a
/// claimant, otherwise to the smallest claiming label.
pub fn resolve_overlaps(set: &mut MaskSet, scene: &[Gaussian], camera: &Camera) {
    let n = set.width * set.height;
    let mut claims = vec![0u8; n];
    for (_, m) in &set.masks {
        for (c, &on) in claims.iter_mut().zip(&m.data) {
            *c = c.saturating_add(on as u8);
        }
    }
    if claims.iter().all(|&c| c <= 1) {
        return;
    }
    let ids = render(scene, camera, RenderMode::ArgmaxIds).ids;
    for i in (0..n).filter(|&i| claims[i] > 1) {
        let claimants: Vec<Label> = set.masks.iter().filter(|(_, m)| m.data[i]).map(|(l, _)| *l).collect();
        let owner = ids[i]
            .map(|g| scene[g].label)
            .filter(|l| claimants.contains(l))
            .unwrap_or_else(|| *claimants.iter().min().expect("pixel has claimants"));
        for (l, m) in set.masks.iter_mut() {
            if *l != owner {
                m.data[i] = false;
            }
        }
    }
    set.masks.retain(|(_, m)| !m.is_empty());
}

#[allow(clippy::too_many_arguments)]
fn refine_pair(
    scene: &[Gaussian],
    camera: &Camera,
    prop: &MaskSet,
    visible: &[bool],
    label: Label,
    centroid: &Vec3,
    segmenter: &dyn Segmenter,
    cfg: &RefinementConfig,
) -> Result<Option<(Label, Option<Mask>, RefinedPair)>> {
    let members: Vec<Gaussian> = scene
        .iter()
        .zip(visible)
        .filter(|(g, &v)| v && g.label == label)
        .map(|(g, _)| g.clone())
        .collect();
    if members.is_empty() {
        return Ok(None);
    }
    let (width, height) = camera.dims();
    let candidates: Vec<Prompt> = members
        .iter()
        .filter_map(|g| project_point(camera, 0, &g.mean).ok().flatten())
        .filter(|p| p.in_bounds(width, height))
        .map(|p| [p.w, p.h])
        .collect();
    let previous = prop.get(label);
    let fallback = |reason: String| {
        let provenance = if previous.is_some() {
            Provenance::Propagated
        } else {
            Provenance::None
        };
        Some((
            label,
            previous.cloned(),
            RefinedPair {
                view: prop.view,
                label,
                provenance,
                failure: Some(reason),
            },
        ))
    };
    if candidates.is_empty() {
        return Ok(fallback("no splat center inside the image".into()));
    }
    let center = match project_point(camera, 0, centroid)? {
        Some(p) => [p.w, p.h],
        None => {
            let n = candidates.len() as f64;
            let s = candidates
                .iter()
                .fold([0.0, 0.0], |a, c| [a[0] + c[0], a[1] + c[1]]);
            [s[0] / n, s[1] / n]
        }
    };
    let prompts = sample_prompts(&candidates, center, cfg.n_prompts)?;
    let silhouette = full_opacity_mask(&members, camera, label);
    let segmented = match segmenter.segment(prop.view, &prompts) {
        Ok(m) if m.dims() == (width, height) => m,
        Ok(m) => {
            return Ok(fallback(format!(
                "segmenter returned a {}x{} mask for a {width}x{height} view",
                m.width, m.height
            )))
        }
        Err(e) => return Ok(fallback(e.to_string())),
    };
    let (mask, provenance) = refine_mask(previous, &segmented, &silhouette, cfg.tau_iou)?;
    Ok(Some((
        label,
        mask,
        RefinedPair {
            view: prop.view,
            label,
            provenance,
            failure: None,
        },
    )))
}
