//! End-to-end stages: synthetic benchmark assembly, label splitting,
//! scene labeling, mask refinement plus merging, and evaluation.

use crate::error::{Error, Result};
use crate::merging::{assemble_scene, AssembledScene, MergeConfig, TrainingView};
use crate::metrics::{evaluate, transfer_labels, EvalReport, Matching};
use crate::propagation::{propagate, PropagationConfig, PropagationOutput};
use crate::refinement::{refine_all, RefinementConfig, RefinementOutput, Segmenter};
use crate::scene::{Gaussian, Label, MaskSet, PointCloud, ViewAssets, BACKGROUND};
use crate::synth::{corrupt_masks, generate_scene, render_gt_views, SynthSpec};

/// A generated scene with its views (raw, corrupted masks), the clean
/// ground-truth masks, the dense cloud fed to propagation and the labeled
/// ground-truth points used for evaluation.
#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub scene: Vec<Gaussian>,
    pub views: Vec<ViewAssets>,
    pub gt_masks: Vec<MaskSet>,
    pub dense: PointCloud,
    pub gt_points: PointCloud,
}

pub fn synth_benchmark(spec: &SynthSpec) -> Result<SynthBenchmark> {
    let (scene, cameras) = generate_scene(spec)?;
    let mut views = render_gt_views(&scene, &cameras);
    let gt_masks: Vec<MaskSet> = views.iter().map(|v| v.masks.clone()).collect();
    let raw = corrupt_masks(&gt_masks, &spec.corruption, spec.seed)?;
    for (v, m) in views.iter_mut().zip(raw) {
        v.masks = m;
    }
    let means: Vec<_> = scene.iter().map(|g| g.mean).collect();
    let labels: Vec<Label> = scene.iter().map(|g| g.label).collect();
    Ok(SynthBenchmark {
        dense: PointCloud::new(means.clone()),
        gt_points: PointCloud::with_labels(means, labels),
        scene,
        views,
        gt_masks,
    })
}

/// Every `subsample`-th view, starting with the first.
pub fn subsample_views(views: &[ViewAssets], subsample: usize) -> Result<Vec<ViewAssets>> {
    if subsample == 0 {
        return Err(Error::InvalidConfig("subsample must be at least 1".into()));
    }
    Ok(views.iter().step_by(subsample).cloned().collect())
}

pub fn split(views: &[ViewAssets], dense: &PointCloud, cfg: &PropagationConfig) -> Result<PropagationOutput> {
    propagate(views, dense, cfg)
}

fn labels_of(cloud: &PointCloud, what: &str) -> Result<Vec<Label>> {
    cloud
        .labels
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("{what} carries no labels")))
}

/// Scores a labeled cloud against labeled ground-truth points, each ground
/// truth point taking the label of its nearest labeled point.
pub fn evaluate_points(labeled: &PointCloud, gt: &PointCloud, mode: Matching) -> Result<EvalReport> {
    let pred = transfer_labels(&labeled.points, &labels_of(labeled, "prediction")?, &gt.points)?;
    evaluate(&pred, &labels_of(gt, "ground truth")?, mode)
}

/// Each Gaussian takes the label of the nearest labeled point.
pub fn label_gaussians(scene: &[Gaussian], labeled: &PointCloud) -> Result<Vec<Gaussian>> {
    let means: Vec<_> = scene.iter().map(|g| g.mean).collect();
    let labels = transfer_labels(&labeled.points, &labels_of(labeled, "labeled cloud")?, &means)?;
    Ok(scene
        .iter()
        .zip(labels)
        .map(|(g, l)| g.clone().with_label(l))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SplatOutput {
    pub refinement: RefinementOutput,
    pub assembled: AssembledScene,
}

/// Refines the propagated masks with `segmenter`, then merges the labeled
/// instances of `scene` against the refined masks. Without a segmenter the
/// propagated masks are used as they are.
pub fn splat(
    scene: &[Gaussian],
    views: &[ViewAssets],
    propagated: &[MaskSet],
    segmenter: Option<&dyn Segmenter>,
    refine_cfg: &RefinementConfig,
    merge_cfg: &MergeConfig,
) -> Result<SplatOutput> {
    if propagated.len() != views.len() {
        return Err(Error::InvalidConfig(format!(
            "{} mask sets for {} views",
            propagated.len(),
            views.len()
        )));
    }
    if scene.iter().all(|g| g.label == BACKGROUND) {
        log::warn!("scene carries no instance labels; merging background only");
    }
    let cameras: Vec<_> = views.iter().map(|v| v.camera.clone()).collect();
    let refinement = match segmenter {
        Some(seg) => refine_all(scene, &cameras, propagated, seg, refine_cfg)?,
        None => RefinementOutput {
            masks: propagated.to_vec(),
            pairs: Vec::new(),
        },
    };
    for f in refinement.failures() {
        log::warn!(
            "segmenter failed on view {} label {}: {}",
            f.view,
            f.label,
            f.failure.as_deref().unwrap_or("unknown")
        );
    }
    let training: Vec<TrainingView> = views
        .iter()
        .zip(&refinement.masks)
        .map(|(v, m)| TrainingView {
            camera: &v.camera,
            image: &v.image,
            masks: m,
        })
        .collect();
    let assembled = assemble_scene(scene, &training, merge_cfg)?;
    Ok(SplatOutput { refinement, assembled })
}

/// Per-pixel labels of mask sets, all views concatenated. Unmasked pixels
/// are background; masks are assumed disjoint, later ones winning.
pub fn mask_pixel_labels(sets: &[MaskSet]) -> Vec<Label> {
    let mut out = Vec::new();
    for set in sets {
        let mut px = vec![BACKGROUND; set.width * set.height];
        for (id, m) in &set.masks {
            for (p, &on) in px.iter_mut().zip(&m.data) {
                if on {
                    *p = *id;
                }
            }
        }
        out.extend(px);
    }
    out
}

/// Instance IoU of predicted masks against ground-truth masks, counted
/// over the pixels of every view.
pub fn evaluate_masks(pred: &[MaskSet], gt: &[MaskSet], mode: Matching) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidConfig(format!("{} predicted views for {} ground-truth views", pred.len(), gt.len())));
    }
    for (p, g) in pred.iter().zip(gt) {
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::DimensionMismatch {
                expected: (g.width, g.height),
                got: (p.width, p.height),
            });
        }
    }
    evaluate(&mask_pixel_labels(pred), &mask_pixel_labels(gt), mode)
}
