//! Turns per-view instance masks with arbitrary ids into a globally labeled
//! point cloud and view-consistent masks.
//!
//! Views are swept in input order. For each view the dense cloud is
//! projected, filtered to the field of view and to points that agree with
//! the depth map, and intersected with the eroded masks. DBSCAN removes
//! isolated points from the masked set. Labels already known are warped into
//! the view as "virtual masks" and every local mask is remapped to the known
//! label it overlaps most, or to a fresh label when it overlaps none. Each
//! point then collects a vote for its mask's label; the first observation
//! gets a `1 + lambda_init` bonus so ties favour the earliest view. After
//! the sweep the votes are normalized and points whose winning share is
//! below `tau_label` are discarded.

pub mod dbscan;
pub mod morphology;

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::projection::{filter_in_bounds, filter_surface_consistent, ProjectedPoint};
use crate::scene::{
    Camera, DepthMap, Label, LabelWeights, Mask, MaskSet, MaskStage, PointCloud, Vec3, ViewAssets,
    BACKGROUND,
};
use crate::spatial::median_nn_distance;

pub use dbscan::dbscan_filter;
pub use morphology::{dilate, erode};

pub const DEFAULT_TAU_LABEL: f64 = 0.7;
pub const DEFAULT_LAMBDA_INIT: f64 = 0.5;
/// Disks drawn around warped points bleed a pixel or two past object
/// borders; overlaps below this fraction of a mask are treated as bleed.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.1;

/// Which labeled points are warped into the next view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpSource {
    /// Only the points labeled in the immediately preceding view.
    PreviousView,
    /// Every point labeled so far, with its current winning label.
    Accumulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub tau_depth: f64,
    pub tau_label: f64,
    pub lambda_init: f64,
    pub erosion_radius: usize,
    /// Fixed DBSCAN radius; `None` uses twice the median nearest-neighbor
    /// distance of each mask's points.
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: usize,
    /// Radius in pixels of the disk drawn for each warped point.
    pub splat_radius: f64,
    /// A local mask only inherits a known label when the overlap covers at
    /// least this fraction of its pixels; otherwise it is a new instance.
    /// Zero accepts any nonzero overlap.
    pub min_overlap: f64,
    pub warp_source: WarpSource,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            tau_depth: crate::projection::DEFAULT_TAU_DEPTH,
            tau_label: DEFAULT_TAU_LABEL,
            lambda_init: DEFAULT_LAMBDA_INIT,
            erosion_radius: 1,
            dbscan_eps: None,
            dbscan_min_pts: 8,
            splat_radius: 2.0,
            min_overlap: DEFAULT_MIN_OVERLAP,
            warp_source: WarpSource::Accumulated,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.tau_depth > 0.0) {
            return bad(format!("tau_depth must be positive, got {}", self.tau_depth));
        }
        if !(self.tau_label > 0.0 && self.tau_label <= 1.0) {
            return bad(format!("tau_label must be in (0, 1], got {}", self.tau_label));
        }
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return bad(format!(
                "lambda_init must be in (0, 1), got {}",
                self.lambda_init
            ));
        }
        if let Some(eps) = self.dbscan_eps {
            if !(eps > 0.0) {
                return bad(format!("dbscan eps must be positive, got {eps}"));
            }
        }
        if self.dbscan_min_pts == 0 {
            return bad("dbscan min_pts must be at least 1".into());
        }
        if !(self.splat_radius >= 0.0) {
            return bad(format!("splat radius must be non-negative, got {}", self.splat_radius));
        }
        if !(0.0..=1.0).contains(&self.min_overlap) {
            return bad(format!("min overlap must be in [0, 1], got {}", self.min_overlap));
        }
        Ok(())
    }
}

/// Allocates global labels and records each view's local-to-global map.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalLabelRegistry {
    next: Label,
    views: BTreeMap<usize, BTreeMap<u32, Label>>,
}

impl Default for GlobalLabelRegistry {
    fn default() -> Self {
        GlobalLabelRegistry {
            next: BACKGROUND + 1,
            views: BTreeMap::new(),
        }
    }
}

impl GlobalLabelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fresh(&mut self) -> Label {
        let l = self.next;
        self.next += 1;
        l
    }

    /// Number of labels handed out so far.
    pub fn label_count(&self) -> usize {
        (self.next - 1) as usize
    }

    pub fn record(&mut self, view: usize, local: u32, global: Label) {
        self.views.entry(view).or_default().insert(local, global);
    }

    pub fn mapping(&self, view: usize) -> Option<&BTreeMap<u32, Label>> {
        self.views.get(&view)
    }

    pub fn views(&self) -> impl Iterator<Item = (usize, &BTreeMap<u32, Label>)> {
        self.views.iter().map(|(&v, m)| (v, m))
    }
}

/// Groups projected points by the eroded mask containing their pixel.
/// Values are source point indices in input order.
pub fn assign_points_to_masks(
    projected: &[ProjectedPoint],
    masks: &MaskSet,
    erosion_radius: usize,
) -> BTreeMap<u32, Vec<usize>> {
    let mut out = BTreeMap::new();
    for (id, mask) in &masks.masks {
        let eroded = erode(mask, erosion_radius);
        let pts: Vec<usize> = projected
            .iter()
            .filter(|p| p.in_bounds(eroded.width, eroded.height))
            .filter(|p| {
                let (w, h) = p.pixel();
                eroded.get(w, h)
            })
            .map(|p| p.index)
            .collect();
        out.insert(*id, pts);
    }
    out
}

/// Draws each point that is in view and surface-consistent as a filled disk
/// of `radius` pixels around its pixel, one union per label.
pub fn warp_virtual_masks(
    points: &[Vec3],
    labels: &[Label],
    camera: &Camera,
    depth: &DepthMap,
    tau_depth: f64,
    radius: f64,
) -> Result<BTreeMap<Label, Mask>> {
    assert_eq!(points.len(), labels.len());
    let inb = filter_in_bounds(points, camera);
    let surface = filter_surface_consistent(&inb, depth, camera, tau_depth)?;
    let (width, height) = camera.dims();
    let r = radius.floor() as isize;
    let r2 = radius * radius;
    let mut out: BTreeMap<Label, Mask> = BTreeMap::new();
    for p in surface {
        let label = labels[p.index];
        if label == BACKGROUND {
            continue;
        }
        let mask = out
            .entry(label)
            .or_insert_with(|| Mask::new(width, height));
        let (cw, ch) = p.pixel();
        for dy in -r..=r {
            for dx in -r..=r {
                if (dx * dx + dy * dy) as f64 > r2 {
                    continue;
                }
                let (x, y) = (cw as isize + dx, ch as isize + dy);
                if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
    Ok(out)
}

/// For each local mask, the known label whose virtual mask overlaps it the
/// most (ties toward the smaller label), or `None` when the best overlap is
/// empty or covers less than `min_overlap` of the mask.
pub fn best_overlaps(
    virtual_masks: &BTreeMap<Label, Mask>,
    current: &MaskSet,
    min_overlap: f64,
) -> Vec<(u32, Option<Label>)> {
    current
        .masks
        .iter()
        .map(|(local, mask)| {
            let mut best: Option<(Label, usize)> = None;
            for (&label, vm) in virtual_masks {
                let n = vm.intersection_count(mask);
                if n > 0 && best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((label, n));
                }
            }
            let enough = |n: usize| n as f64 >= min_overlap * mask.count() as f64;
            (*local, best.filter(|&(_, n)| enough(n)).map(|(l, _)| l))
        })
        .collect()
}

/// Maps every local mask of `current` to a global label, registering fresh
/// labels (in mask order) for masks that overlap no virtual mask.
pub fn remap_labels(
    virtual_masks: &BTreeMap<Label, Mask>,
    current: &MaskSet,
    min_overlap: f64,
    registry: &mut GlobalLabelRegistry,
) -> BTreeMap<u32, Label> {
    let mut out = BTreeMap::new();
    for (local, best) in best_overlaps(virtual_masks, current, min_overlap) {
        let global = best.unwrap_or_else(|| registry.fresh());
        registry.record(current.view, local, global);
        out.insert(local, global);
    }
    out
}

/// Adds one vote per `(point, label)` assignment. An empty weight vector
/// receives `1 + lambda_init` instead of `1`.
pub fn update_weights(assignments: &[(usize, Label)], weights: &mut [LabelWeights], lambda_init: f64) {
    for &(p, label) in assignments {
        let w = &mut weights[p];
        if w.is_empty() {
            w.add(label, 1.0 + lambda_init);
        } else {
            w.add(label, 1.0);
        }
    }
}

/// Winning label per point, or `None` for unobserved points and points
/// whose normalized winning score is below `tau_label`.
pub fn finalize_labels(weights: &[LabelWeights], tau_label: f64) -> Vec<Option<Label>> {
    weights
        .iter()
        .map(|w| {
            let (label, score) = w.normalized().argmax()?;
            (score >= tau_label).then_some(label)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PropagationOutput {
    /// Kept points with their labels and vote weights.
    pub labeled: PointCloud,
    /// Index into the dense cloud of every point in `labeled`.
    pub source_indices: Vec<usize>,
    /// Label of every dense point; discarded and unobserved points are
    /// background.
    pub dense_labels: Vec<Label>,
    /// Raw vote weights of every dense point.
    pub weights: Vec<LabelWeights>,
    /// View-consistent masks keyed by global label, one set per view.
    pub masks: Vec<MaskSet>,
    pub registry: GlobalLabelRegistry,
}

/// Runs the full sweep over `views` in order.
pub fn propagate(
    views: &[ViewAssets],
    dense: &PointCloud,
    cfg: &PropagationConfig,
) -> Result<PropagationOutput> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidConfig("propagation needs at least one view".into()));
    }
    if dense.is_empty() {
        return Err(Error::InvalidConfig("dense point cloud is empty".into()));
    }
    for v in views {
        v.camera.validate()?;
        v.masks.validate()?;
        if (v.masks.width, v.masks.height) != v.camera.dims() {
            return Err(Error::DimensionMismatch {
                expected: v.camera.dims(),
                got: (v.masks.width, v.masks.height),
            });
        }
    }

    let points = &dense.points;
    let mut registry = GlobalLabelRegistry::new();
    let mut weights = vec![LabelWeights::new(); points.len()];
    let mut previous: Vec<(usize, Label)> = Vec::new();

    for view in views {
        let inb = filter_in_bounds(points, &view.camera);
        let surface = filter_surface_consistent(&inb, &view.depth, &view.camera, cfg.tau_depth)?;
        let assigned = assign_points_to_masks(&surface, &view.masks, cfg.erosion_radius);

        // isolated points are judged within each mask, at that mask's own density
        let kept: BTreeMap<u32, BTreeSet<usize>> = assigned
            .iter()
            .map(|(&local, pts)| (local, isolated_point_filter(points, pts, cfg)))
            .collect();

        let (src_pts, src_labels): (Vec<Vec3>, Vec<Label>) = match cfg.warp_source {
            WarpSource::PreviousView => previous.iter().map(|&(p, l)| (points[p], l)).unzip(),
            WarpSource::Accumulated => weights
                .iter()
                .enumerate()
                .filter_map(|(p, w)| w.argmax().map(|(l, _)| (points[p], l)))
                .unzip(),
        };
        let virtual_masks = warp_virtual_masks(
            &src_pts,
            &src_labels,
            &view.camera,
            &view.depth,
            cfg.tau_depth,
            cfg.splat_radius,
        )?;
        let mapping = remap_labels(&virtual_masks, &view.masks, cfg.min_overlap, &mut registry);

        let assignments: Vec<(usize, Label)> = assigned
            .iter()
            .flat_map(|(local, pts)| {
                let label = mapping[local];
                let kept = &kept[local];
                pts.iter()
                    .filter(move |p| kept.contains(p))
                    .map(move |&p| (p, label))
            })
            .collect();
        update_weights(&assignments, &mut weights, cfg.lambda_init);
        previous = assignments;
    }

    let finals = finalize_labels(&weights, cfg.tau_label);
    let mut labeled_pts = Vec::new();
    let mut labeled_labels = Vec::new();
    let mut labeled_weights = Vec::new();
    let mut source_indices = Vec::new();
    let mut dense_labels = vec![BACKGROUND; points.len()];
    for (i, l) in finals.iter().enumerate() {
        if let Some(l) = *l {
            labeled_pts.push(points[i]);
            labeled_labels.push(l);
            labeled_weights.push(weights[i].clone());
            source_indices.push(i);
            dense_labels[i] = l;
        }
    }

    let masks = views
        .iter()
        .map(|v| {
            reproject_masks(
                &labeled_pts,
                &labeled_labels,
                v,
                cfg.tau_depth,
                cfg.splat_radius,
                cfg.min_overlap,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PropagationOutput {
        labeled: PointCloud {
            points: labeled_pts,
            labels: Some(labeled_labels),
            weights: Some(labeled_weights),
        },
        source_indices,
        dense_labels,
        weights,
        masks,
        registry,
    })
}

/// Subset of `candidates` (indices into `points`) that survive DBSCAN.
fn isolated_point_filter(points: &[Vec3], candidates: &[usize], cfg: &PropagationConfig) -> BTreeSet<usize> {
    if candidates.is_empty() {
        return BTreeSet::new();
    }
    let pts: Vec<Vec3> = candidates.iter().map(|&i| points[i]).collect();
    let eps = cfg.dbscan_eps.unwrap_or_else(|| {
        median_nn_distance(&pts)
            .map(|d| 2.0 * d)
            .filter(|&e| e > 0.0)
            .unwrap_or(f64::MIN_POSITIVE)
    });
    dbscan_filter(&pts, eps, cfg.dbscan_min_pts)
        .into_iter()
        .map(|k| candidates[k])
        .collect()
}

/// Relabels the raw masks of one view with the final labels: each local
/// mask takes the label of the labeled points it overlaps most, masks of
/// the same label are merged, and masks overlapping nothing are dropped.
/// Pixels claimed twice go to the smaller label, so the output masks are
/// pairwise disjoint.
pub fn reproject_masks(
    points: &[Vec3],
    labels: &[Label],
    view: &ViewAssets,
    tau_depth: f64,
    splat_radius: f64,
    min_overlap: f64,
) -> Result<MaskSet> {
    let (width, height) = view.camera.dims();
    let virtual_masks = warp_virtual_masks(
        points,
        labels,
        &view.camera,
        &view.depth,
        tau_depth,
        splat_radius,
    )?;
    let mut merged: BTreeMap<Label, Mask> = BTreeMap::new();
    for ((_, best), (_, mask)) in best_overlaps(&virtual_masks, &view.masks, min_overlap)
        .into_iter()
        .zip(&view.masks.masks)
    {
        if let Some(label) = best {
            merged
                .entry(label)
                .or_insert_with(|| Mask::new(width, height))
                .union_with(mask);
        }
    }
    let mut claimed = Mask::new(width, height);
    let mut out = MaskSet::new(view.masks.view, width, height, MaskStage::Propagated);
    for (label, mut mask) in merged {
        for (m, c) in mask.data.iter_mut().zip(claimed.data.iter_mut()) {
            if *m && *c {
                *m = false;
            } else if *m {
                *c = true;
            }
        }
        if !mask.is_empty() {
            out.masks.push((label, mask));
        }
    }
    Ok(out)
}
