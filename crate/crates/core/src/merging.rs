//! Assembly of per-instance splat sets into one scene.
//!
//! Instances whose bounding boxes overlap most are merged first; pairs that
//! share no instance are merged in the same round. After every merge the
//! opacities of the merged group are reset and a short opacity/color
//! refinement against the training views removes splats that only looked
//! right in isolation.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{loss_and_gradients, Gradients};
use crate::scene::{instance_labels, Camera, Gaussian, Label, Mask, MaskSet, RgbImage, Vec3, BACKGROUND};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox3D {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox3D {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn union(&self, other: &BoundingBox3D) -> BoundingBox3D {
        BoundingBox3D {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// Box around every Gaussian's 3-sigma extent along its largest axis.
pub fn instance_bbox(gaussians: &[Gaussian]) -> Result<BoundingBox3D> {
    let mut it = gaussians.iter().map(|g| {
        let r = Vec3::repeat(3.0 * g.max_scale());
        (g.mean - r, g.mean + r)
    });
    let (mut min, mut max) = it.next().ok_or(Error::EmptyInstance)?;
    for (lo, hi) in it {
        min = min.inf(&lo);
        max = max.sup(&hi);
    }
    Ok(BoundingBox3D { min, max })
}

/// `entries[a][b]` is the fraction of instance `a`'s means inside the box
/// of instance `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionMatrix {
    pub ids: Vec<Label>,
    pub entries: Vec<Vec<f64>>,
    pub boxes: Vec<BoundingBox3D>,
}

impl CollisionMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, a: Label, b: Label) -> Option<f64> {
        let i = self.ids.iter().position(|&x| x == a)?;
        let j = self.ids.iter().position(|&x| x == b)?;
        Some(self.entries[i][j])
    }
}

pub fn collision_matrix(instances: &[(Label, &[Gaussian])]) -> Result<CollisionMatrix> {
    if instances.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let boxes: Vec<BoundingBox3D> = instances
        .iter()
        .map(|(_, g)| instance_bbox(g))
        .collect::<Result<_>>()?;
    let entries = instances
        .par_iter()
        .map(|(_, ga)| {
            boxes
                .iter()
                .map(|b| ga.iter().filter(|g| b.contains(&g.mean)).count() as f64 / ga.len() as f64)
                .collect()
        })
        .collect();
    Ok(CollisionMatrix {
        ids: instances.iter().map(|(l, _)| *l).collect(),
        entries,
        boxes,
    })
}

/// Merge rounds over instance ids. A merged pair continues under the
/// smaller of its two ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeSchedule {
    pub rounds: Vec<Vec<(Label, Label)>>,
}

/// Greedy schedule: each round repeatedly takes the unused pair with the
/// highest `max(C_ab, C_ba)`, ties to the lexicographically smaller pair.
/// Merged groups score against others by their best member. A round with
/// no overlapping pair at all pairs groups by nearest box centers instead.
pub fn plan_merges(c: &CollisionMatrix) -> MergeSchedule {
    // group id -> member indices into c.ids
    let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &id) in c.ids.iter().enumerate() {
        groups.entry(id).or_default().push(i);
    }
    let score = |a: &[usize], b: &[usize]| {
        let mut s: f64 = 0.0;
        for &i in a {
            for &j in b {
                s = s.max(c.entries[i][j]).max(c.entries[j][i]);
            }
        }
        s
    };
    let center = |a: &[usize]| {
        a.iter()
            .map(|&i| c.boxes[i])
            .reduce(|x, y| x.union(&y))
            .expect("groups are non-empty")
            .center()
    };

    let mut schedule = MergeSchedule::default();
    while groups.len() > 1 {
        let ids: Vec<Label> = groups.keys().copied().collect();
        let mut candidates: Vec<(f64, Label, Label)> = Vec::new();
        for (x, &a) in ids.iter().enumerate() {
            for &b in &ids[x + 1..] {
                let s = score(&groups[&a], &groups[&b]);
                if s > 0.0 {
                    candidates.push((s, a, b));
                }
            }
        }
        if candidates.is_empty() {
            for (x, &a) in ids.iter().enumerate() {
                let ca = center(&groups[&a]);
                for &b in &ids[x + 1..] {
                    // negated so that larger is better below
                    candidates.push((-(ca - center(&groups[&b])).norm(), a, b));
                }
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut used = std::collections::BTreeSet::new();
        let mut round = Vec::new();
        for (_, a, b) in candidates {
            if used.contains(&a) || used.contains(&b) {
                continue;
            }
            used.insert(a);
            used.insert(b);
            round.push((a, b));
        }
        for &(a, b) in &round {
            let members = groups.remove(&b).expect("scheduled group exists");
            groups.get_mut(&a).expect("scheduled group exists").extend(members);
        }
        schedule.rounds.push(round);
    }
    schedule
}

/// Concatenation of two instance sets with every opacity reset to zero.
pub fn merge_pair(a: &[Gaussian], b: &[Gaussian]) -> Vec<Gaussian> {
    a.iter()
        .chain(b)
        .map(|g| Gaussian {
            opacity: 0.0,
            ..g.clone()
        })
        .collect()
}

/// Mask-loss weight after `round` parallel merge rounds.
pub fn wmask_schedule(round: usize) -> f64 {
    // integer percent keeps the emitted values exact
    (5 + 10 * round.min(2)) as f64 / 100.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub steps: usize,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub prune_threshold: f64,
    /// Opacity the refinement starts from when a splat's opacity is below
    /// it; a fully transparent splat receives no gradient.
    pub opacity_floor: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            steps: 50,
            lr_opacity: 0.05,
            lr_color: 0.01,
            prune_threshold: 0.005,
            opacity_floor: 0.01,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_opacity >= 0.0
            && self.lr_color >= 0.0
            && (0.0..1.0).contains(&self.prune_threshold)
            && self.opacity_floor > 0.0
            && self.opacity_floor < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid merge configuration {self:?}")))
        }
    }
}

/// A training view: camera, photograph and refined masks.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub camera: &'a Camera,
    pub image: &'a RgbImage,
    pub masks: &'a MaskSet,
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    pub scene: Vec<Gaussian>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub pruned: usize,
    /// Views that contributed a color term.
    pub views_used: usize,
}

/// Mask of `label` in a view. Background is everything no instance claims.
fn label_mask(masks: &MaskSet, label: Label) -> Option<Mask> {
    if label == BACKGROUND {
        let mut claimed = Mask::new(masks.width, masks.height);
        for (_, m) in &masks.masks {
            claimed.union_with(m);
        }
        let m = Mask {
            width: masks.width,
            height: masks.height,
            data: claimed.data.iter().map(|&c| !c).collect(),
        };
        (!m.is_empty()).then_some(m)
    } else {
        masks.get(label).filter(|m| !m.is_empty()).cloned()
    }
}

struct ViewTerms {
    camera: Camera,
    target: RgbImage,
    /// (label, indices of that label in the scene, target mask)
    labels: Vec<(Vec<usize>, Mask)>,
}

struct Objective {
    views: Vec<ViewTerms>,
    rgb_weight: f64,
    mask_weight: f64,
}

impl Objective {
    fn new(scene: &[Gaussian], views: &[TrainingView], w_mask: f64) -> Result<Self> {
        let labels: Vec<Label> = {
            let mut l: Vec<Label> = instance_labels(scene).into_iter().collect();
            if scene.iter().any(|g| g.label == BACKGROUND) {
                l.insert(0, BACKGROUND);
            }
            l
        };
        let indices: Vec<Vec<usize>> = labels
            .iter()
            .map(|&l| (0..scene.len()).filter(|&i| scene[i].label == l).collect())
            .collect();
        let mut terms = Vec::new();
        let mut pairs = 0usize;
        for v in views {
            if v.image.dims() != v.camera.dims() {
                return Err(Error::DimensionMismatch {
                    expected: v.camera.dims(),
                    got: v.image.dims(),
                });
            }
            v.masks.validate()?;
            let mut union = Mask::new(v.camera.width, v.camera.height);
            let mut label_terms = Vec::new();
            for (l, idx) in labels.iter().zip(&indices) {
                if let Some(m) = label_mask(v.masks, *l) {
                    m.check_dims(&union)?;
                    union.union_with(&m);
                    label_terms.push((idx.clone(), m));
                }
            }
            if union.is_empty() {
                continue;
            }
            pairs += label_terms.len();
            terms.push(ViewTerms {
                camera: v.camera.clone(),
                target: v.image.masked(&union),
                labels: label_terms,
            });
        }
        let rgb_weight = if terms.is_empty() {
            0.0
        } else {
            1.0 / terms.len() as f64
        };
        let mask_weight = if pairs == 0 { 0.0 } else { w_mask / pairs as f64 };
        Ok(Objective {
            views: terms,
            rgb_weight,
            mask_weight,
        })
    }

    fn evaluate(&self, scene: &[Gaussian]) -> Result<(f64, Gradients)> {
        let per_view: Vec<(f64, Gradients)> = self
            .views
            .par_iter()
            .map(|v| {
                let (loss, mut grads) =
                    loss_and_gradients(scene, &v.camera, Some((&v.target, self.rgb_weight)), None)?;
                let mut total = loss.total;
                if self.mask_weight > 0.0 {
                    for (idx, mask) in &v.labels {
                        let subset: Vec<Gaussian> = idx.iter().map(|&i| scene[i].clone()).collect();
                        let (l, g) =
                            loss_and_gradients(&subset, &v.camera, None, Some((mask, self.mask_weight)))?;
                        total += l.total;
                        for (k, &i) in idx.iter().enumerate() {
                            grads.opacity[i] += g.opacity[k];
                        }
                    }
                }
                Ok((total, grads))
            })
            .collect::<Result<_>>()?;
        let mut grads = Gradients::zeros(scene.len());
        let mut total = 0.0;
        for (l, g) in per_view {
            total += l;
            grads.add_scaled(&g, 1.0);
        }
        Ok((total, grads))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lrs: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
            params[i] -= lrs[i] * update;
        }
    }
}

/// Optimizes opacity (in logit space) and color of `scene` against the
/// training views with loss `mean_k l_rgb + w_mask * mean_(k,l) l_mask`,
/// keeps the best iterate and prunes nearly transparent splats.
///
/// The color term compares against each image restricted to the union of
/// the masks of the labels present. Background's mask is the complement of
/// all masks in the view. Views without any such mask are skipped.
pub fn boundary_refine(
    scene: &[Gaussian],
    views: &[TrainingView],
    w_mask: f64,
    cfg: &MergeConfig,
) -> Result<RefineReport> {
    cfg.validate()?;
    if !w_mask.is_finite() || w_mask < 0.0 {
        return Err(Error::InvalidConfig(format!("w_mask must be non-negative, got {w_mask}")));
    }
    let objective = Objective::new(scene, views, w_mask)?;
    let n = scene.len();
    let original: Vec<f64> = scene.iter().map(|g| g.opacity).collect();
    let logits0: Vec<f64> = original.iter().map(|&a| logit(a.clamp(cfg.opacity_floor, 1.0 - 1e-6))).collect();

    // params: n logits followed by 3n color channels
    let mut params: Vec<f64> = logits0.clone();
    params.extend(scene.iter().flat_map(|g| [g.color.x, g.color.y, g.color.z]));
    let lrs: Vec<f64> = (0..4 * n)
        .map(|i| if i < n { cfg.lr_opacity } else { cfg.lr_color })
        .collect();

    let apply = |params: &[f64]| -> Vec<Gaussian> {
        scene
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let opacity = if params[i] == logits0[i] && original[i] >= cfg.opacity_floor {
                    original[i]
                } else {
                    sigmoid(params[i])
                };
                Gaussian {
                    opacity,
                    color: Vec3::new(params[n + 3 * i], params[n + 3 * i + 1], params[n + 3 * i + 2]),
                    ..g.clone()
                }
            })
            .collect()
    };

    let mut adam = Adam::new(4 * n);
    let mut flat = vec![0.0; 4 * n];
    let mut current = apply(&params);
    let mut initial = None;
    let mut best: Option<(f64, Vec<Gaussian>)> = None;
    for step in 0..=cfg.steps {
        let (loss, grads) = objective.evaluate(&current)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        log::trace!("boundary refinement step {step}: loss {loss:.6}");
        initial.get_or_insert(loss);
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, current.clone()));
        }
        if step == cfg.steps || grads.is_zero() {
            break;
        }
        for i in 0..n {
            let a = current[i].opacity;
            flat[i] = grads.opacity[i] * a * (1.0 - a);
            for ch in 0..3 {
                flat[n + 3 * i + ch] = grads.color[i][ch];
            }
        }
        adam.step(&mut params, &flat, &lrs);
        for c in &mut params[n..] {
            *c = c.clamp(0.0, 1.0);
        }
        current = apply(&params);
    }
    let (final_loss, refined) = best.expect("at least one evaluation");
    let before = refined.len();
    let kept: Vec<Gaussian> = refined
        .into_iter()
        .filter(|g| g.opacity >= cfg.prune_threshold)
        .collect();
    Ok(RefineReport {
        pruned: before - kept.len(),
        scene: kept,
        initial_loss: initial.expect("at least one evaluation"),
        final_loss,
        views_used: objective.views.len(),
    })
}

/// Log of one executed merge.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub round: usize,
    pub pair: (Label, Label),
    pub w_mask: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub pruned: usize,
}

#[derive(Debug, Clone)]
pub struct AssembledScene {
    pub scene: Vec<Gaussian>,
    pub merges: Vec<MergeRecord>,
}

/// Merges all instances of `scene` into one refined scene. Background
/// Gaussians join as a single pseudo-instance after every instance has been
/// merged.
pub fn assemble_scene(scene: &[Gaussian], views: &[TrainingView], cfg: &MergeConfig) -> Result<AssembledScene> {
    cfg.validate()?;
    let mut groups: BTreeMap<Label, Vec<Gaussian>> = BTreeMap::new();
    for l in instance_labels(scene) {
        groups.insert(l, scene.iter().filter(|g| g.label == l).cloned().collect());
    }
    let background: Vec<Gaussian> = scene.iter().filter(|g| g.label == BACKGROUND).cloned().collect();
    let mut merges = Vec::new();
    let mut round = 0usize;

    let refine_pair = |a: Label, b: Label, ga: &[Gaussian], gb: &[Gaussian], round: usize| {
        let w = wmask_schedule(round);
        let merged = merge_pair(ga, gb);
        let report = boundary_refine(&merged, views, w, cfg)?;
        log::debug!(
            "merge round {round}: ({a}, {b}) loss {:.6} -> {:.6}, pruned {}",
            report.initial_loss,
            report.final_loss,
            report.pruned
        );
        Ok::<_, Error>((
            report.scene,
            MergeRecord {
                round,
                pair: (a, b),
                w_mask: w,
                initial_loss: report.initial_loss,
                final_loss: report.final_loss,
                pruned: report.pruned,
            },
        ))
    };

    while groups.len() > 1 {
        let members: Vec<(Label, &[Gaussian])> = groups.iter().map(|(l, g)| (*l, g.as_slice())).collect();
        let c = collision_matrix(&members)?;
        let plan = plan_merges(&c);
        let pairs = plan.rounds.into_iter().next().unwrap_or_default();
        let results: Vec<(Vec<Gaussian>, MergeRecord)> = pairs
            .par_iter()
            .map(|&(a, b)| refine_pair(a, b, &groups[&a], &groups[&b], round))
            .collect::<Result<_>>()?;
        for ((a, b), (merged, record)) in pairs.iter().zip(results) {
            groups.remove(b);
            merges.push(record);
            if merged.is_empty() {
                // everything pruned; the group carries on empty-handed
                groups.remove(a);
            } else {
                groups.insert(*a, merged);
            }
        }
        round += 1;
    }

    let mut out: Vec<Gaussian> = groups.into_values().next().unwrap_or_default();
    if !background.is_empty() {
        if out.is_empty() {
            out = background;
        } else {
            let first = out.iter().map(|g| g.label).min().unwrap_or(BACKGROUND);
            let (merged, record) = refine_pair(BACKGROUND, first, &background, &out, round)?;
            merges.push(record);
            out = merged;
        }
    }
    Ok(AssembledScene { scene: out, merges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render, RenderMode};
    use crate::scene::{MaskStage, Quat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(x: f64, y: f64, z: f64, s: f64) -> Gaussian {
        Gaussian::isotropic(Vec3::new(x, y, z), s, 0.8, Vec3::new(0.5, 0.5, 0.5))
    }

    #[test]
    fn bbox_examples() {
        let b = instance_bbox(&[g(0.0, 0.0, 0.0, 0.1)]).unwrap();
        assert!((b.min - Vec3::repeat(-0.3)).norm() < 1e-15);
        assert!((b.max - Vec3::repeat(0.3)).norm() < 1e-15);
        let b = instance_bbox(&[g(0.0, 0.0, 0.0, 0.1), g(1.0, 0.0, 0.0, 0.1)]).unwrap();
        assert!((b.min.x + 0.3).abs() < 1e-15 && (b.max.x - 1.3).abs() < 1e-15);
        assert!(matches!(instance_bbox(&[]), Err(Error::EmptyInstance)));
    }

    #[test]
    fn bbox_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gs: Vec<Gaussian> = (0..100)
            .map(|_| {
                Gaussian::new(
                    Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                    Vec3::new(rng.random_range(0.01..0.1), rng.random_range(0.01..0.1), rng.random_range(0.01..0.1)),
                    Quat::identity(),
                    0.5,
                    Vec3::zeros(),
                )
            })
            .collect();
        let b = instance_bbox(&gs).unwrap();
        for axis in 0..3 {
            let lo = gs.iter().map(|g| g.mean[axis] - 3.0 * g.max_scale()).fold(f64::INFINITY, f64::min);
            let hi = gs.iter().map(|g| g.mean[axis] + 3.0 * g.max_scale()).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((b.min[axis], b.max[axis]), (lo, hi));
        }
    }

    #[test]
    fn collision_examples() {
        let a: Vec<Gaussian> = (0..4).map(|i| g(i as f64, 0.0, 0.0, 0.01)).collect();
        let b = vec![g(0.0, 0.0, 0.0, 0.1)];
        let far = vec![g(50.0, 0.0, 0.0, 0.1)];
        let c = collision_matrix(&[(1, &a), (2, &b), (3, &far)]).unwrap();
        assert_eq!(c.get(1, 2), Some(0.25));
        assert_eq!(c.get(2, 1), Some(1.0));
        assert_eq!(c.get(1, 3), Some(0.0));
        for i in 0..3 {
            assert_eq!(c.entries[i][i], 1.0);
        }
        // duplicating every Gaussian leaves the fractions unchanged
        let a2: Vec<Gaussian> = a.iter().chain(&a).cloned().collect();
        let c2 = collision_matrix(&[(1, &a2), (2, &b), (3, &far)]).unwrap();
        assert_eq!(c.entries, c2.entries);
    }

    fn matrix(entries: Vec<Vec<f64>>) -> CollisionMatrix {
        let n = entries.len();
        CollisionMatrix {
            ids: (1..=n as Label).collect(),
            boxes: (0..n)
                .map(|i| BoundingBox3D {
                    min: Vec3::new(i as f64 * 10.0, 0.0, 0.0),
                    max: Vec3::new(i as f64 * 10.0 + 1.0, 1.0, 1.0),
                })
                .collect(),
            entries,
        }
    }

    #[test]
    fn plan_examples() {
        let two = matrix(vec![vec![1.0, 0.3], vec![0.1, 1.0]]);
        assert_eq!(plan_merges(&two).rounds, vec![vec![(1, 2)]]);

        let four = matrix(vec![
            vec![1.0, 0.5, 0.0, 0.0],
            vec![0.5, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.2],
            vec![0.0, 0.0, 0.2, 1.0],
        ]);
        // the disjoint groups are then joined by distance
        assert_eq!(plan_merges(&four).rounds, vec![vec![(1, 2), (3, 4)], vec![(1, 3)]]);

        let chain = matrix(vec![vec![1.0, 0.4, 0.0], vec![0.4, 1.0, 0.4], vec![0.0, 0.4, 1.0]]);
        assert_eq!(plan_merges(&chain).rounds, vec![vec![(1, 2)], vec![(1, 3)]]);

        let one = matrix(vec![vec![1.0]]);
        assert!(plan_merges(&one).rounds.is_empty());
    }

    #[test]
    fn disjoint_instances_pair_by_distance() {
        // centers at x = 0.5, 10.5, 20.5
        let c = matrix(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(plan_merges(&c).rounds, vec![vec![(1, 2)], vec![(1, 3)]]);
    }

    #[test]
    fn plan_terminates_and_rounds_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..9);
            let entries: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i == j {
                                1.0
                            } else if rng.random_bool(0.3) {
                                rng.random_range(0.0..1.0)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            let plan = plan_merges(&matrix(entries));
            let mut count = n;
            for round in &plan.rounds {
                let mut seen = std::collections::BTreeSet::new();
                for &(a, b) in round {
                    assert!(a < b && seen.insert(a) && seen.insert(b));
                }
                assert!(!round.is_empty());
                count -= round.len();
            }
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn merge_pair_resets_opacity() {
        let a: Vec<Gaussian> = (0..3).map(|i| g(i as f64, 0.0, 0.0, 0.1).with_label(1)).collect();
        let b: Vec<Gaussian> = (0..5).map(|i| g(i as f64, 1.0, 0.0, 0.1).with_label(2)).collect();
        let m = merge_pair(&a, &b);
        assert_eq!(m.len(), 8);
        assert!(m.iter().all(|g| g.opacity == 0.0));
        assert_eq!(m.iter().filter(|g| g.label == 1).count(), 3);
        assert_eq!(merge_pair(&a, &[]).len(), 3);
    }

    #[test]
    fn wmask_values() {
        let w: Vec<f64> = (0..4).map(wmask_schedule).collect();
        assert_eq!(w, vec![0.05, 0.15, 0.25, 0.25]);
        assert_eq!(wmask_schedule(9), 0.25);
    }

    fn camera() -> Camera {
        Camera::new(40.0, 40.0, 8.0, 8.0, 16, 16, Quat::identity(), Vec3::zeros()).unwrap()
    }

    #[test]
    fn refine_is_noop_on_matching_targets() {
        let cam = camera();
        let scene = vec![
            Gaussian::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.7, Vec3::new(0.8, 0.2, 0.1)).with_label(1),
            Gaussian::isotropic(Vec3::new(0.1, 0.05, 2.5), 0.1, 0.6, Vec3::new(0.1, 0.9, 0.3)).with_label(2),
        ];
        let image = render(&scene, &cam, RenderMode::Rgb).rgb;
        let masks = MaskSet {
            view: 0,
            width: 16,
            height: 16,
            stage: MaskStage::Refined,
            masks: vec![(1, Mask::from_fn(16, 16, |_, _| true))],
        };
        let view = TrainingView {
            camera: &cam,
            image: &image,
            masks: &masks,
        };
        let out = boundary_refine(&scene, &[view], 0.0, &MergeConfig::default()).unwrap();
        assert_eq!(out.scene, scene);
        assert_eq!(out.initial_loss, 0.0);
    }

    #[test]
    fn single_white_splat_gains_opacity() {
        let cam = camera();
        let white = Vec3::new(1.0, 1.0, 1.0);
        let truth = vec![Gaussian::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.9, white).with_label(1)];
        let image = render(&truth, &cam, RenderMode::Rgb).rgb;
        let masks = MaskSet {
            view: 0,
            width: 16,
            height: 16,
            stage: MaskStage::Refined,
            masks: vec![(1, Mask::from_fn(16, 16, |_, _| true))],
        };
        let view = TrainingView {
            camera: &cam,
            image: &image,
            masks: &masks,
        };
        let mut opacity = 0.0;
        let mut loss = f64::INFINITY;
        let mut scene = merge_pair(&truth, &[]);
        for _ in 0..3 {
            let cfg = MergeConfig {
                steps: 10,
                ..MergeConfig::default()
            };
            let out = boundary_refine(&scene, &[view], 0.0, &cfg).unwrap();
            assert!(out.scene[0].opacity > opacity);
            assert!(out.final_loss < loss);
            opacity = out.scene[0].opacity;
            loss = out.final_loss;
            scene = out.scene;
        }
    }

    #[test]
    fn single_instance_is_identity() {
        let cam = camera();
        let scene = vec![g(0.0, 0.0, 2.0, 0.1).with_label(4)];
        let image = RgbImage::new(16, 16);
        let masks = MaskSet::new(0, 16, 16, MaskStage::Refined);
        let views = [TrainingView {
            camera: &cam,
            image: &image,
            masks: &masks,
        }];
        let out = assemble_scene(&scene, &views, &MergeConfig::default()).unwrap();
        assert_eq!(out.scene, scene);
        assert!(out.merges.is_empty());
    }
}
