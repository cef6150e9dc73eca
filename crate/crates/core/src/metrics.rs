//! Label transfer to ground-truth points and instance IoU metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Gaussian, Label, Vec3, BACKGROUND};
use crate::spatial::KdTree;

/// Each target takes the label of its nearest source point (ties to the
/// smaller source index). An empty source labels everything background.
pub fn transfer_labels(sources: &[Vec3], labels: &[Label], targets: &[Vec3]) -> Result<Vec<Label>> {
    if sources.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} points but {} labels",
            sources.len(),
            labels.len()
        )));
    }
    let tree = KdTree::new(sources);
    Ok(targets
        .par_iter()
        .map(|q| tree.nearest(q).map_or(BACKGROUND, |(i, _)| labels[i]))
        .collect())
}

/// Labels of `gt_points` taken from the nearest Gaussian mean.
pub fn transfer_labels_to_gt(scene: &[Gaussian], gt_points: &[Vec3]) -> Vec<Label> {
    let means: Vec<Vec3> = scene.iter().map(|g| g.mean).collect();
    let labels: Vec<Label> = scene.iter().map(|g| g.label).collect();
    transfer_labels(&means, &labels, gt_points).expect("lengths agree by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matching {
    /// Each prediction matches at most one ground-truth instance, greedily
    /// by descending IoU.
    #[default]
    OneToOne,
    /// Each ground-truth instance takes its best prediction.
    ManyToOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScore {
    pub gt: Label,
    pub matched: Option<Label>,
    pub iou: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub instances: Vec<InstanceScore>,
    pub miou: f64,
    pub macc25: f64,
    pub macc50: f64,
}

impl EvalReport {
    /// Percentage of instances with IoU of at least `x` percent.
    pub fn macc(&self, x: f64) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        let hit = self.instances.iter().filter(|s| s.iou >= x / 100.0).count();
        100.0 * hit as f64 / self.instances.len() as f64
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8}", "gt", "pred", "points", "IoU");
        for i in &self.instances {
            let pred = i.matched.map_or("-".to_string(), |p| p.to_string());
            let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8.4}", i.gt, pred, i.points, i.iou);
        }
        let _ = writeln!(s, "{:>8} {:>8} {:>8}", "mIoU", "mAcc25", "mAcc50");
        let _ = writeln!(s, "{:>8.2} {:>8.2} {:>8.2}", self.miou, self.macc25, self.macc50);
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = format!(
            "miou={}\nmacc25={}\nmacc50={}\ninstances={}\n",
            self.miou,
            self.macc25,
            self.macc50,
            self.instances.len()
        );
        for i in &self.instances {
            let _ = writeln!(s, "iou.{}={}", i.gt, i.iou);
        }
        s
    }
}

/// Intersection counts and sizes of every ground-truth and predicted
/// instance, background excluded on both sides.
struct Overlaps {
    gt_sizes: BTreeMap<Label, usize>,
    pred_sizes: BTreeMap<Label, usize>,
    /// First point index carrying each prediction; breaks IoU ties without
    /// depending on the label values.
    pred_first: BTreeMap<Label, usize>,
    inter: BTreeMap<(Label, Label), usize>,
}

impl Overlaps {
    fn new(pred: &[Label], gt: &[Label]) -> Self {
        let mut o = Overlaps {
            gt_sizes: BTreeMap::new(),
            pred_sizes: BTreeMap::new(),
            pred_first: BTreeMap::new(),
            inter: BTreeMap::new(),
        };
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            o.pred_first.entry(p).or_insert(i);
            if g != BACKGROUND {
                *o.gt_sizes.entry(g).or_default() += 1;
            }
            if p != BACKGROUND {
                *o.pred_sizes.entry(p).or_default() += 1;
            }
            if g != BACKGROUND && p != BACKGROUND {
                *o.inter.entry((g, p)).or_default() += 1;
            }
        }
        o
    }

    fn iou(&self, g: Label, p: Label) -> f64 {
        let i = self.inter.get(&(g, p)).copied().unwrap_or(0);
        let u = self.gt_sizes[&g] + self.pred_sizes[&p] - i;
        i as f64 / u as f64
    }

    /// Ground-truth label -> (matched prediction, IoU).
    fn matches(&self, mode: Matching) -> BTreeMap<Label, (Label, f64)> {
        let mut out = BTreeMap::new();
        match mode {
            Matching::ManyToOne => {
                for &(g, p) in self.inter.keys() {
                    let v = self.iou(g, p);
                    let e = out.entry(g).or_insert((p, v));
                    if v > e.1 || (v == e.1 && self.pred_first[&p] < self.pred_first[&e.0]) {
                        *e = (p, v);
                    }
                }
            }
            Matching::OneToOne => {
                let mut pairs: Vec<(f64, Label, Label)> =
                    self.inter.keys().map(|&(g, p)| (self.iou(g, p), g, p)).collect();
                pairs.sort_by(|a, b| {
                    b.0.total_cmp(&a.0)
                        .then(a.1.cmp(&b.1))
                        .then(self.pred_first[&a.2].cmp(&self.pred_first[&b.2]))
                });
                let mut used = BTreeSet::new();
                for (v, g, p) in pairs {
                    if out.contains_key(&g) || used.contains(&p) {
                        continue;
                    }
                    used.insert(p);
                    out.insert(g, (p, v));
                }
            }
        }
        out
    }
}

/// Per-instance IoU of `pred` against `gt` over the same points. Instances
/// are the non-background ground-truth labels; an unmatched instance scores
/// zero. With no ground-truth instance every aggregate is zero.
pub fn evaluate(pred: &[Label], gt: &[Label], mode: Matching) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predicted labels for {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    let o = Overlaps::new(pred, gt);
    let matches = o.matches(mode);
    let instances: Vec<InstanceScore> = o
        .gt_sizes
        .iter()
        .map(|(&g, &points)| {
            let m = matches.get(&g);
            InstanceScore {
                gt: g,
                matched: m.map(|x| x.0),
                iou: m.map_or(0.0, |x| x.1),
                points,
            }
        })
        .collect();
    let miou = if instances.is_empty() {
        0.0
    } else {
        100.0 * instances.iter().map(|s| s.iou).sum::<f64>() / instances.len() as f64
    };
    let mut report = EvalReport {
        instances,
        miou,
        macc25: 0.0,
        macc50: 0.0,
    };
    report.macc25 = report.macc(25.0);
    report.macc50 = report.macc(50.0);
    Ok(report)
}

/// Fraction of points whose predicted label, mapped through the one-to-one
/// matching, equals the ground truth. Background maps to background and
/// unmatched predictions never agree.
pub fn point_agreement(pred: &[Label], gt: &[Label]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidConfig("label lists differ in length".into()));
    }
    if gt.is_empty() {
        return Ok(1.0);
    }
    let o = Overlaps::new(pred, gt);
    let map: BTreeMap<Label, Label> = o
        .matches(Matching::OneToOne)
        .into_iter()
        .map(|(g, (p, _))| (p, g))
        .collect();
    let agree = pred
        .iter()
        .zip(gt)
        .filter(|(&p, &g)| {
            if p == BACKGROUND {
                g == BACKGROUND
            } else {
                map.get(&p) == Some(&g)
            }
        })
        .count();
    Ok(agree as f64 / gt.len() as f64)
}
