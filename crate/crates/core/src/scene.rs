//! Domain types shared by every stage of the pipeline.
//!
//! Coordinates follow the usual computer-vision convention: the camera looks
//! down its +z axis, +x points right and +y points down in the image. Pixel
//! `(w, h)` covers the continuous square `[w, w + 1) x [h, h + 1)`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Global instance id. `0` is reserved for background.
pub type Label = u32;

pub const BACKGROUND: Label = 0;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Builds a unit quaternion from `wxyz` components without renormalizing,
/// after checking the norm is within `1e-6` of one.
pub fn quat_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Quat> {
    let q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidGaussian(format!(
            "quaternion norm {n} is not within {UNIT_TOLERANCE} of 1"
        )));
    }
    Ok(UnitQuaternion::new_unchecked(q))
}

pub fn quat_wxyz(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Pinhole camera with a world-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Quat,
    /// World-to-camera translation.
    pub translation: Vec3,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Quat,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidCamera("principal point is not finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "image size must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        let n = self.rotation.quaternion().norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidCamera(format!("rotation norm {n} is not 1")));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("translation is not finite".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`, with `up` giving the world's
    /// upward direction (image rows grow against it).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        let dist = forward.norm();
        if !(dist > 0.0 && dist.is_finite()) {
            return Err(Error::InvalidCamera("eye and target coincide".into()));
        }
        let forward = forward / dist;
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // looking straight along `up`
            let alt = if forward.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        let translation = -(rotation * eye);
        Camera::new(fx, fy, cx, cy, width, height, rotation, translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// One anisotropic 3D splat with view-independent color.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    /// Per-axis standard deviation, all components positive.
    pub scale: Vec3,
    pub rotation: Quat,
    pub opacity: f64,
    pub color: Vec3,
    pub label: Label,
    pub descriptor_id: Option<usize>,
}

impl Gaussian {
    pub fn new(mean: Vec3, scale: Vec3, rotation: Quat, opacity: f64, color: Vec3) -> Self {
        Gaussian {
            mean,
            scale,
            rotation,
            opacity,
            color,
            label: BACKGROUND,
            descriptor_id: None,
        }
    }

    pub fn isotropic(mean: Vec3, sigma: f64, opacity: f64, color: Vec3) -> Self {
        Gaussian::new(
            mean,
            Vec3::repeat(sigma),
            Quat::identity(),
            opacity,
            color,
        )
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaussian("mean is not finite".into()));
        }
        if !self.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidGaussian(format!(
                "scale components must be positive, got {:?}",
                self.scale.as_slice()
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidGaussian(format!(
                "opacity {} outside [0, 1]",
                self.opacity
            )));
        }
        let n = self.rotation.quaternion().norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidGaussian(format!("rotation norm {n} is not 1")));
        }
        Ok(())
    }

    /// World-space covariance `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }
}

/// Returns exactly the Gaussians carrying `label`, in scene order.
pub fn instance_subset(scene: &[Gaussian], label: Label) -> Vec<Gaussian> {
    scene.iter().filter(|g| g.label == label).cloned().collect()
}

/// Indices of the Gaussians carrying `label`, in scene order.
pub fn instance_indices(scene: &[Gaussian], label: Label) -> Vec<usize> {
    scene
        .iter()
        .enumerate()
        .filter(|(_, g)| g.label == label)
        .map(|(i, _)| i)
        .collect()
}

/// Distinct non-background labels present in the scene, ascending.
pub fn instance_labels(scene: &[Gaussian]) -> BTreeSet<Label> {
    scene
        .iter()
        .map(|g| g.label)
        .filter(|&l| l != BACKGROUND)
        .collect()
}

/// Depth grid in meters; `NaN` marks invalid cells. Equality is bitwise,
/// so maps with invalid cells still equal their copies.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl PartialEq for DepthMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![f32::NAN; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    /// Valid depth at an integer pixel, `None` for invalid cells.
    pub fn get(&self, w: usize, h: usize) -> Option<f64> {
        let d = self.data[h * self.width + w];
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }

    pub fn set(&mut self, w: usize, h: usize, depth: f64) {
        self.data[h * self.width + w] = depth as f32;
    }
}

/// Binary `width x height` mask in row-major order.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for h in 0..height {
            for w in 0..width {
                data.push(f(w, h));
            }
        }
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, w: usize, h: usize) -> bool {
        self.data[h * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, w: usize, h: usize, value: bool) {
        self.data[h * self.width + w] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn check_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Set pixels as `(w, h)` pairs in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % width, i / width))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskStage {
    Raw,
    Propagated,
    Refined,
}

impl MaskStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskStage::Raw => "raw",
            MaskStage::Propagated => "propagated",
            MaskStage::Refined => "refined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(MaskStage::Raw),
            "propagated" => Some(MaskStage::Propagated),
            "refined" => Some(MaskStage::Refined),
            _ => None,
        }
    }
}

/// All masks of one view. Raw-stage ids are per-view and carry no
/// cross-view meaning; propagated and refined ids are global labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub view: usize,
    pub width: usize,
    pub height: usize,
    pub stage: MaskStage,
    pub masks: Vec<(u32, Mask)>,
}

impl MaskSet {
    pub fn new(view: usize, width: usize, height: usize, stage: MaskStage) -> Self {
        MaskSet {
            view,
            width,
            height,
            stage,
            masks: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (id, m) in &self.masks {
            if m.dims() != (self.width, self.height) {
                return Err(Error::DimensionMismatch {
                    expected: (self.width, self.height),
                    got: m.dims(),
                });
            }
            if !seen.insert(*id) {
                return Err(Error::format(
                    format!("mask set of view {}", self.view),
                    format!("duplicate mask id {id}"),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: u32) -> Option<&Mask> {
        self.masks.iter().find(|(i, _)| *i == id).map(|(_, m)| m)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.masks.iter().map(|(i, _)| *i).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Sparse per-point label scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelWeights {
    scores: BTreeMap<Label, f64>,
}

impl LabelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, f64)>) -> Self {
        let mut w = Self::new();
        for (l, s) in pairs {
            w.add(l, s);
        }
        w
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn add(&mut self, label: Label, score: f64) {
        debug_assert!(score >= 0.0);
        *self.scores.entry(label).or_insert(0.0) += score;
    }

    pub fn get(&self, label: Label) -> f64 {
        self.scores.get(&label).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, f64)> + '_ {
        self.scores.iter().map(|(&l, &s)| (l, s))
    }

    pub fn total(&self) -> f64 {
        self.scores.values().sum()
    }

    /// Scores scaled to sum to one. Empty or all-zero weights stay as they are.
    pub fn normalized(&self) -> LabelWeights {
        let total = self.total();
        if total <= 0.0 {
            return self.clone();
        }
        LabelWeights {
            scores: self.scores.iter().map(|(&l, &s)| (l, s / total)).collect(),
        }
    }

    /// Highest-scoring label; ties go to the smaller label.
    pub fn argmax(&self) -> Option<(Label, f64)> {
        let mut best: Option<(Label, f64)> = None;
        for (&l, &s) in &self.scores {
            match best {
                Some((_, bs)) if s <= bs => {}
                _ => best = Some((l, s)),
            }
        }
        best
    }
}

/// Points with optional per-point labels and vote weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<Label>>,
    pub weights: Option<Vec<LabelWeights>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud {
            points,
            labels: None,
            weights: None,
        }
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<Label>) -> Self {
        assert_eq!(points.len(), labels.len());
        PointCloud {
            points,
            labels: Some(labels),
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Unit-norm feature vector attached to an instance or a single Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDescriptor(Vec<f64>);

impl InstanceDescriptor {
    /// Normalizes `v`; zero or non-finite vectors are rejected.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) || v.is_empty() {
            return Err(Error::DegenerateDescriptor);
        }
        Ok(InstanceDescriptor(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Linear RGB image with components in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, w: usize, h: usize) -> [f64; 3] {
        self.data[h * self.width + w]
    }

    /// Copy with pixels outside `mask` set to black.
    pub fn masked(&self, mask: &Mask) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&mask.data)
                .map(|(c, &m)| if m { *c } else { [0.0; 3] })
                .collect(),
        }
    }
}

/// One calibrated view: camera, image, depth and its mask set.
#[derive(Debug, Clone)]
pub struct ViewAssets {
    pub camera: Camera,
    pub image: RgbImage,
    pub depth: DepthMap,
    pub masks: MaskSet,
}
