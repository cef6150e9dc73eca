//! CPU Gaussian splat rasterizer.
//!
//! Splats are projected with the usual affine (EWA) approximation, sorted
//! front-to-back once per view and composited per pixel. Each pixel is
//! evaluated at its center `(w + 0.5, h + 0.5)`. A splat contributes
//! `a = opacity * exp(-d^2 / 2)` where `d` is the Mahalanobis distance;
//! splats beyond `d = 3` or with `a < 1/255` are skipped.
//!
//! Rows are processed in parallel. Gradient accumulation keeps per-row
//! buffers which are reduced in row order, so results do not depend on the
//! number of threads.

use nalgebra::{Matrix2x3, Matrix3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Camera, Gaussian, Label, Mask, RgbImage, Vec3};

/// Added to the diagonal of every projected covariance (pixels squared).
pub const LOW_PASS: f64 = 0.3;
/// Smallest per-splat alpha that is composited.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Squared Mahalanobis cutoff (3 sigma).
pub const CUTOFF_SQ: f64 = 9.0;
/// Accumulated alpha at which a full-opacity render counts as inside the mask.
pub const MASK_THRESHOLD: f64 = 0.5;

/// A Gaussian projected into one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub index: usize,
    pub mean: [f64; 2],
    /// Covariance `[xx, xy, yy]` in pixels squared, low-pass included.
    pub cov: [f64; 3],
    /// Inverse covariance `[xx, xy, yy]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    /// Inclusive pixel columns touched by the 3-sigma footprint.
    pub x_range: (usize, usize),
    /// Inclusive pixel rows touched by the 3-sigma footprint.
    pub y_range: (usize, usize),
}

impl Splat2D {
    #[inline]
    pub fn mahalanobis_sq(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }

    /// Gaussian falloff at a pixel center, `None` beyond the cutoff.
    #[inline]
    pub fn falloff(&self, w: usize, h: usize) -> Option<f64> {
        if w < self.x_range.0 || w > self.x_range.1 {
            return None;
        }
        let d2 = self.mahalanobis_sq(w as f64 + 0.5, h as f64 + 0.5);
        (d2 <= CUTOFF_SQ).then(|| (-0.5 * d2).exp())
    }
}

/// Projects a Gaussian. Returns `None` when it is behind the camera or its
/// footprint misses the image.
pub fn project_gaussian(g: &Gaussian, index: usize, camera: &Camera) -> Option<Splat2D> {
    let pc = camera.to_camera(&g.mean);
    if !(pc.z > 0.0) || !pc.iter().all(|v| v.is_finite()) {
        return None;
    }
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let w = camera.rotation.to_rotation_matrix().into_inner();
    let cov_cam: Matrix3<f64> = w * g.covariance() * w.transpose();
    let j = Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * x / (z * z),
        0.0,
        camera.fy / z,
        -camera.fy * y / (z * z),
    );
    let c2 = j * cov_cam * j.transpose();
    let a = c2[(0, 0)] + LOW_PASS;
    let b = 0.5 * (c2[(0, 1)] + c2[(1, 0)]);
    let c = c2[(1, 1)] + LOW_PASS;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let mean = [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy];
    let x_range = pixel_span(mean[0], 3.0 * a.sqrt(), camera.width)?;
    let y_range = pixel_span(mean[1], 3.0 * c.sqrt(), camera.height)?;
    Some(Splat2D {
        index,
        mean,
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: z,
        opacity: g.opacity,
        x_range,
        y_range,
    })
}

/// Pixels `i` whose center `i + 0.5` lies within `radius` of `center`.
fn pixel_span(center: f64, radius: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Rgb,
    /// Only Gaussians of this label, all at opacity one; fills `mask`.
    FullOpacityMask(Label),
    ArgmaxIds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: RgbImage,
    /// Accumulated alpha `1 - prod(1 - a_i)` per pixel.
    pub alpha: Vec<f64>,
    /// Per-pixel index of the Gaussian with the largest blending weight
    /// `a_i * T_i`.
    pub ids: Vec<Option<usize>>,
    /// Binarized accumulated alpha, only for [`RenderMode::FullOpacityMask`].
    pub mask: Option<Mask>,
}

/// Splats of one view sorted front-to-back with per-row candidate lists.
struct Prepared {
    width: usize,
    height: usize,
    splats: Vec<Splat2D>,
    rows: Vec<Vec<u32>>,
}

impl Prepared {
    fn new(
        scene: &[Gaussian],
        camera: &Camera,
        select: impl Fn(&Gaussian) -> bool + Sync,
        full_opacity: bool,
    ) -> Self {
        let mut splats: Vec<Splat2D> = scene
            .par_iter()
            .enumerate()
            .filter(|(_, g)| select(g))
            .filter_map(|(i, g)| {
                let mut s = project_gaussian(g, i, camera)?;
                if full_opacity {
                    s.opacity = 1.0;
                }
                Some(s)
            })
            .collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
        let mut rows = vec![Vec::new(); camera.height];
        for (k, s) in splats.iter().enumerate() {
            for row in &mut rows[s.y_range.0..=s.y_range.1] {
                row.push(k as u32);
            }
        }
        Prepared {
            width: camera.width,
            height: camera.height,
            splats,
            rows,
        }
    }

    /// Calls `f(splat, falloff, alpha)` for every splat composited at a
    /// pixel, front-to-back.
    #[inline]
    fn for_each(&self, w: usize, h: usize, mut f: impl FnMut(&Splat2D, f64, f64)) {
        for &k in &self.rows[h] {
            let s = &self.splats[k as usize];
            if let Some(g) = s.falloff(w, h) {
                let a = s.opacity * g;
                if a >= MIN_ALPHA {
                    f(s, g, a);
                }
            }
        }
    }
}

struct PixelOut {
    color: [f64; 3],
    alpha: f64,
    id: Option<usize>,
}

fn composite(prep: &Prepared, scene: &[Gaussian], w: usize, h: usize) -> PixelOut {
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut best = (0.0, None);
    prep.for_each(w, h, |s, _, a| {
        let c = &scene[s.index].color;
        let weight = a * t;
        for ch in 0..3 {
            color[ch] += c[ch] * weight;
        }
        if weight > best.0 {
            best = (weight, Some(s.index));
        }
        t *= 1.0 - a;
    });
    PixelOut {
        color,
        alpha: 1.0 - t,
        id: best.1,
    }
}

pub fn render(scene: &[Gaussian], camera: &Camera, mode: RenderMode) -> RenderOutput {
    let prep = match mode {
        RenderMode::Rgb | RenderMode::ArgmaxIds => Prepared::new(scene, camera, |_| true, false),
        RenderMode::FullOpacityMask(l) => Prepared::new(scene, camera, |g| g.label == l, true),
    };
    let (width, height) = camera.dims();
    let rows: Vec<Vec<PixelOut>> = (0..height)
        .into_par_iter()
        .map(|h| (0..width).map(|w| composite(&prep, scene, w, h)).collect())
        .collect();
    let n = width * height;
    let mut rgb = RgbImage::new(width, height);
    let mut alpha = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for (i, px) in rows.into_iter().flatten().enumerate() {
        rgb.data[i] = px.color;
        alpha.push(px.alpha);
        ids.push(px.id);
    }
    let mask = matches!(mode, RenderMode::FullOpacityMask(_)).then(|| Mask {
        width,
        height,
        data: alpha.iter().map(|&a| a >= MASK_THRESHOLD).collect(),
    });
    RenderOutput {
        width,
        height,
        rgb,
        alpha,
        ids,
        mask,
    }
}

/// Full-opacity silhouette of `label`.
pub fn full_opacity_mask(scene: &[Gaussian], camera: &Camera, label: Label) -> Mask {
    render(scene, camera, RenderMode::FullOpacityMask(label))
        .mask
        .expect("mask mode always fills the mask")
}

/// Marks the Gaussians that are not culled and whose blending weight
/// `a_i * T_i` reaches `1/255` at one pixel or more.
pub fn visible_gaussians(scene: &[Gaussian], camera: &Camera) -> Vec<bool> {
    let prep = Prepared::new(scene, camera, |_| true, false);
    let rows: Vec<Vec<usize>> = (0..prep.height)
        .into_par_iter()
        .map(|h| {
            let mut seen = Vec::new();
            for w in 0..prep.width {
                let mut t = 1.0;
                prep.for_each(w, h, |s, _, a| {
                    if a * t >= MIN_ALPHA {
                        seen.push(s.index);
                    }
                    t *= 1.0 - a;
                });
            }
            seen
        })
        .collect();
    let mut visible = vec![false; scene.len()];
    for i in rows.into_iter().flatten() {
        visible[i] = true;
    }
    visible
}

/// Per-Gaussian gradients of the composite loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub opacity: Vec<f64>,
    pub color: Vec<Vec3>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients {
            opacity: vec![0.0; n],
            color: vec![Vec3::zeros(); n],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.opacity.iter_mut().zip(&other.opacity) {
            *a += scale * b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += scale * b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.opacity.iter().all(|&g| g == 0.0) && self.color.iter().all(|c| c.iter().all(|&g| g == 0.0))
    }
}

/// Loss values of one render. `rgb` is the mean absolute error over pixels
/// and channels, `mask` the mean absolute error between accumulated alpha
/// and the target mask, and `total` their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub rgb: f64,
    pub mask: f64,
    pub total: f64,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss `l_rgb + w_mask * l_mask` and its gradient with respect to every
/// Gaussian's opacity and color. The L1 subgradient at zero is zero.
pub fn backward_opacity_color(
    scene: &[Gaussian],
    camera: &Camera,
    target_rgb: &RgbImage,
    target_mask: Option<&Mask>,
    w_mask: f64,
) -> Result<(LossTerms, Gradients)> {
    loss_and_gradients(
        scene,
        camera,
        Some((target_rgb, 1.0)),
        target_mask.map(|m| (m, w_mask)),
    )
}

/// Weighted L1 loss on color and/or accumulated alpha with gradients. Either
/// term may be absent.
pub fn loss_and_gradients(
    scene: &[Gaussian],
    camera: &Camera,
    rgb_target: Option<(&RgbImage, f64)>,
    mask_target: Option<(&Mask, f64)>,
) -> Result<(LossTerms, Gradients)> {
    let dims = camera.dims();
    if let Some((img, _)) = rgb_target {
        if img.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: img.dims(),
            });
        }
    }
    if let Some((m, _)) = mask_target {
        if m.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: m.dims(),
            });
        }
    }
    let prep = Prepared::new(scene, camera, |_| true, false);
    let n_px = camera.pixel_count() as f64;
    let rgb_scale = rgb_target.map_or(0.0, |(_, w)| w / (3.0 * n_px));
    let mask_scale = mask_target.map_or(0.0, |(_, w)| w / n_px);

    struct RowOut {
        rgb_abs: f64,
        mask_abs: f64,
        grads: Vec<(u32, f64, [f64; 3])>,
    }

    let rows: Vec<RowOut> = (0..prep.height)
        .into_par_iter()
        .map(|h| {
            let mut out = RowOut {
                rgb_abs: 0.0,
                mask_abs: 0.0,
                grads: Vec::new(),
            };
            // (gaussian, falloff, alpha, transmittance before)
            let mut stack: Vec<(usize, f64, f64, f64)> = Vec::new();
            for w in 0..prep.width {
                stack.clear();
                let mut t = 1.0;
                let mut color = [0.0; 3];
                prep.for_each(w, h, |s, g, a| {
                    let c = &scene[s.index].color;
                    let weight = a * t;
                    for ch in 0..3 {
                        color[ch] += c[ch] * weight;
                    }
                    stack.push((s.index, g, a, t));
                    t *= 1.0 - a;
                });
                let acc = 1.0 - t;
                let px = h * prep.width + w;

                let mut dl_dc = [0.0; 3];
                if let Some((img, _)) = rgb_target {
                    let target = img.data[px];
                    for ch in 0..3 {
                        let diff = color[ch] - target[ch];
                        out.rgb_abs += diff.abs();
                        dl_dc[ch] = rgb_scale * sign(diff);
                    }
                }
                let mut dl_da = 0.0;
                if let Some((m, _)) = mask_target {
                    let target = if m.data[px] { 1.0 } else { 0.0 };
                    let diff = acc - target;
                    out.mask_abs += diff.abs();
                    dl_da = mask_scale * sign(diff);
                }
                if dl_dc == [0.0; 3] && dl_da == 0.0 {
                    continue;
                }

                // Back-to-front: `behind` is the color composited behind
                // splat i, `clear` the transmittance through everything
                // behind it.
                let mut behind = [0.0; 3];
                let mut clear = 1.0;
                for &(gi, g, a, t_i) in stack.iter().rev() {
                    let c = &scene[gi].color;
                    let mut d_alpha = dl_da * t_i * clear;
                    let mut d_color = [0.0; 3];
                    for ch in 0..3 {
                        d_alpha += dl_dc[ch] * t_i * (c[ch] - behind[ch]);
                        d_color[ch] = dl_dc[ch] * a * t_i;
                    }
                    out.grads.push((gi as u32, d_alpha * g, d_color));
                    for ch in 0..3 {
                        behind[ch] = c[ch] * a + (1.0 - a) * behind[ch];
                    }
                    clear *= 1.0 - a;
                }
            }
            out
        })
        .collect();

    let mut grads = Gradients::zeros(scene.len());
    let mut rgb_abs = 0.0;
    let mut mask_abs = 0.0;
    for row in rows {
        rgb_abs += row.rgb_abs;
        mask_abs += row.mask_abs;
        for (i, da, dc) in row.grads {
            let i = i as usize;
            grads.opacity[i] += da;
            grads.color[i] += Vec3::new(dc[0], dc[1], dc[2]);
        }
    }
    let rgb = rgb_abs / (3.0 * n_px);
    let mask = mask_abs / n_px;
    let total = rgb_target.map_or(0.0, |(_, w)| w * rgb) + mask_target.map_or(0.0, |(_, w)| w * mask);
    Ok((LossTerms { rgb, mask, total }, grads))
}
