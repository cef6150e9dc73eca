use crate::scene::Mask;

/// Erosion with a `(2r + 1) x (2r + 1)` square structuring element. Pixels
/// outside the image count as unset, so masks also erode at the border.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    // separable: a square window is the product of a row and a column window
    let mut rows = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            rows.set(x, y, window_all(x, w, radius, |i| mask.get(i, y)));
        }
    }
    let mut out = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, window_all(y, h, radius, |j| rows.get(x, j)));
        }
    }
    out
}

fn window_all(center: usize, size: usize, radius: usize, f: impl Fn(usize) -> bool) -> bool {
    if center < radius || center + radius >= size {
        return false;
    }
    (center - radius..=center + radius).all(f)
}

/// Dilation with the same square structuring element.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    Mask::from_fn(w, h, |x, y| {
        let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        (y0..=y1).any(|j| (x0..=x1).any(|i| mask.get(i, j)))
    })
}
