//! Mask sets as a 16-bit single-channel label image (0 = background) with
//! a JSON sidecar listing the view, the ids in order and the stage.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Mask, MaskSet, MaskStage};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    view: usize,
    ids: Vec<u32>,
    stage: String,
}

/// Label image of a set whose masks are pairwise disjoint.
pub fn encode_label_image(set: &MaskSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut pixels = vec![0u16; set.width * set.height];
    for (id, m) in &set.masks {
        let v = u16::try_from(*id)
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| Error::format("masks", format!("id {id} is not in 1..=65535")))?;
        for (p, &on) in pixels.iter_mut().zip(&m.data) {
            if on {
                if *p != 0 {
                    return Err(Error::format("masks", format!("masks {p} and {id} overlap")));
                }
                *p = v;
            }
        }
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(set.width as u32, set.height as u32, pixels).expect("buffer matches dims");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format("masks", e.to_string()))?;
    Ok(out.into_inner())
}

pub fn sidecar_json(set: &MaskSet) -> String {
    serde_json::to_string_pretty(&Sidecar {
        view: set.view,
        ids: set.ids(),
        stage: set.stage.as_str().to_string(),
    })
    .expect("sidecar serializes")
}

fn decode_pixels(png: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::load_from_memory_with_format(png, ImageFormat::Png)
        .map_err(|e| Error::format("masks", e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(Error::format(
                "masks",
                format!("expected a single-channel label image, got {:?}", other.color()),
            ))
        }
    };
    Ok((w, h, pixels))
}

/// Rebuilds a mask set. Without a sidecar, ids are the distinct non-zero
/// pixel values in ascending order and the stage is raw.
pub fn decode_mask_set(png: &[u8], sidecar: Option<&str>, view: usize) -> Result<MaskSet> {
    let (w, h, pixels) = decode_pixels(png)?;
    let (view, ids, stage) = match sidecar {
        Some(text) => {
            let s: Sidecar = serde_json::from_str(text).map_err(|e| Error::format("mask sidecar", e.to_string()))?;
            let stage = MaskStage::parse(&s.stage)
                .ok_or_else(|| Error::format("mask sidecar", format!("unknown stage `{}`", s.stage)))?;
            (s.view, s.ids, stage)
        }
        None => {
            let mut ids: Vec<u32> = pixels.iter().filter(|&&p| p != 0).map(|&p| p as u32).collect();
            ids.sort_unstable();
            ids.dedup();
            (view, ids, MaskStage::Raw)
        }
    };
    if let Some(p) = pixels.iter().find(|&&p| p != 0 && !ids.contains(&(p as u32))) {
        return Err(Error::format("masks", format!("pixel value {p} is not listed in the sidecar")));
    }
    let masks = ids
        .iter()
        .map(|&id| {
            (
                id,
                Mask {
                    width: w,
                    height: h,
                    data: pixels.iter().map(|&p| p as u32 == id).collect(),
                },
            )
        })
        .collect();
    let set = MaskSet {
        view,
        width: w,
        height: h,
        stage,
        masks,
    };
    set.validate()?;
    Ok(set)
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

pub fn save_mask_set(png: impl AsRef<Path>, set: &MaskSet) -> Result<()> {
    let png = png.as_ref();
    std::fs::write(png, encode_label_image(set)?)?;
    std::fs::write(sidecar_path(png), sidecar_json(set))?;
    Ok(())
}

/// Loads a label image and, when present, its sidecar.
pub fn load_mask_set(png: impl AsRef<Path>, view: usize) -> Result<MaskSet> {
    let png = png.as_ref();
    let bytes = std::fs::read(png)?;
    let side = sidecar_path(png);
    let text = if side.exists() {
        Some(std::fs::read_to_string(side)?)
    } else {
        None
    };
    decode_mask_set(&bytes, text.as_deref(), view)
}

/// Writes each set to `dir` as `{view:04}.png` plus sidecar, creating the
/// directory if needed.
pub fn save_mask_dir(dir: impl AsRef<Path>, sets: &[MaskSet]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for set in sets {
        save_mask_set(super::manifest::mask_path(dir, set.view), set)?;
    }
    Ok(())
}

/// Loads every `{view:04}.png` in `dir`, sorted by view. Other files are
/// ignored.
pub fn load_mask_dir(dir: impl AsRef<Path>) -> Result<Vec<MaskSet>> {
    let mut views = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(view) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
            views.push((view, path));
        }
    }
    views.sort();
    views.into_iter().map(|(v, p)| load_mask_set(p, v)).collect()
}
