//! Asset manifest tying a scene's files together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{cameras::load_cameras, depth::load_depth, images::load_png, masks::load_mask_set};
use crate::error::{Error, Result};
use crate::scene::ViewAssets;

/// Optional overrides of pipeline thresholds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_label: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_corr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_init: Option<f64>,
}

/// Paths are relative to the manifest's directory. Per-view files inside
/// the image, depth and mask directories are named by zero-padded view
/// index, e.g. `0007.png`, `0007.dpth` and `0007.png` plus `0007.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetManifest {
    pub cameras: PathBuf,
    pub images: PathBuf,
    pub depths: PathBuf,
    pub masks: PathBuf,
    pub points: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<PathBuf>,
    #[serde(default)]
    pub config: ConfigOverrides,
}

impl Default for AssetManifest {
    fn default() -> Self {
        AssetManifest {
            cameras: "cameras.json".into(),
            images: "images".into(),
            depths: "depth".into(),
            masks: "masks".into(),
            points: "points.ply".into(),
            descriptors: None,
            config: ConfigOverrides::default(),
        }
    }
}

pub fn view_stem(view: usize) -> String {
    format!("{view:04}")
}

pub fn image_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("{}.png", view_stem(view)))
}

pub fn depth_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("{}.dpth", view_stem(view)))
}

pub fn mask_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("{}.png", view_stem(view)))
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct Assets {
    pub root: PathBuf,
    pub manifest: AssetManifest,
}

impl Assets {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let manifest: AssetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        Ok(Assets {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            manifest,
        })
    }

    pub fn save(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(manifest_path, text)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Loads every `subsample`-th view (`subsample >= 1`), checking that
    /// image, depth and masks match the camera's dimensions.
    pub fn load_views(&self, subsample: usize) -> Result<Vec<ViewAssets>> {
        if subsample == 0 {
            return Err(Error::InvalidConfig("subsample must be at least 1".into()));
        }
        let m = &self.manifest;
        let cameras = load_cameras(self.resolve(&m.cameras))?;
        let (images, depths, masks) = (self.resolve(&m.images), self.resolve(&m.depths), self.resolve(&m.masks));
        cameras
            .into_iter()
            .enumerate()
            .step_by(subsample)
            .map(|(k, camera)| {
                let with_ctx = |e: Error, what: &str| Error::format(format!("view {k} {what}"), e.to_string());
                let image = load_png(image_path(&images, k)).map_err(|e| with_ctx(e, "image"))?;
                let depth = load_depth(depth_path(&depths, k)).map_err(|e| with_ctx(e, "depth"))?;
                let masks = load_mask_set(mask_path(&masks, k), k).map_err(|e| with_ctx(e, "masks"))?;
                let dims = camera.dims();
                for got in [image.dims(), (depth.width, depth.height), (masks.width, masks.height)] {
                    if got != dims {
                        return Err(Error::DimensionMismatch { expected: dims, got });
                    }
                }
                Ok(ViewAssets {
                    camera,
                    image,
                    depth,
                    masks,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_json_round_trip() {
        let m = AssetManifest {
            descriptors: Some("desc.bin".into()),
            config: ConfigOverrides {
                tau_depth: Some(0.05),
                ..Default::default()
            },
            ..Default::default()
        };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<AssetManifest>(&text).unwrap(), m);
        assert!(serde_json::from_str::<AssetManifest>(r#"{"cameras":"c"}"#).is_err());
    }
}
