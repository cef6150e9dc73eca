//! File formats and the segmenter wire protocol.

pub mod cameras;
pub mod depth;
pub mod descriptors;
pub mod images;
pub mod manifest;
pub mod masks;
pub mod ply;
pub mod wire;

pub use cameras::{load_cameras, save_cameras};
pub use depth::{load_depth, save_depth};
pub use descriptors::{load_descriptors, save_descriptors, DescriptorFile};
pub use images::{load_png, save_png};
pub use manifest::{AssetManifest, Assets, ConfigOverrides};
pub use masks::{load_mask_dir, load_mask_set, save_mask_dir, save_mask_set};
pub use ply::{load_gaussians, load_points, save_gaussians, save_points};
pub use wire::WireSegmenter;
