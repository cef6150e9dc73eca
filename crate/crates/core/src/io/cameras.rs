//! Camera list as JSON: one object per view, view id = position.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{quat_from_wxyz, quat_wxyz, Camera, Vec3};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "W")]
    width: usize,
    #[serde(rename = "H")]
    height: usize,
    /// World-to-camera rotation, `w x y z`.
    quaternion: [f64; 4],
    /// World-to-camera translation.
    translation: [f64; 3],
}

pub fn cameras_to_json(cameras: &[Camera]) -> String {
    let records: Vec<CameraRecord> = cameras
        .iter()
        .map(|c| CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            quaternion: quat_wxyz(&c.rotation),
            translation: [c.translation.x, c.translation.y, c.translation.z],
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("camera records serialize")
}

pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let records: Vec<CameraRecord> =
        serde_json::from_str(text).map_err(|e| Error::format("cameras", e.to_string()))?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let [w, x, y, z] = r.quaternion;
            let rotation = quat_from_wxyz(w, x, y, z)
                .map_err(|e| Error::format("cameras", format!("view {i}: {e}")))?;
            let t = Vec3::new(r.translation[0], r.translation[1], r.translation[2]);
            Camera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, rotation, t)
                .map_err(|e| Error::format("cameras", format!("view {i}: {e}")))
        })
        .collect()
}

pub fn save_cameras(path: impl AsRef<Path>, cameras: &[Camera]) -> Result<()> {
    std::fs::write(path, cameras_to_json(cameras))?;
    Ok(())
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    cameras_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cams: Vec<Camera> = (0..20)
            .map(|_| {
                let eye = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.5..2.0));
                Camera::look_at(eye, Vec3::zeros(), Vec3::z(), 100.3, 99.7, 31.9, 24.2, 64, 48).unwrap()
            })
            .collect();
        let back = cameras_from_json(&cameras_to_json(&cams)).unwrap();
        assert_eq!(back, cams);
    }

    #[test]
    fn rejects_bad_records() {
        assert!(cameras_from_json("[{}]").is_err());
        let bad_quat = r#"[{"fx":1,"fy":1,"cx":1,"cy":1,"W":2,"H":2,"quaternion":[2,0,0,0],"translation":[0,0,0]}]"#;
        assert!(cameras_from_json(bad_quat).is_err());
        let zero_w = r#"[{"fx":1,"fy":1,"cx":1,"cy":1,"W":0,"H":2,"quaternion":[1,0,0,0],"translation":[0,0,0]}]"#;
        assert!(cameras_from_json(zero_w).is_err());
    }
}
