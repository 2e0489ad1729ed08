//! JSON camera rigs: an array of
//! `{fx, fy, cx, cy, width, height, R, t, split?}` objects where `R` is the
//! world-to-camera rotation in row-major order, `t` the translation and
//! `split` either `"train"` or `"test"` (absent means train).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Camera;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl RigCamera {
    pub fn from_camera(cam: &Camera, split: Option<Split>) -> Self {
        let m = &cam.rotation;
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            r: std::array::from_fn(|i| m[(i / 3, i % 3)]),
            t: [cam.translation.x, cam.translation.y, cam.translation.z],
            split,
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        Camera::new(
            Matrix3::from_row_slice(&self.r),
            Vector3::from_row_slice(&self.t),
            (self.fx, self.fy, self.cx, self.cy),
            self.width,
            self.height,
        )
    }

    pub fn split(&self) -> Split {
        self.split.unwrap_or_default()
    }
}

/// Parses a rig into cameras paired with their split.
pub fn read_rig(json: &str) -> Result<Vec<(Camera, Split)>> {
    let entries: Vec<RigCamera> = serde_json::from_str(json).map_err(|e| Error::Rig(e.to_string()))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let cam = e.to_camera().map_err(|err| Error::Rig(format!("camera {i}: {err}")))?;
            Ok((cam, e.split()))
        })
        .collect()
}

pub fn write_rig(cameras: &[(Camera, Split)]) -> String {
    let entries: Vec<RigCamera> = cameras.iter().map(|(c, s)| RigCamera::from_camera(c, Some(*s))).collect();
    serde_json::to_string_pretty(&entries).expect("rig entries serialize")
}
