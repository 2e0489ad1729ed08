use nalgebra::{Matrix2x3, Vector3};

use crate::model::sh::eval_sh_unclamped;
use crate::model::{covariance_from, Camera, GaussianCloud};

use super::RasterSettings;

/// Inclusive-exclusive pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// A Gaussian projected into one view.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Row of the source Gaussian in its cloud.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Screen covariance `[a, b, c]` for `[[a, b], [b, c]]`, low-pass floor included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same packing.
    pub conic: [f64; 3],
    pub view_depth: f64,
    /// Unit direction from the camera center to the Gaussian.
    pub view_dir: [f64; 3],
    pub rgb: [f64; 3],
    /// Channels whose SH color was above the zero clamp.
    pub rgb_active: [bool; 3],
    pub alpha_base: f64,
    pub rect: PixelRect,
}

impl Splat2D {
    /// Gaussian falloff `exp(-½ dᵀ Σ'⁻¹ d)` at pixel center `(px, py)`.
    #[inline]
    pub fn falloff(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let [a, b, c] = self.conic;
        (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp()
    }
}

/// Screen-space covariance `J W Σ Wᵀ Jᵀ` for a camera-space point, without the floor.
pub(crate) fn screen_covariance(cam: &Camera, p_cam: &Vector3<f64>, cov3: &nalgebra::Matrix3<f64>) -> [f64; 3] {
    let z = p_cam.z;
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * p_cam.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * p_cam.y / (z * z),
    );
    let t = j * cam.rotation;
    let cov = t * cov3 * t.transpose();
    [cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]]
}

/// Projects Gaussian `index` into `cam`.
///
/// Returns `None` when the Gaussian is culled: its depth is at or in front of
/// the near plane, its screen extent misses the viewport, or its rotation is
/// degenerate.
pub fn project_gaussian(
    cloud: &GaussianCloud,
    index: usize,
    cam: &Camera,
    settings: &RasterSettings,
) -> Option<Splat2D> {
    let pos = Vector3::from(cloud.position(index));
    let p_cam = cam.rotation * pos + cam.translation;
    let depth = p_cam.z;
    if !(depth > settings.near) {
        return None;
    }
    let cov3 = covariance_from(cloud.raw_scale(index), cloud.rotation(index)).ok()?;
    let [a, b, c] = screen_covariance(cam, &p_cam, &cov3);
    let (a, c) = (a + settings.low_pass, c + settings.low_pass);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mean2d = [
        cam.fx * p_cam.x / depth + cam.cx,
        cam.fy * p_cam.y / depth + cam.cy,
    ];
    let rect = if settings.extent_sigmas.is_finite() {
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let r = settings.extent_sigmas * lambda_max.sqrt();
        let span = |m: f64, limit: u32| -> (u32, u32) {
            let lo = (m - r - 0.5).ceil().max(0.0);
            let hi = ((m + r - 0.5).floor() + 1.0).min(limit as f64);
            if hi <= lo {
                (0, 0)
            } else {
                (lo as u32, hi as u32)
            }
        };
        let (x0, x1) = span(mean2d[0], cam.width);
        let (y0, y1) = span(mean2d[1], cam.height);
        if x0 >= x1 || y0 >= y1 {
            return None;
        }
        PixelRect { x0, y0, x1, y1 }
    } else {
        PixelRect {
            x0: 0,
            y0: 0,
            x1: cam.width,
            y1: cam.height,
        }
    };
    let dir = (pos - cam.center()).normalize();
    let view_dir = [dir.x, dir.y, dir.z];
    let raw = eval_sh_unclamped(cloud.dc(index), cloud.rest(index), cloud.sh_degree(), view_dir);
    Some(Splat2D {
        index,
        mean2d,
        cov2d: [a, b, c],
        conic,
        view_depth: depth,
        view_dir,
        rgb: raw.map(|v| v.max(0.0)),
        rgb_active: raw.map(|v| v > 0.0),
        alpha_base: cloud.opacity(index),
        rect,
    })
}
