//! CPU tile-based EWA splatting: projection, front-to-back compositing,
//! per-Gaussian hit statistics and appearance gradients.

mod loss;
mod project;
mod raster;

pub use loss::{photometric_loss, SSIM_WEIGHT};
pub use project::{project_gaussian, PixelRect, Splat2D};
pub use raster::{
    render, render_backward, render_backward_with, render_untiled, render_with, AppearanceGrad,
    RenderOutput, SignificanceMode, SplatStats, TILE_SIZE,
};

/// Rasterizer thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterSettings {
    /// Splats whose per-pixel alpha falls below this are skipped.
    pub alpha_min: f64,
    /// Per-pixel alpha is capped here.
    pub alpha_max: f64,
    /// A pixel stops blending when transmittance would drop below this.
    pub transmittance_min: f64,
    /// Screen footprint radius in standard deviations; infinite covers the viewport.
    pub extent_sigmas: f64,
    /// Gaussians at or in front of this camera-space depth are culled.
    pub near: f64,
    /// Added to the diagonal of every screen covariance.
    pub low_pass: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            extent_sigmas: 3.0,
            near: 0.2,
            low_pass: 0.3,
        }
    }
}

impl RasterSettings {
    /// Skip threshold, early termination and footprint clipping disabled:
    /// every projected Gaussian is evaluated at every pixel.
    pub fn exact() -> Self {
        Self {
            alpha_min: 0.0,
            transmittance_min: 0.0,
            extent_sigmas: f64::INFINITY,
            ..Self::default()
        }
    }
}

/// Renders every camera with default settings.
pub fn render_views(cloud: &crate::model::GaussianCloud, cams: &[crate::model::Camera]) -> Vec<crate::image::Image> {
    cams.iter().map(|c| render(cloud, c, None).image).collect()
}

/// A calibrated camera paired with the image it should reproduce.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: crate::model::Camera,
    pub target: crate::image::Image,
}
