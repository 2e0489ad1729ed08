//! Appearance-only fine-tuning against photometric loss.

use crate::error::Result;
use crate::model::GaussianCloud;
use crate::optim::{Objective, Trainable};
use crate::render::{photometric_loss, render, render_backward, View};

impl Trainable for GaussianCloud {
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.sh_dc, &mut self.sh_rest, &mut self.raw_opacity]
    }
}

/// Photometric loss of a cloud's render against each view's target.
pub(crate) struct Photometric<'a> {
    pub views: &'a [View],
}

impl Photometric<'_> {
    pub fn loss_grad_for(&self, cloud: &GaussianCloud, view: usize) -> Result<(f64, crate::render::AppearanceGrad)> {
        let v = &self.views[view];
        let img = render(cloud, &v.camera, None).image;
        let (loss, dl) = photometric_loss(&img, &v.target)?;
        let grad = render_backward(cloud, &v.camera, &dl)?;
        Ok((loss, grad))
    }
}

impl Objective<GaussianCloud> for Photometric<'_> {
    fn view_count(&self) -> usize {
        self.views.len()
    }

    fn loss(&self, cloud: &GaussianCloud, view: usize) -> Result<f64> {
        let v = &self.views[view];
        let img = render(cloud, &v.camera, None).image;
        Ok(photometric_loss(&img, &v.target)?.0)
    }

    fn loss_and_grad(&self, cloud: &GaussianCloud, view: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, g) = self.loss_grad_for(cloud, view)?;
        Ok((loss, vec![g.sh_dc, g.sh_rest, g.raw_opacity]))
    }
}

/// Mean photometric loss of `cloud` over `views`.
pub fn mean_photometric_loss(cloud: &GaussianCloud, views: &[View]) -> Result<f64> {
    Photometric { views }.mean_loss(cloud)
}
