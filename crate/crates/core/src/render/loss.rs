use crate::error::Result;
use crate::eval::metrics::ssim_with_grad;
use crate::image::Image;

/// Weight of the `1 − SSIM` term.
pub const SSIM_WEIGHT: f64 = 0.2;

/// `(1 − λ)·L1 + λ·(1 − SSIM)` and its gradient with respect to `rendered`.
pub fn photometric_loss(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    rendered.check_shape(target)?;
    let n = rendered.data().len() as f64;
    let (ssim, d_ssim) = ssim_with_grad(rendered, target, true)?;
    let mut l1 = 0.0;
    let mut grad = d_ssim.expect("gradient requested");
    for ((g, r), t) in grad.data_mut().iter_mut().zip(rendered.data()).zip(target.data()) {
        let d = r - t;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = (1.0 - SSIM_WEIGHT) * sign / n - SSIM_WEIGHT * *g;
    }
    if n == 0.0 {
        return Ok((0.0, grad));
    }
    let loss = (1.0 - SSIM_WEIGHT) * l1 / n + SSIM_WEIGHT * (1.0 - ssim);
    Ok((loss, grad))
}
