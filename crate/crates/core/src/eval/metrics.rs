//! PSNR and SSIM.

use crate::error::Result;
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / n as f64)
}

/// `10·log10(1 / MSE)` for images in [0, 1]; `f64::INFINITY` when they are equal.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Mean PSNR over paired image lists.
pub fn mean_psnr(a: &[Image], b: &[Image]) -> Result<f64> {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += psnr(x, y)?;
    }
    Ok(sum / a.len().max(1) as f64)
}

/// Mean SSIM over paired image lists.
pub fn mean_ssim(a: &[Image], b: &[Image]) -> Result<f64> {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += ssim(x, y)?;
    }
    Ok(sum / a.len().max(1) as f64)
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "same" convolution with zero padding.
fn blur(plane: &[f64], width: usize, height: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && (sx as usize) < width {
                    acc += t * row[sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = y as isize + k as isize - r;
                if sy >= 0 && (sy as usize) < height {
                    acc += t * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, zero-padded borders),
/// computed per channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

/// SSIM and, optionally, its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.check_shape(b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    let n = w * h;
    if n == 0 {
        return Ok((1.0, want_grad.then(|| a.clone())));
    }
    let taps = gaussian_window();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(a.width(), a.height()));
    let norm = 1.0 / (3 * n) as f64;
    for c in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(c).step_by(3).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(c).step_by(3).copied().collect();
        let sq = |v: &[f64], u: &[f64]| v.iter().zip(u).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_x = blur(&x, w, h, &taps);
        let mu_y = blur(&y, w, h, &taps);
        let e_xx = blur(&sq(&x, &x), w, h, &taps);
        let e_yy = blur(&sq(&y, &y), w, h, &taps);
        let e_xy = blur(&sq(&x, &y), w, h, &taps);

        let mut d_mu = vec![0.0; n];
        let mut d_xx = vec![0.0; n];
        let mut d_xy = vec![0.0; n];
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let var_x = e_xx[p] - mx * mx;
            let var_y = e_yy[p] - my * my;
            let cov = e_xy[p] - mx * my;
            let n1 = 2.0 * mx * my + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d1 = mx * mx + my * my + SSIM_C1;
            let d2 = var_x + var_y + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                d_mu[p] = norm * (2.0 * my * (n2 - n1) / (d1 * d2) - s * (2.0 * mx / d1 - 2.0 * mx / d2));
                d_xx[p] = norm * (-s / d2);
                d_xy[p] = norm * (2.0 * n1 / (d1 * d2));
            }
        }
        if let Some(g) = grad.as_mut() {
            // The zero-padded symmetric blur is its own adjoint.
            let b_mu = blur(&d_mu, w, h, &taps);
            let b_xx = blur(&d_xx, w, h, &taps);
            let b_xy = blur(&d_xy, w, h, &taps);
            let gd = g.data_mut();
            for p in 0..n {
                gd[p * 3 + c] = b_mu[p] + 2.0 * x[p] * b_xx[p] + y[p] * b_xy[p];
            }
        }
    }
    Ok((total * norm, grad))
}
