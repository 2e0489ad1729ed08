//! Distilling a full-degree SH teacher into a truncated student.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{sh_truncate, Camera, GaussianCloud};
use crate::optim::{fit, FitTrace, LearningRates, Objective};
use crate::render::{render, render_backward};

pub const DEFAULT_PSEUDO_SIGMA: f64 = 0.1;

/// Jittered camera synthesis around the training views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoViewConfig {
    /// Standard deviation of the translation jitter, world units.
    pub sigma: f64,
    pub count_per_view: usize,
    pub seed: u64,
}

impl Default for PseudoViewConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_PSEUDO_SIGMA,
            count_per_view: 1,
            seed: 0,
        }
    }
}

/// For every training camera, `count_per_view` copies whose translation is
/// offset by i.i.d. `N(0, σ²)` noise per axis. Rotation and intrinsics are
/// kept. Draws are taken in camera order, then copy order, then x/y/z.
pub fn sample_pseudo_views(train: &[Camera], cfg: &PseudoViewConfig) -> Result<Vec<Camera>> {
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("pseudo-view sigma must be >= 0, got {}", cfg.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.sigma).expect("finite non-negative sigma");
    let mut out = Vec::with_capacity(train.len() * cfg.count_per_view);
    for cam in train {
        for _ in 0..cfg.count_per_view {
            let jitter = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            let mut pseudo = cam.clone();
            pseudo.translation += jitter;
            out.push(pseudo);
        }
    }
    Ok(out)
}

/// Step sizes used for distillation. Rejected epochs halve them, so they
/// start high enough for a 500-iteration fit to converge.
pub const DISTILL_RATES: LearningRates = LearningRates {
    sh_dc: 2e-2,
    sh_rest: 2e-2,
    raw_opacity: 0.4,
};

/// Teacher images are rendered once; the student is fit to them.
struct DistillObjective {
    cameras: Vec<Camera>,
    teacher: Vec<Image>,
}

impl DistillObjective {
    fn residual(&self, student: &GaussianCloud, view: usize) -> (f64, Image) {
        let img = render(student, &self.cameras[view], None).image;
        let t = &self.teacher[view];
        let pixels = img.width() as f64 * img.height() as f64;
        let mut grad = Image::new(img.width(), img.height());
        let mut sum = 0.0;
        for ((g, s), t) in grad.data_mut().iter_mut().zip(img.data()).zip(t.data()) {
            let d = s - t;
            sum += d * d;
            *g = 2.0 * d / pixels;
        }
        (sum / pixels, grad)
    }
}

impl Objective<GaussianCloud> for DistillObjective {
    fn view_count(&self) -> usize {
        self.cameras.len()
    }

    fn loss(&self, student: &GaussianCloud, view: usize) -> Result<f64> {
        Ok(self.residual(student, view).0)
    }

    fn loss_and_grad(&self, student: &GaussianCloud, view: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, dl) = self.residual(student, view);
        let g = render_backward(student, &self.cameras[view], &dl)?;
        Ok((loss, vec![g.sh_dc, g.sh_rest, g.raw_opacity]))
    }
}

/// Mean over pixels of the squared RGB distance between teacher and student
/// renders, averaged over `cameras`.
pub fn distill_loss(teacher: &GaussianCloud, student: &GaussianCloud, cameras: &[Camera]) -> Result<f64> {
    if cameras.is_empty() {
        return Err(Error::NoViews);
    }
    let obj = DistillObjective {
        cameras: cameras.to_vec(),
        teacher: cameras.iter().map(|c| render(teacher, c, None).image).collect(),
    };
    obj.mean_loss(student)
}

/// Truncates `teacher` to `to_degree` and fits the student's SH and opacity
/// to the teacher's renders over the training and pseudo views.
pub fn distill(
    teacher: &GaussianCloud,
    to_degree: u32,
    train_views: &[Camera],
    cfg: &PseudoViewConfig,
    iterations: usize,
) -> Result<(GaussianCloud, FitTrace)> {
    distill_with_rates(teacher, to_degree, train_views, cfg, iterations, &DISTILL_RATES)
}

pub fn distill_with_rates(
    teacher: &GaussianCloud,
    to_degree: u32,
    train_views: &[Camera],
    cfg: &PseudoViewConfig,
    iterations: usize,
    rates: &LearningRates,
) -> Result<(GaussianCloud, FitTrace)> {
    if to_degree >= teacher.sh_degree() {
        return Err(Error::InvalidTruncation {
            from: teacher.sh_degree(),
            to: to_degree,
        });
    }
    if train_views.is_empty() {
        return Err(Error::NoViews);
    }
    let mut student = sh_truncate(teacher, to_degree)?;
    if iterations == 0 {
        return Ok((student, FitTrace::default()));
    }
    let mut cameras = train_views.to_vec();
    cameras.extend(sample_pseudo_views(train_views, cfg)?);
    let teacher_images = cameras.iter().map(|c| render(teacher, c, None).image).collect();
    let obj = DistillObjective {
        cameras,
        teacher: teacher_images,
    };
    let trace = fit(
        &obj,
        &mut student,
        &[rates.sh_dc, rates.sh_rest, rates.raw_opacity],
        iterations,
    )?;
    Ok((student, trace))
}
