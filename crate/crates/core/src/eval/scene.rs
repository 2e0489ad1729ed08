use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logit, sh_coeff_count, Camera, Gaussian, GaussianCloud};
use crate::render::{render, View};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_gaussians: usize,
    pub sh_degree: u32,
    /// Positions are drawn uniformly from `[-extent, extent]` per axis.
    pub extent: [f64; 3],
    /// Activated opacity range.
    pub opacity_range: [f64; 2],
    /// Per-axis log-scale range.
    pub log_scale_range: [f64; 2],
    /// Band-1 coefficients are uniform in `±0.5·s`, bands 2 and 3 in `±s`.
    pub specular_strength: f64,
    pub n_train_views: usize,
    pub n_test_views: usize,
    pub width: u32,
    pub height: u32,
    pub orbit_radius: f64,
    pub fov_degrees: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// 2,000 Gaussians at degree 3 seen by 8 training and 4 test views.
    pub fn standard(seed: u64) -> Self {
        Self {
            n_gaussians: 2000,
            sh_degree: 3,
            extent: [0.4, 0.4, 0.4],
            opacity_range: [0.05, 0.95],
            log_scale_range: [(0.02f64).ln(), (0.1f64).ln()],
            specular_strength: 0.15,
            n_train_views: 8,
            n_test_views: 4,
            width: 64,
            height: 64,
            orbit_radius: 1.6,
            fov_degrees: 45.0,
            seed,
        }
    }

    /// The standard scene with strong view-dependent color.
    pub fn specular(seed: u64) -> Self {
        Self {
            specular_strength: 0.6,
            ..Self::standard(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::model::check_degree(self.sh_degree)?;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("scene spec: {what}")));
        if !(0.0 < self.opacity_range[0] && self.opacity_range[0] <= self.opacity_range[1] && self.opacity_range[1] < 1.0) {
            return bad("opacity range must lie inside (0, 1)");
        }
        if !(self.log_scale_range[0] <= self.log_scale_range[1]) || !self.log_scale_range.iter().all(|v| v.is_finite()) {
            return bad("log-scale range is empty");
        }
        if self.extent.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("extent must be finite and non-negative");
        }
        if !(self.specular_strength.is_finite() && self.specular_strength >= 0.0) {
            return bad("specular strength must be non-negative");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(self.orbit_radius > 0.0) || !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return bad("orbit radius and field of view must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub cloud: GaussianCloud,
    pub train: Vec<View>,
    pub test: Vec<View>,
}

impl Scene {
    pub fn train_cameras(&self) -> Vec<Camera> {
        self.train.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn test_cameras(&self) -> Vec<Camera> {
        self.test.iter().map(|v| v.camera.clone()).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn orbit_cameras(spec: &SceneSpec, center: Vector3<f64>, count: usize, held_out: bool) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let offset = if held_out { 0.5 } else { 0.0 };
            let azimuth = std::f64::consts::TAU * (i as f64 + offset) / count as f64;
            let elevation = match (held_out, i % 2) {
                (true, _) => 25f64,
                (false, 0) => 15f64,
                (false, _) => 35f64,
            }
            .to_radians();
            let dir = Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
            Camera::look_at(
                center + spec.orbit_radius * dir,
                center,
                Vector3::z(),
                spec.fov_degrees,
                spec.width,
                spec.height,
            )
        })
        .collect()
}

/// Seeded random cloud with ground truth rendered from the cloud itself.
///
/// Cameras orbit the position centroid and look at it with +z up. Training
/// azimuths are `i/n` of a turn at elevations alternating between 15° and
/// 35°; test views sit halfway between in azimuth, at 25°.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cloud = GaussianCloud::empty(spec.sh_degree)?;
    let coeffs = sh_coeff_count(spec.sh_degree);
    let s = spec.specular_strength;
    for _ in 0..spec.n_gaussians {
        let position = std::array::from_fn(|a| uniform(&mut rng, [-spec.extent[a], spec.extent[a]]));
        let sh_dc = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let mut sh_rest = Vec::with_capacity(3 * (coeffs - 1));
        for c in 1..coeffs {
            let amp = if c < 4 { 0.5 * s } else { s };
            for _ in 0..3 {
                sh_rest.push(if amp > 0.0 { rng.random_range(-amp..amp) } else { 0.0 });
            }
        }
        let raw_opacity = logit(uniform(&mut rng, spec.opacity_range));
        let raw_scale = std::array::from_fn(|_| uniform(&mut rng, spec.log_scale_range));
        let mut q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        q.iter_mut().for_each(|v| *v /= norm);
        cloud.push(&Gaussian {
            position,
            sh_dc,
            sh_rest,
            raw_opacity,
            raw_scale,
            rotation: q,
        })?;
    }
    let n = cloud.len();
    let center = if n == 0 {
        Vector3::zeros()
    } else {
        let mut c = Vector3::zeros();
        for p in cloud.positions.chunks_exact(3) {
            c += Vector3::new(p[0], p[1], p[2]);
        }
        c / n as f64
    };
    let views = |cams: Vec<Camera>| -> Vec<View> {
        cams.into_iter()
            .map(|camera| View {
                target: render(&cloud, &camera, None).image,
                camera,
            })
            .collect()
    };
    let train = views(orbit_cameras(spec, center, spec.n_train_views, false)?);
    let test = views(orbit_cameras(spec, center, spec.n_test_views, true)?);
    Ok(Scene { cloud, train, test })
}
