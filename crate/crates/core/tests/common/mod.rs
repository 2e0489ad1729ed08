#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatpack_core::model::{eval_sh, logit, sh_rest_width, Camera, Gaussian, GaussianCloud};
use splatpack_core::render::{render_with, RasterSettings};
use splatpack_core::Image;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random cloud in a ±`spread` box around the origin. Opacities stay in
/// (0.05, 0.95) and SH-rest is small so colors stay positive.
pub fn random_cloud(n: usize, degree: u32, seed: u64, spread: f64) -> GaussianCloud {
    let mut r = rng(seed);
    let mut cloud = GaussianCloud::empty(degree).unwrap();
    for _ in 0..n {
        let q: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        cloud
            .push(&Gaussian {
                position: std::array::from_fn(|_| r.random_range(-spread..spread)),
                sh_dc: std::array::from_fn(|_| r.random_range(-1.0..1.0)),
                sh_rest: (0..sh_rest_width(degree)).map(|_| r.random_range(-0.1..0.1)).collect(),
                raw_opacity: logit(r.random_range(0.05..0.95)),
                raw_scale: std::array::from_fn(|_| r.random_range(-2.8..-1.2)),
                rotation: if q.iter().all(|v| v.abs() < 1e-3) { [1.0, 0.0, 0.0, 0.0] } else { q },
            })
            .unwrap();
    }
    cloud
}

pub fn orbit_camera(azimuth_deg: f64, elevation_deg: f64, radius: f64, size: u32) -> Camera {
    let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin()) * radius;
    Camera::look_at(eye, Vector3::zeros(), Vector3::z(), 50.0, size, size).unwrap()
}

pub struct OracleSplat {
    pub index: usize,
    pub depth: f64,
    pub mean: Vector2<f64>,
    pub inv_cov: Matrix2<f64>,
    pub cov: Matrix2<f64>,
    pub rgb: [f64; 3],
    pub opacity: f64,
}

fn quat_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Projection written out with explicit dense matrices, sorted front to back
/// (stable in cloud index).
pub fn oracle_project(cloud: &GaussianCloud, cam: &Camera) -> Vec<OracleSplat> {
    let center = -cam.rotation.transpose() * cam.translation;
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        let p = Vector3::from(cloud.position(i));
        let pc = cam.rotation * p + cam.translation;
        if pc.z <= 0.2 {
            continue;
        }
        let rot = quat_matrix(cloud.rotation(i));
        let s = Matrix3::from_diagonal(&Vector3::from(cloud.raw_scale(i).map(f64::exp)));
        let sigma = rot * s * s * rot.transpose();
        let j = Matrix2x3::new(
            cam.fx / pc.z,
            0.0,
            -cam.fx * pc.x / (pc.z * pc.z),
            0.0,
            cam.fy / pc.z,
            -cam.fy * pc.y / (pc.z * pc.z),
        );
        let cov = j * cam.rotation * sigma * cam.rotation.transpose() * j.transpose() + Matrix2::identity() * 0.3;
        let dir = (p - center).normalize();
        let rgb = eval_sh(cloud.dc(i), cloud.rest(i), cloud.sh_degree(), [dir.x, dir.y, dir.z]).unwrap();
        out.push(OracleSplat {
            index: i,
            depth: pc.z,
            mean: Vector2::new(cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy),
            inv_cov: cov.try_inverse().unwrap(),
            cov,
            rgb,
            opacity: cloud.opacity(i),
        });
    }
    out.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap());
    out
}

/// Every Gaussian at every pixel, no skipping, no early termination.
pub fn oracle_render(cloud: &GaussianCloud, cam: &Camera) -> Image {
    let splats = oracle_project(cloud, cam);
    let mut img = Image::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for s in &splats {
                let d = px - s.mean;
                let g = (-0.5 * (d.transpose() * s.inv_cov * d)[(0, 0)]).exp();
                let alpha = (s.opacity * g).min(0.99);
                for k in 0..3 {
                    c[k] += s.rgb[k] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            img.set_pixel(x, y, c);
        }
    }
    img
}

/// Per-ray accumulation of `σ_j · T` with the rasterizer's default skip,
/// termination and 3σ footprint rules.
pub fn oracle_literal_weights(cloud: &GaussianCloud, cam: &Camera) -> Vec<f64> {
    let splats = oracle_project(cloud, cam);
    let mut w = vec![0.0; cloud.len()];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            for s in &splats {
                let eig = s.cov.symmetric_eigenvalues();
                let r = 3.0 * eig.max().sqrt();
                let d = px - s.mean;
                if d.x.abs() > r || d.y.abs() > r {
                    continue;
                }
                let g = (-0.5 * (d.transpose() * s.inv_cov * d)[(0, 0)]).exp();
                let alpha = (s.opacity * g).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                if t * (1.0 - alpha) < 1e-4 {
                    break;
                }
                w[s.index] += s.opacity * t;
                t *= 1.0 - alpha;
            }
        }
    }
    w
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// FP16-representable cloud, codebook and assignment with a random member set.
pub fn random_quantized(
    seed: u64,
) -> (GaussianCloud, splatpack_core::vq::Codebook, splatpack_core::vq::AssignmentVector) {
    use splatpack_core::container::{fp16_round, fp16_round_codebook};
    use splatpack_core::vq::{materialize, AssignmentVector, Codebook};
    let mut r = rng(seed);
    let degree = r.random_range(0..=3);
    let n = r.random_range(0..60);
    let cloud = random_cloud(n, degree, seed ^ 0x5eed, 3.0);
    let dim = cloud.rest_width();
    let members: Vec<bool> = (0..n).map(|_| dim > 0 && r.random_bool(0.6)).collect();
    let m = members.iter().filter(|&&b| b).count();
    let k = if m == 0 { r.random_range(0..3) } else { r.random_range(1..20) };
    let book = fp16_round_codebook(&Codebook::new((0..k * dim).map(|_| r.random_range(-0.5..0.5)).collect(), dim, 0.8));
    let codes: Vec<u32> = (0..m).map(|_| r.random_range(0..k as u32)).collect();
    let assignments = AssignmentVector::from_membership(&members, &codes).unwrap();
    let cloud = materialize(&fp16_round(&cloud), &book, &assignments).unwrap();
    (cloud, book, assignments)
}

pub fn weighted(img: &Image, w: &Image) -> f64 {
    img.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Four-point central difference of `Σ w·C` along one parameter.
pub fn central_diff(cloud: &GaussianCloud, cam: &Camera, w: &Image, h: f64, set: impl Fn(&mut GaussianCloud, f64)) -> f64 {
    let eval = |delta: f64| {
        let mut c = cloud.clone();
        set(&mut c, delta);
        render_with(&c, cam, &RasterSettings::exact(), None).image
    };
    let (p1, m1, p2, m2) = (eval(h), eval(-h), eval(2.0 * h), eval(-2.0 * h));
    let diff = |a: &Image, b: &Image| -> f64 { a.data().iter().zip(b.data()).zip(w.data()).map(|((x, y), k)| (x - y) * k).sum() };
    (8.0 * diff(&p1, &m1) - diff(&p2, &m2)) / (12.0 * h)
}
