use rayon::prelude::*;

use crate::error::Result;
use crate::image::Image;
use crate::model::sh::rest_basis;
use crate::model::{sh_coeff_count, Camera, GaussianCloud, SH_C0};

use super::project::{project_gaussian, Splat2D};
use super::RasterSettings;

pub const TILE_SIZE: u32 = 16;

/// Which per-ray term is summed into [`SplatStats::weight_sum`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceMode {
    /// Activated 3D opacity times the transmittance in front of the splat.
    #[default]
    Literal,
    /// The blending weight `α·T` actually used for the pixel.
    BlendWeight,
}

/// Per-Gaussian hit statistics gathered during a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatStats {
    pub hit_count: Vec<u64>,
    pub weight_sum: Vec<f64>,
}

impl SplatStats {
    pub fn zeros(n: usize) -> Self {
        Self {
            hit_count: vec![0; n],
            weight_sum: vec![0.0; n],
        }
    }

    /// Adds `other` into `self`, elementwise.
    pub fn accumulate(&mut self, other: &SplatStats) {
        for (a, b) in self.hit_count.iter_mut().zip(&other.hit_count) {
            *a += b;
        }
        for (a, b) in self.weight_sum.iter_mut().zip(&other.weight_sum) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Transmittance left after blending, one value per pixel.
    pub transmittance: Vec<f64>,
    pub stats: Option<SplatStats>,
}

/// Gradients of a scalar loss with respect to the appearance planes.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceGrad {
    pub sh_dc: Vec<f64>,
    pub sh_rest: Vec<f64>,
    pub raw_opacity: Vec<f64>,
}

impl AppearanceGrad {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        Self {
            sh_dc: vec![0.0; cloud.len() * 3],
            sh_rest: vec![0.0; cloud.len() * cloud.rest_width()],
            raw_opacity: vec![0.0; cloud.len()],
        }
    }

    pub fn add_assign(&mut self, other: &AppearanceGrad) {
        let pairs = [
            (&mut self.sh_dc, &other.sh_dc),
            (&mut self.sh_rest, &other.sh_rest),
            (&mut self.raw_opacity, &other.raw_opacity),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Splats of one view, sorted front to back and binned into tiles.
struct Prepared {
    splats: Vec<Splat2D>,
    tiles: Vec<Vec<u32>>,
    tiles_x: u32,
}

fn prepare(cloud: &GaussianCloud, cam: &Camera, settings: &RasterSettings) -> Prepared {
    let mut splats: Vec<Splat2D> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| project_gaussian(cloud, i, cam, settings))
        .collect();
    // Stable sort keeps cloud order among equal depths.
    splats.sort_by(|a, b| a.view_depth.total_cmp(&b.view_depth));

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (s, splat) in splats.iter().enumerate() {
        let r = splat.rect;
        for ty in r.y0 / TILE_SIZE..=(r.y1 - 1) / TILE_SIZE {
            for tx in r.x0 / TILE_SIZE..=(r.x1 - 1) / TILE_SIZE {
                tiles[(ty * tiles_x + tx) as usize].push(s as u32);
            }
        }
    }
    Prepared {
        splats,
        tiles,
        tiles_x,
    }
}

/// One blended contribution along a ray.
#[derive(Clone, Copy)]
struct Hit {
    /// Position in the list that was walked.
    slot: usize,
    alpha: f64,
    /// Transmittance in front of this splat.
    transmittance: f64,
    falloff: f64,
    capped: bool,
}

/// Front-to-back compositing of one pixel; the kernel shared by every path.
#[inline]
fn shade_pixel(
    x: u32,
    y: u32,
    splats: &[Splat2D],
    list: impl Iterator<Item = usize>,
    settings: &RasterSettings,
    mut on_hit: impl FnMut(Hit, &Splat2D),
) -> ([f64; 3], f64) {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut rgb = [0.0; 3];
    let mut t = 1.0;
    for (slot, s) in list.enumerate() {
        let splat = &splats[s];
        if !splat.rect.contains(x, y) {
            continue;
        }
        let falloff = splat.falloff(px, py);
        let raw_alpha = splat.alpha_base * falloff;
        let capped = raw_alpha > settings.alpha_max;
        let alpha = if capped { settings.alpha_max } else { raw_alpha };
        if alpha < settings.alpha_min {
            continue;
        }
        let next_t = t * (1.0 - alpha);
        if next_t < settings.transmittance_min {
            break;
        }
        let w = alpha * t;
        rgb[0] += splat.rgb[0] * w;
        rgb[1] += splat.rgb[1] * w;
        rgb[2] += splat.rgb[2] * w;
        on_hit(
            Hit {
                slot,
                alpha,
                transmittance: t,
                falloff,
                capped,
            },
            splat,
        );
        t = next_t;
    }
    (rgb, t)
}

#[inline]
fn contribution(mode: SignificanceMode, hit: &Hit, splat: &Splat2D) -> f64 {
    match mode {
        SignificanceMode::Literal => splat.alpha_base * hit.transmittance,
        SignificanceMode::BlendWeight => hit.alpha * hit.transmittance,
    }
}

/// Forward render with default rasterizer thresholds.
pub fn render(cloud: &GaussianCloud, cam: &Camera, stats: Option<SignificanceMode>) -> RenderOutput {
    render_with(cloud, cam, &RasterSettings::default(), stats)
}

/// Tile-parallel forward render.
///
/// When `stats` is set, every blended (Gaussian, pixel) pair increments the
/// Gaussian's hit count and adds the selected contribution term. Per-tile
/// partial sums are reduced in tile order, so results do not depend on
/// thread scheduling.
pub fn render_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    settings: &RasterSettings,
    stats: Option<SignificanceMode>,
) -> RenderOutput {
    let prep = prepare(cloud, cam, settings);
    let (w, h) = (cam.width, cam.height);

    struct TileOut {
        rgb: Vec<[f64; 3]>,
        t: Vec<f64>,
        hits: Vec<(u64, f64)>,
    }

    let tile_outs: Vec<TileOut> = prep
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let tx = ti as u32 % prep.tiles_x;
            let ty = ti as u32 / prep.tiles_x;
            let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
            let (x1, y1) = ((x0 + TILE_SIZE).min(w), (y0 + TILE_SIZE).min(h));
            let mut out = TileOut {
                rgb: Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize),
                t: Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize),
                hits: if stats.is_some() { vec![(0, 0.0); list.len()] } else { Vec::new() },
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    let ids = list.iter().map(|&s| s as usize);
                    let (rgb, t) = shade_pixel(x, y, &prep.splats, ids, settings, |hit, splat| {
                        if let Some(mode) = stats {
                            let e = &mut out.hits[hit.slot];
                            e.0 += 1;
                            e.1 += contribution(mode, &hit, splat);
                        }
                    });
                    out.rgb.push(rgb);
                    out.t.push(t);
                }
            }
            out
        })
        .collect();

    let mut image = Image::new(w, h);
    let mut transmittance = vec![1.0; (w * h) as usize];
    let mut acc = stats.map(|_| SplatStats::zeros(cloud.len()));
    for (ti, out) in tile_outs.iter().enumerate() {
        let tx = ti as u32 % prep.tiles_x;
        let ty = ti as u32 / prep.tiles_x;
        let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
        let x1 = (x0 + TILE_SIZE).min(w);
        let mut k = 0;
        for y in y0..(y0 + TILE_SIZE).min(h) {
            for x in x0..x1 {
                image.set_pixel(x, y, out.rgb[k]);
                transmittance[(y * w + x) as usize] = out.t[k];
                k += 1;
            }
        }
        if let Some(acc) = acc.as_mut() {
            for (slot, &(count, weight)) in out.hits.iter().enumerate() {
                if count > 0 {
                    let g = prep.splats[prep.tiles[ti][slot] as usize].index;
                    acc.hit_count[g] += count;
                    acc.weight_sum[g] += weight;
                }
            }
        }
    }
    RenderOutput {
        image,
        transmittance,
        stats: acc,
    }
}

/// Reference forward pass: one global depth-sorted list walked for every
/// pixel, no tiling, no parallelism. Uses the same per-pixel kernel as
/// [`render_with`], so the two agree bit for bit on the image.
pub fn render_untiled(
    cloud: &GaussianCloud,
    cam: &Camera,
    settings: &RasterSettings,
    stats: Option<SignificanceMode>,
) -> RenderOutput {
    let prep = prepare(cloud, cam, settings);
    let (w, h) = (cam.width, cam.height);
    let mut image = Image::new(w, h);
    let mut transmittance = vec![1.0; (w * h) as usize];
    let mut acc = stats.map(|_| SplatStats::zeros(cloud.len()));
    for y in 0..h {
        for x in 0..w {
            let (rgb, t) = shade_pixel(x, y, &prep.splats, 0..prep.splats.len(), settings, |hit, splat| {
                if let (Some(mode), Some(acc)) = (stats, acc.as_mut()) {
                    acc.hit_count[splat.index] += 1;
                    acc.weight_sum[splat.index] += contribution(mode, &hit, splat);
                }
            });
            image.set_pixel(x, y, rgb);
            transmittance[(y * w + x) as usize] = t;
        }
    }
    RenderOutput {
        image,
        transmittance,
        stats: acc,
    }
}

/// Backward pass with default rasterizer thresholds.
pub fn render_backward(cloud: &GaussianCloud, cam: &Camera, dl_dimage: &Image) -> Result<AppearanceGrad> {
    render_backward_with(cloud, cam, &RasterSettings::default(), dl_dimage)
}

/// Exact gradients of `Σ dL/dC · C` with respect to SH coefficients and raw
/// opacity. Geometry receives no gradient.
///
/// For the splat at position `i` along a ray, `∂C/∂c_i = α_i T_i` and
/// `∂C/∂α_i = T_i c_i − S_i / (1 − α_i)` where `S_i` is the color blended
/// behind it. Capped alphas and zero-clamped color channels pass no gradient.
pub fn render_backward_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    settings: &RasterSettings,
    dl_dimage: &Image,
) -> Result<AppearanceGrad> {
    dl_dimage.check_shape(&Image::new(cam.width, cam.height))?;
    let prep = prepare(cloud, cam, settings);
    let (w, h) = (cam.width, cam.height);

    // Per-tile partials aligned with the tile list: [dC/dr, dC/dg, dC/db, dα_base].
    let partials: Vec<Vec<[f64; 4]>> = prep
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let mut acc = vec![[0.0; 4]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let tx = ti as u32 % prep.tiles_x;
            let ty = ti as u32 / prep.tiles_x;
            let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
            let mut hits: Vec<Hit> = Vec::new();
            for y in y0..(y0 + TILE_SIZE).min(h) {
                for x in x0..(x0 + TILE_SIZE).min(w) {
                    let g = dl_dimage.pixel(x, y);
                    if g == [0.0; 3] {
                        continue;
                    }
                    hits.clear();
                    let ids = list.iter().map(|&s| s as usize);
                    shade_pixel(x, y, &prep.splats, ids, settings, |hit, _| hits.push(hit));
                    let mut behind = [0.0; 3];
                    for hit in hits.iter().rev() {
                        let splat = &prep.splats[list[hit.slot] as usize];
                        let weight = hit.alpha * hit.transmittance;
                        let e = &mut acc[hit.slot];
                        let mut d_alpha = 0.0;
                        for c in 0..3 {
                            e[c] += g[c] * weight;
                            d_alpha += g[c] * (hit.transmittance * splat.rgb[c] - behind[c] / (1.0 - hit.alpha));
                            behind[c] += splat.rgb[c] * weight;
                        }
                        if !hit.capped {
                            e[3] += d_alpha * hit.falloff;
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let n = cloud.len();
    let mut d_color = vec![[0.0; 3]; n];
    let mut d_alpha_base = vec![0.0; n];
    let mut touched = vec![usize::MAX; n];
    for (ti, acc) in partials.iter().enumerate() {
        for (slot, e) in acc.iter().enumerate() {
            let s = prep.tiles[ti][slot] as usize;
            let g = prep.splats[s].index;
            touched[g] = s;
            for c in 0..3 {
                d_color[g][c] += e[c];
            }
            d_alpha_base[g] += e[3];
        }
    }

    let mut grad = AppearanceGrad::zeros(cloud);
    let rest_w = cloud.rest_width();
    let n_rest = sh_coeff_count(cloud.sh_degree()) - 1;
    for g in 0..n {
        let s = touched[g];
        if s == usize::MAX {
            continue;
        }
        let splat = &prep.splats[s];
        let basis = rest_basis(cloud.sh_degree(), splat.view_dir);
        for c in 0..3 {
            if !splat.rgb_active[c] {
                continue;
            }
            let dc = d_color[g][c];
            grad.sh_dc[g * 3 + c] = dc * SH_C0;
            for k in 0..n_rest {
                grad.sh_rest[g * rest_w + k * 3 + c] = dc * basis[k];
            }
        }
        let sigma = splat.alpha_base;
        grad.raw_opacity[g] = d_alpha_base[g] * sigma * (1.0 - sigma);
    }
    Ok(grad)
}
