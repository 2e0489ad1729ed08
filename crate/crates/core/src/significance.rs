//! Global significance scoring, pruning and co-adaptation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::appearance::Photometric;
use crate::error::{Error, Result};
use crate::model::{Camera, GaussianCloud};
use crate::optim::{fit, FitTrace, LearningRates};
pub use crate::render::SignificanceMode;
use crate::render::{render, View};

pub const DEFAULT_BETA: f64 = 0.1;
pub const VOLUME_PERCENTILE: f64 = 0.9;

/// Per-Gaussian significance scores and the parameters that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceVector {
    pub scores: Vec<f64>,
    pub beta: f64,
    pub v_max90: f64,
    pub mode: SignificanceMode,
}

impl SignificanceVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Ellipsoid volume `4/3·π·abc` over the activated scales.
pub fn gaussian_volume(cloud: &GaussianCloud, i: usize) -> f64 {
    let [a, b, c] = cloud.scale(i);
    4.0 / 3.0 * PI * a * b * c
}

/// Nearest-rank 90th percentile of `volumes` (ascending).
pub fn volume_percentile90(volumes: &[f64]) -> f64 {
    if volumes.is_empty() {
        return 0.0;
    }
    let mut sorted = volumes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (VOLUME_PERCENTILE * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Volume factor `min(V / V_max90, 1)^β`.
#[inline]
pub fn volume_weight(volume: f64, v_max90: f64, beta: f64) -> f64 {
    (volume / v_max90).min(1.0).powf(beta)
}

/// Scores every Gaussian by its accumulated contribution over all pixels of
/// all `views`, scaled by the volume factor.
///
/// Views are rendered one after another and their statistics summed in view
/// order.
pub fn compute_global_significance(
    cloud: &GaussianCloud,
    views: &[Camera],
    beta: f64,
    mode: SignificanceMode,
) -> Result<SignificanceVector> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let mut weight = vec![0.0; cloud.len()];
    for cam in views {
        let stats = render(cloud, cam, Some(mode)).stats.expect("stats requested");
        for (w, s) in weight.iter_mut().zip(&stats.weight_sum) {
            *w += s;
        }
    }
    let volumes: Vec<f64> = (0..cloud.len()).map(|i| gaussian_volume(cloud, i)).collect();
    let v_max90 = volume_percentile90(&volumes);
    let scores = weight
        .iter()
        .zip(&volumes)
        .map(|(&w, &v)| if w == 0.0 { 0.0 } else { w * volume_weight(v, v_max90, beta) })
        .collect();
    Ok(SignificanceVector {
        scores,
        beta,
        v_max90,
        mode,
    })
}

/// Activated opacities, for ranking by opacity alone.
pub fn opacity_scores(cloud: &GaussianCloud) -> Vec<f64> {
    (0..cloud.len()).map(|i| cloud.opacity(i)).collect()
}

/// Indices ordered from least to most significant. Equal scores rank the
/// higher index as less significant, so lower indices survive ties.
pub fn significance_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
    order
}

/// `floor(ratio · n)`, tolerant of decimal ratios like 0.29 that land just
/// below an integer in binary.
pub fn fraction_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Old-to-new index bookkeeping for a pruned cloud.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptIndexMap {
    /// New index of each old Gaussian, `None` when removed.
    pub old_to_new: Vec<Option<usize>>,
    /// Old index of each survivor, ascending.
    pub kept: Vec<usize>,
}

impl KeptIndexMap {
    pub fn identity(n: usize) -> Self {
        Self {
            old_to_new: (0..n).map(Some).collect(),
            kept: (0..n).collect(),
        }
    }

    /// Map of pruning with `self` first and `next` second.
    pub fn then(&self, next: &KeptIndexMap) -> KeptIndexMap {
        KeptIndexMap {
            old_to_new: self
                .old_to_new
                .iter()
                .map(|m| m.and_then(|mid| next.old_to_new[mid]))
                .collect(),
            kept: next.kept.iter().map(|&mid| self.kept[mid]).collect(),
        }
    }
}

/// Removes the `floor(ratio · N)` least significant Gaussians.
pub fn prune(cloud: &GaussianCloud, scores: &[f64], ratio: f64) -> Result<(GaussianCloud, KeptIndexMap)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("prune ratio must be in [0, 1), got {ratio}")));
    }
    prune_count(cloud, scores, fraction_count(ratio, cloud.len()))
}

/// Removes exactly `remove` Gaussians, least significant first.
pub fn prune_count(cloud: &GaussianCloud, scores: &[f64], remove: usize) -> Result<(GaussianCloud, KeptIndexMap)> {
    if scores.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} Gaussians",
            scores.len(),
            cloud.len()
        )));
    }
    let order = significance_order(scores);
    let mut keep = vec![true; cloud.len()];
    for &i in order.iter().take(remove) {
        keep[i] = false;
    }
    let kept: Vec<usize> = (0..cloud.len()).filter(|&i| keep[i]).collect();
    let mut old_to_new = vec![None; cloud.len()];
    for (new, &old) in kept.iter().enumerate() {
        old_to_new[old] = Some(new);
    }
    Ok((cloud.select(&kept), KeptIndexMap { old_to_new, kept }))
}

/// Fine-tunes SH and opacity of the survivors against the training views.
///
/// `step_size` scales the per-attribute rates in [`LearningRates::FINETUNE`].
/// Geometry and Gaussian count are left untouched.
pub fn co_adapt(
    cloud: &GaussianCloud,
    views: &[View],
    iterations: usize,
    step_size: f64,
) -> Result<(GaussianCloud, FitTrace)> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let rates = LearningRates::FINETUNE.scaled(step_size);
    let mut state = cloud.clone();
    let trace = fit(
        &Photometric { views },
        &mut state,
        &[rates.sh_dc, rates.sh_rest, rates.raw_opacity],
        iterations,
    )?;
    Ok((state, trace))
}

const SIDECAR_MAGIC: &[u8; 4] = b"GSSC";

/// Score sidecar: `"GSSC"`, `u64` count, then `f32` scores, little-endian.
pub fn write_scores(scores: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + scores.len() * 4);
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&(scores.len() as u64).to_le_bytes());
    for &s in scores {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out
}

pub fn read_scores(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 12 || &bytes[..4] != SIDECAR_MAGIC {
        return Err(Error::InvalidArgument("not a GSSC score file".into()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != n.saturating_mul(4) {
        return Err(Error::InvalidArgument(format!(
            "score file declares {n} scores but holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}
