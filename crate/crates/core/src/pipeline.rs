//! End-to-end compression: significance, pruning, co-adaptation, SH
//! distillation, vector quantization, fine-tuning and encoding.
//!
//! Stage randomness comes from one root seed. Each consumer draws its own
//! seed as the first `u64` of a ChaCha8 stream keyed by the root seed:
//! stream 1 for pseudo-view jitter, stream 2 for k-means seeding.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::container::{decode, encode, fp16_round, fp16_round_codebook, MAX_CODEBOOK_SIZE};
use crate::distill::{distill, PseudoViewConfig, DEFAULT_PSEUDO_SIGMA};
use crate::error::{Error, Result};
use crate::eval::{mean_psnr, mean_ssim};
use crate::image::Image;
use crate::model::{Camera, GaussianCloud};
use crate::ply::write_ply;
use crate::render::{render_views, View};
use crate::significance::{co_adapt, compute_global_significance, prune, SignificanceMode, DEFAULT_BETA};
use crate::vq::{quantize, vq_finetune, AssignmentVector, Codebook, VqConfig, DEFAULT_DECAY};

pub const STREAM_PSEUDO_VIEWS: u64 = 1;
pub const STREAM_KMEANS: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub prune_ratio: f64,
    pub beta: f64,
    pub significance_mode: SignificanceMode,
    pub target_sh_degree: u32,
    pub pseudo_sigma: f64,
    pub pseudo_per_view: usize,
    pub distill_iters: usize,
    pub coadapt_iters: usize,
    pub vq_ratio: f64,
    pub codebook_k: usize,
    pub lambda_decay: f64,
    pub vq_finetune_iters: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prune_ratio: 0.66,
            beta: DEFAULT_BETA,
            significance_mode: SignificanceMode::Literal,
            target_sh_degree: 2,
            pseudo_sigma: DEFAULT_PSEUDO_SIGMA,
            pseudo_per_view: 1,
            distill_iters: 500,
            coadapt_iters: 500,
            vq_ratio: 0.6,
            codebook_k: 8192,
            lambda_decay: DEFAULT_DECAY,
            vq_finetune_iters: 500,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return bad(format!("prune_ratio must be in [0, 1), got {}", self.prune_ratio));
        }
        if !(0.0..1.0).contains(&self.vq_ratio) {
            return bad(format!("vq_ratio must be in [0, 1), got {}", self.vq_ratio));
        }
        if !(0.0..=1.0).contains(&self.lambda_decay) {
            return bad(format!("lambda_decay must be in [0, 1], got {}", self.lambda_decay));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.pseudo_sigma >= 0.0) {
            return bad(format!("pseudo_sigma must be non-negative, got {}", self.pseudo_sigma));
        }
        if self.codebook_k == 0 || self.codebook_k > MAX_CODEBOOK_SIZE {
            return bad(format!("codebook_k must be in 1..={MAX_CODEBOOK_SIZE}, got {}", self.codebook_k));
        }
        crate::model::check_degree(self.target_sh_degree)
    }

    /// Seed for the stage reading `stream`.
    pub fn stage_seed(&self, stream: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.next_u64()
    }
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn deserialize_db<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
    }
}

/// Quality and size of the scene after one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub gaussians: usize,
    pub sh_degree: u32,
    /// Mean test-view PSNR against the input cloud's renders; `"inf"` when exact.
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub input_gaussians: usize,
    pub input_sh_degree: u32,
    pub input_ply_bytes: usize,
    pub train_views: usize,
    pub test_views: usize,
    pub stages: Vec<StageReport>,
    pub final_gaussians: usize,
    pub vq_members: usize,
    pub codebook_k: usize,
    pub container_bytes: usize,
    pub compression_ratio: f64,
    pub total_seconds: f64,
}

impl PipelineReport {
    /// The report with every wall-clock field zeroed.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.total_seconds = 0.0;
        for s in &mut r.stages {
            s.seconds = 0.0;
        }
        r
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub container: Vec<u8>,
    pub report: PipelineReport,
    /// The decoded container contents.
    pub cloud: GaussianCloud,
    pub codebook: Codebook,
    pub assignments: AssignmentVector,
}

struct Evaluator {
    cameras: Vec<Camera>,
    reference: Vec<Image>,
}

impl Evaluator {
    fn measure(&self, cloud: &GaussianCloud) -> Result<(f64, f64)> {
        let imgs = render_views(cloud, &self.cameras);
        Ok((mean_psnr(&imgs, &self.reference)?, mean_ssim(&imgs, &self.reference)?))
    }
}

/// Compresses `cloud` using its own renders at the training cameras as
/// targets. Quality is reported on `test_cameras`, or on the training
/// cameras when no test cameras are given.
pub fn run_pipeline(
    cloud: &GaussianCloud,
    train_cameras: &[Camera],
    test_cameras: &[Camera],
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let start = Instant::now();
    config.validate().map_err(|e| e.in_stage("config"))?;
    cloud.validate().map_err(|e| e.in_stage("input"))?;
    if train_cameras.is_empty() {
        return Err(Error::NoViews.in_stage("input"));
    }
    if config.target_sh_degree > cloud.sh_degree() {
        return Err(Error::InvalidTruncation {
            from: cloud.sh_degree(),
            to: config.target_sh_degree,
        }
        .in_stage("distill"));
    }
    let eval_cameras = if test_cameras.is_empty() {
        train_cameras
    } else {
        test_cameras
    };
    let eval = Evaluator {
        cameras: eval_cameras.to_vec(),
        reference: render_views(cloud, eval_cameras),
    };
    let train: Vec<View> = train_cameras
        .iter()
        .zip(render_views(cloud, train_cameras))
        .map(|(c, target)| View {
            camera: c.clone(),
            target,
        })
        .collect();

    let mut stages = Vec::new();
    let mut record = |name: &str, c: &GaussianCloud, t: Instant| -> Result<()> {
        let seconds = t.elapsed().as_secs_f64();
        let (psnr, ssim) = eval.measure(c).map_err(|e| e.in_stage("evaluate"))?;
        stages.push(StageReport {
            stage: name.to_string(),
            gaussians: c.len(),
            sh_degree: c.sh_degree(),
            psnr,
            ssim,
            seconds,
        });
        Ok(())
    };
    record("input", cloud, Instant::now())?;

    let t = Instant::now();
    let scores = compute_global_significance(cloud, train_cameras, config.beta, config.significance_mode)
        .map_err(|e| e.in_stage("significance"))?;
    let (pruned, _) = prune(cloud, &scores.scores, config.prune_ratio).map_err(|e| e.in_stage("prune"))?;
    record("prune", &pruned, t)?;

    let t = Instant::now();
    let (adapted, _) = co_adapt(&pruned, &train, config.coadapt_iters, 1.0).map_err(|e| e.in_stage("co_adapt"))?;
    record("co_adapt", &adapted, t)?;

    let t = Instant::now();
    let distilled = if config.target_sh_degree < adapted.sh_degree() {
        let pseudo = PseudoViewConfig {
            sigma: config.pseudo_sigma,
            count_per_view: config.pseudo_per_view,
            seed: config.stage_seed(STREAM_PSEUDO_VIEWS),
        };
        distill(&adapted, config.target_sh_degree, train_cameras, &pseudo, config.distill_iters)
            .map_err(|e| e.in_stage("distill"))?
            .0
    } else {
        adapted
    };
    record("distill", &distilled, t)?;

    let t = Instant::now();
    let vq_scores = compute_global_significance(&distilled, train_cameras, config.beta, config.significance_mode)
        .map_err(|e| e.in_stage("vq_partition"))?;
    let vq_cfg = VqConfig {
        ratio: config.vq_ratio,
        codebook_size: config.codebook_k,
        decay: config.lambda_decay,
        seed: config.stage_seed(STREAM_KMEANS),
        ..VqConfig::default()
    };
    let q = quantize(&distilled, &vq_scores.scores, &vq_cfg).map_err(|e| e.in_stage("vq"))?;
    record("vq", &q.cloud, t)?;

    let t = Instant::now();
    let (tuned, codebook, _) = vq_finetune(&q.cloud, &q.codebook, &q.assignments, &train, config.vq_finetune_iters)
        .map_err(|e| e.in_stage("vq_finetune"))?;
    record("vq_finetune", &tuned, t)?;

    let t = Instant::now();
    let container = encode(&fp16_round(&tuned), &fp16_round_codebook(&codebook), &q.assignments)
        .map_err(|e| e.in_stage("encode"))?;
    let (decoded, codebook, assignments) = decode(&container).map_err(|e| e.in_stage("decode"))?;
    record("encode", &decoded, t)?;

    let input_ply_bytes = write_ply(cloud).len();
    let report = PipelineReport {
        config: config.clone(),
        input_gaussians: cloud.len(),
        input_sh_degree: cloud.sh_degree(),
        input_ply_bytes,
        train_views: train_cameras.len(),
        test_views: test_cameras.len(),
        stages,
        final_gaussians: decoded.len(),
        vq_members: assignments.member_count(),
        codebook_k: codebook.k(),
        container_bytes: container.len(),
        compression_ratio: input_ply_bytes as f64 / container.len() as f64,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(PipelineOutput {
        container,
        report,
        cloud: decoded,
        codebook,
        assignments,
    })
}
