//! `splatpack`: compress 3D Gaussian splatting scenes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use splatpack_core::container::{self, decode, encode, fp16_round, fp16_round_codebook};
use splatpack_core::distill::{distill, PseudoViewConfig};
use splatpack_core::eval::{generate_scene, read_rig, write_rig, SceneSpec, Split};
use splatpack_core::pipeline::{STREAM_KMEANS, STREAM_PSEUDO_VIEWS};
use splatpack_core::ply::{read_ply, write_ply};
use splatpack_core::render::{render, render_views, SignificanceMode, View};
use splatpack_core::significance::{co_adapt, compute_global_significance, prune, read_scores, write_scores};
use splatpack_core::vq::{quantize, vq_finetune, AssignmentVector, Codebook, VqConfig};
use splatpack_core::{run_pipeline, Camera, GaussianCloud, PipelineConfig};

#[derive(Parser)]
#[command(name = "splatpack", version, about = "Prune, distill, quantize and pack 3D Gaussian splatting scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write a compressed container.
    #[command(alias = "pipeline")]
    Run(StageArgs),
    /// Score every Gaussian and write a score file.
    Significance(StageArgs),
    /// Remove the least significant Gaussians, then co-adapt the survivors.
    Prune(StageArgs),
    /// Truncate SH to `target_sh_degree` and distill from the input.
    Distill(StageArgs),
    /// Vector-quantize SH-rest, fine-tune and write a container.
    Quantize(StageArgs),
    /// Write a PLY as a half-precision container without quantization.
    Encode(IoArgs),
    /// Expand a container back into a PLY.
    Decode(IoArgs),
    /// Render a PLY or container at every rig camera to PNG.
    Render(RenderArgs),
    /// Print a summary of a PLY or container.
    Stats(StatsArgs),
    /// Generate a synthetic scene and its camera rig.
    GenScene(GenSceneArgs),
}

#[derive(Args)]
struct IoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StageArgs {
    /// PLY or container to read.
    #[arg(long)]
    input: PathBuf,
    /// JSON camera rig.
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Score file from `significance`; used instead of recomputing scores.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

/// TOML config plus one override per config field.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "prune_ratio", alias = "prune-ratio")]
    prune_ratio: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "significance_mode", alias = "significance-mode")]
    significance_mode: Option<ModeArg>,
    #[arg(long = "target_sh_degree", alias = "target-sh-degree")]
    target_sh_degree: Option<u32>,
    #[arg(long = "pseudo_sigma", alias = "pseudo-sigma")]
    pseudo_sigma: Option<f64>,
    #[arg(long = "pseudo_per_view", alias = "pseudo-per-view")]
    pseudo_per_view: Option<usize>,
    #[arg(long = "distill_iters", alias = "distill-iters")]
    distill_iters: Option<usize>,
    #[arg(long = "coadapt_iters", alias = "coadapt-iters")]
    coadapt_iters: Option<usize>,
    #[arg(long = "vq_ratio", alias = "vq-ratio")]
    vq_ratio: Option<f64>,
    #[arg(long = "codebook_k", alias = "codebook-k")]
    codebook_k: Option<usize>,
    #[arg(long = "lambda_decay", alias = "lambda-decay")]
    lambda_decay: Option<f64>,
    #[arg(long = "vq_finetune_iters", alias = "vq-finetune-iters")]
    vq_finetune_iters: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Literal,
    BlendWeight,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    /// Output PNG; with several cameras, `_<index>` is added before the extension.
    #[arg(long)]
    out: PathBuf,
    /// Render only this camera.
    #[arg(long)]
    view: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Also write the summary here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    Specular,
}

#[derive(Args)]
struct GenSceneArgs {
    /// PLY to write.
    #[arg(long)]
    out: PathBuf,
    /// Rig to write; defaults to `<out>.cameras.json`.
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "standard")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "n_gaussians", alias = "n-gaussians")]
    n_gaussians: Option<usize>,
    #[arg(long = "sh_degree", alias = "sh-degree")]
    sh_degree: Option<u32>,
    #[arg(long = "specular_strength", alias = "specular-strength")]
    specular_strength: Option<f64>,
    #[arg(long = "n_train_views", alias = "n-train-views")]
    n_train_views: Option<usize>,
    #[arg(long = "n_test_views", alias = "n-test-views")]
    n_test_views: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        apply!(
            seed,
            prune_ratio,
            beta,
            target_sh_degree,
            pseudo_sigma,
            pseudo_per_view,
            distill_iters,
            coadapt_iters,
            vq_ratio,
            codebook_k,
            lambda_decay,
            vq_finetune_iters
        );
        if let Some(m) = self.significance_mode {
            c.significance_mode = match m {
                ModeArg::Literal => SignificanceMode::Literal,
                ModeArg::BlendWeight => SignificanceMode::BlendWeight,
            };
        }
        c.validate().context("invalid config")?;
        Ok(c)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Decoded container contents, or a PLY with no quantization.
struct Loaded {
    cloud: GaussianCloud,
    codebook: Codebook,
    assignments: AssignmentVector,
    bytes: usize,
    is_container: bool,
}

fn load(path: &Path) -> Result<Loaded> {
    let bytes = read(path)?;
    let n = bytes.len();
    if bytes.starts_with(&container::MAGIC) {
        let (cloud, codebook, assignments) = decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        Ok(Loaded {
            cloud,
            codebook,
            assignments,
            bytes: n,
            is_container: true,
        })
    } else {
        let cloud = read_ply(&bytes).with_context(|| format!("reading PLY {}", path.display()))?;
        Ok(Loaded {
            codebook: Codebook::empty(cloud.rest_width()),
            assignments: AssignmentVector::none(cloud.len()),
            cloud,
            bytes: n,
            is_container: false,
        })
    }
}

fn load_rig(path: &Path) -> Result<(Vec<Camera>, Vec<Camera>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading cameras {}", path.display()))?;
    let rig = read_rig(&text).with_context(|| format!("parsing cameras {}", path.display()))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (cam, split) in rig {
        match split {
            Split::Train => train.push(cam),
            Split::Test => test.push(cam),
        }
    }
    if train.is_empty() {
        bail!("{} has no training cameras", path.display());
    }
    Ok((train, test))
}

fn self_views(cloud: &GaussianCloud, cameras: &[Camera]) -> Vec<View> {
    cameras
        .iter()
        .map(|c| View {
            camera: c.clone(),
            target: render(cloud, c, None).image,
        })
        .collect()
}

fn report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn write_report(out: &Path, report: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    write(&report_path(out), text.as_bytes())
}

fn scores_for(args: &StageArgs, cloud: &GaussianCloud, train: &[Camera], config: &PipelineConfig) -> Result<Vec<f64>> {
    let scores = match &args.scores {
        Some(path) => read_scores(&read(path)?).context("stage `significance`")?,
        None => {
            compute_global_significance(cloud, train, config.beta, config.significance_mode)
                .context("stage `significance`")?
                .scores
        }
    };
    if scores.len() != cloud.len() {
        bail!("stage `significance`: {} scores for {} Gaussians", scores.len(), cloud.len());
    }
    Ok(scores)
}

fn cmd_run(args: &StageArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let input = load(&args.input)?;
    let (train, test) = load_rig(&args.cameras)?;
    let out = run_pipeline(&input.cloud, &train, &test, &config)?;
    write(&args.out, &out.container)?;
    let mut report = serde_json::to_value(&out.report)?;
    report["container_path"] = json!(args.out.display().to_string());
    write_report(&args.out, &report)?;
    println!(
        "{} -> {} Gaussians, {} bytes ({:.2}x)",
        out.report.input_gaussians,
        out.report.final_gaussians,
        out.container.len(),
        out.report.compression_ratio
    );
    Ok(())
}

fn cmd_significance(args: &StageArgs) -> Result<()> {
    let start = Instant::now();
    let config = args.config.resolve()?;
    let input = load(&args.input)?;
    let (train, _) = load_rig(&args.cameras)?;
    let sv = compute_global_significance(&input.cloud, &train, config.beta, config.significance_mode)
        .context("stage `significance`")?;
    let bytes = write_scores(&sv.scores);
    write(&args.out, &bytes)?;
    let nonzero = sv.scores.iter().filter(|&&s| s > 0.0).count();
    write_report(
        &args.out,
        &json!({
            "stage": "significance",
            "gaussians": sv.len(),
            "nonzero_scores": nonzero,
            "beta": sv.beta,
            "v_max90": sv.v_max90,
            "mode": sv.mode,
            "bytes": bytes.len(),
            "seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_prune(args: &StageArgs) -> Result<()> {
    let start = Instant::now();
    let config = args.config.resolve()?;
    let input = load(&args.input)?;
    let (train, _) = load_rig(&args.cameras)?;
    let scores = scores_for(args, &input.cloud, &train, &config)?;
    let (pruned, _) = prune(&input.cloud, &scores, config.prune_ratio).context("stage `prune`")?;
    let views = self_views(&input.cloud, &train);
    let (adapted, trace) = co_adapt(&pruned, &views, config.coadapt_iters, 1.0).context("stage `co_adapt`")?;
    let bytes = write_ply(&adapted);
    write(&args.out, &bytes)?;
    write_report(
        &args.out,
        &json!({
            "stage": "prune",
            "input_gaussians": input.cloud.len(),
            "gaussians": adapted.len(),
            "prune_ratio": config.prune_ratio,
            "coadapt_iters": config.coadapt_iters,
            "loss": trace.losses,
            "bytes": bytes.len(),
            "seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_distill(args: &StageArgs) -> Result<()> {
    let start = Instant::now();
    let config = args.config.resolve()?;
    let input = load(&args.input)?;
    let (train, _) = load_rig(&args.cameras)?;
    let pseudo = PseudoViewConfig {
        sigma: config.pseudo_sigma,
        count_per_view: config.pseudo_per_view,
        seed: config.stage_seed(STREAM_PSEUDO_VIEWS),
    };
    let (student, trace) = distill(&input.cloud, config.target_sh_degree, &train, &pseudo, config.distill_iters)
        .context("stage `distill`")?;
    let bytes = write_ply(&student);
    write(&args.out, &bytes)?;
    write_report(
        &args.out,
        &json!({
            "stage": "distill",
            "gaussians": student.len(),
            "from_degree": input.cloud.sh_degree(),
            "to_degree": student.sh_degree(),
            "distill_iters": config.distill_iters,
            "loss": trace.losses,
            "bytes": bytes.len(),
            "seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_quantize(args: &StageArgs) -> Result<()> {
    let start = Instant::now();
    let config = args.config.resolve()?;
    let input = load(&args.input)?;
    let (train, _) = load_rig(&args.cameras)?;
    let scores = scores_for(args, &input.cloud, &train, &config)?;
    let vq = VqConfig {
        ratio: config.vq_ratio,
        codebook_size: config.codebook_k,
        decay: config.lambda_decay,
        seed: config.stage_seed(STREAM_KMEANS),
        ..VqConfig::default()
    };
    let q = quantize(&input.cloud, &scores, &vq).context("stage `vq`")?;
    let views = self_views(&input.cloud, &train);
    let (tuned, codebook, _) = vq_finetune(&q.cloud, &q.codebook, &q.assignments, &views, config.vq_finetune_iters)
        .context("stage `vq_finetune`")?;
    let bytes = encode(&fp16_round(&tuned), &fp16_round_codebook(&codebook), &q.assignments)
        .context("stage `encode`")?;
    write(&args.out, &bytes)?;
    write_report(
        &args.out,
        &json!({
            "stage": "quantize",
            "gaussians": tuned.len(),
            "vq_members": q.assignments.member_count(),
            "codebook_k": codebook.k(),
            "bytes": bytes.len(),
            "seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_encode(args: &IoArgs) -> Result<()> {
    let input = load(&args.input)?;
    let bytes = encode(
        &fp16_round(&input.cloud),
        &fp16_round_codebook(&input.codebook),
        &input.assignments,
    )
    .context("stage `encode`")?;
    write(&args.out, &bytes)?;
    write_report(
        &args.out,
        &json!({
            "stage": "encode",
            "gaussians": input.cloud.len(),
            "input_bytes": input.bytes,
            "bytes": bytes.len(),
        }),
    )
}

fn cmd_decode(args: &IoArgs) -> Result<()> {
    let bytes = read(&args.input)?;
    let (cloud, codebook, assignments) = decode(&bytes).context("stage `decode`")?;
    let ply = write_ply(&cloud);
    write(&args.out, &ply)?;
    write_report(
        &args.out,
        &json!({
            "stage": "decode",
            "gaussians": cloud.len(),
            "sh_degree": cloud.sh_degree(),
            "vq_members": assignments.member_count(),
            "codebook_k": codebook.k(),
            "input_bytes": bytes.len(),
            "bytes": ply.len(),
        }),
    )
}

fn indexed_path(out: &Path, index: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "png".into());
    out.with_file_name(format!("{stem}_{index:03}.{ext}"))
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let input = load(&args.input)?;
    let text = fs::read_to_string(&args.cameras).with_context(|| format!("reading cameras {}", args.cameras.display()))?;
    let mut cams: Vec<Camera> = read_rig(&text)?.into_iter().map(|(c, _)| c).collect();
    if let Some(v) = args.view {
        if v >= cams.len() {
            bail!("view {v} out of range for {} cameras", cams.len());
        }
        cams = vec![cams.swap_remove(v)];
    }
    if cams.is_empty() {
        bail!("{} has no cameras", args.cameras.display());
    }
    let images = render_views(&input.cloud, &cams);
    let mut written = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let path = if images.len() == 1 { args.out.clone() } else { indexed_path(&args.out, i) };
        image::save_buffer(&path, &img.to_rgb8(), img.width(), img.height(), image::ColorType::Rgb8)
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path.display().to_string());
    }
    write_report(&args.out, &json!({ "stage": "render", "images": written }))
}

fn summary(input: &Loaded) -> Value {
    let cloud = &input.cloud;
    let mean_opacity = if cloud.is_empty() {
        0.0
    } else {
        (0..cloud.len()).map(|i| cloud.opacity(i)).sum::<f64>() / cloud.len() as f64
    };
    json!({
        "format": if input.is_container { "container" } else { "ply" },
        "bytes": input.bytes,
        "gaussians": cloud.len(),
        "sh_degree": cloud.sh_degree(),
        "sh_rest_width": cloud.rest_width(),
        "vq_members": input.assignments.member_count(),
        "codebook_k": input.codebook.k(),
        "mean_opacity": mean_opacity,
        "ply_bytes": write_ply(cloud).len(),
    })
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let input = load(&args.input)?;
    let text = serde_json::to_string_pretty(&summary(&input))?;
    println!("{text}");
    if let Some(out) = &args.out {
        write(out, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_gen_scene(args: &GenSceneArgs) -> Result<()> {
    let base = match args.preset {
        Preset::Standard => SceneSpec::standard(args.seed),
        Preset::Specular => SceneSpec::specular(args.seed),
    };
    let spec = SceneSpec {
        n_gaussians: args.n_gaussians.unwrap_or(base.n_gaussians),
        sh_degree: args.sh_degree.unwrap_or(base.sh_degree),
        specular_strength: args.specular_strength.unwrap_or(base.specular_strength),
        n_train_views: args.n_train_views.unwrap_or(base.n_train_views),
        n_test_views: args.n_test_views.unwrap_or(base.n_test_views),
        width: args.width.unwrap_or(base.width),
        height: args.height.unwrap_or(base.height),
        ..base
    };
    let scene = generate_scene(&spec).context("generating scene")?;
    write(&args.out, &write_ply(&scene.cloud))?;
    let mut rig: Vec<(Camera, Split)> = scene.train_cameras().into_iter().map(|c| (c, Split::Train)).collect();
    rig.extend(scene.test_cameras().into_iter().map(|c| (c, Split::Test)));
    let cams_path = args.cameras.clone().unwrap_or_else(|| {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".cameras.json");
        PathBuf::from(s)
    });
    write(&cams_path, write_rig(&rig).as_bytes())?;
    println!(
        "wrote {} Gaussians to {} and {} cameras to {}",
        scene.cloud.len(),
        args.out.display(),
        rig.len(),
        cams_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Significance(a) => cmd_significance(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Render(a) => cmd_render(a),
        Command::Stats(a) => cmd_stats(a),
        Command::GenScene(a) => cmd_gen_scene(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
