//! Compression of 3D Gaussian splatting scenes: a CPU reference renderer,
//! significance-based pruning, SH distillation, vector quantization of SH
//! coefficients and a compact half-precision container.

mod appearance;
pub mod container;
pub mod distill;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod ply;
pub mod render;
pub mod significance;
pub mod vq;

pub use appearance::mean_photometric_loss;
pub use error::{Error, Result};
pub use image::Image;
pub use model::{Camera, Gaussian, GaussianCloud};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput, PipelineReport};
