//! Image metrics, procedural scenes and camera rig files.

pub mod metrics;
pub mod rig;
pub mod scene;

pub use metrics::{mean_psnr, mean_ssim, mse, psnr, ssim};
pub use rig::{read_rig, write_rig, RigCamera, Split};
pub use scene::{generate_scene, Scene, SceneSpec};
