//! Gaussian attributes, activation conventions, covariance and SH color.

mod camera;
mod cloud;
mod covariance;
pub mod sh;

pub use camera::Camera;
pub use cloud::{
    logit, sh_coeff_count, sh_rest_width, sh_truncate, sigmoid, Gaussian, GaussianCloud,
    MAX_SH_DEGREE,
};
pub(crate) use cloud::check_degree;
pub use covariance::{covariance_from, rotation_matrix};
pub use sh::{eval_sh, SH_C0};
