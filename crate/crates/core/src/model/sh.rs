//! Real spherical harmonics up to degree 3, in the sign convention used by
//! reference 3D Gaussian splatting exporters.

use crate::error::Result;

use super::cloud::{check_degree, sh_coeff_count};

pub const SH_C0: f64 = 0.28209479177387814;
pub const SH_C1: f64 = 0.48860251190291992;
pub const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.54627421529603959,
];
pub const SH_C3: [f64; 7] = [
    -0.59004358992664352,
    2.8906114426405538,
    -0.45704579946446572,
    0.37317633259011540,
    -0.45704579946446572,
    1.4453057213202769,
    -0.59004358992664352,
];

/// Basis values for every non-DC coefficient up to `degree`, in storage order.
///
/// Only the first `sh_coeff_count(degree) - 1` entries are meaningful.
pub fn rest_basis(degree: u32, dir: [f64; 3]) -> [f64; 15] {
    let [x, y, z] = dir;
    let mut b = [0.0; 15];
    if degree == 0 {
        return b;
    }
    b[0] = -SH_C1 * y;
    b[1] = SH_C1 * z;
    b[2] = -SH_C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[3] = SH_C2[0] * xy;
    b[4] = SH_C2[1] * yz;
    b[5] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[6] = SH_C2[3] * xz;
    b[7] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[8] = SH_C3[0] * y * (3.0 * xx - yy);
    b[9] = SH_C3[1] * xy * z;
    b[10] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[11] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[12] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[13] = SH_C3[5] * z * (xx - yy);
    b[14] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Color before the low clamp: `0.5 + Σ c·Y` per channel.
pub fn eval_sh_unclamped(dc: [f64; 3], rest: &[f64], degree: u32, dir: [f64; 3]) -> [f64; 3] {
    let basis = rest_basis(degree, dir);
    let mut rgb = [0.5 + SH_C0 * dc[0], 0.5 + SH_C0 * dc[1], 0.5 + SH_C0 * dc[2]];
    for (k, y) in basis[..sh_coeff_count(degree) - 1].iter().enumerate() {
        let c = &rest[k * 3..k * 3 + 3];
        rgb[0] += y * c[0];
        rgb[1] += y * c[1];
        rgb[2] += y * c[2];
    }
    rgb
}

/// View-dependent color of one Gaussian, clamped below at zero.
pub fn eval_sh(dc: [f64; 3], rest: &[f64], degree: u32, dir: [f64; 3]) -> Result<[f64; 3]> {
    check_degree(degree)?;
    Ok(eval_sh_unclamped(dc, rest, degree, dir).map(|c| c.max(0.0)))
}
