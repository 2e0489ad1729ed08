use nalgebra::{Matrix3, Quaternion, UnitQuaternion};

use crate::error::{Error, Result};

/// Rotation matrix of the normalized `w, x, y, z` quaternion.
pub fn rotation_matrix(rotation: [f64; 4]) -> Result<Matrix3<f64>> {
    let [w, x, y, z] = rotation;
    let q = Quaternion::new(w, x, y, z);
    let norm = q.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidRotation);
    }
    Ok(UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner())
}

/// World-space covariance `R S Sᵀ Rᵀ` with `S = diag(exp(raw_scale))`.
pub fn covariance_from(raw_scale: [f64; 3], rotation: [f64; 4]) -> Result<Matrix3<f64>> {
    let r = rotation_matrix(rotation)?;
    let s = Matrix3::from_diagonal(&raw_scale.map(f64::exp).into());
    let m = r * s;
    Ok(m * m.transpose())
}
