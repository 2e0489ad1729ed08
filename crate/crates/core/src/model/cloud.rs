use crate::error::{Error, Result};

/// Highest SH degree the toolkit understands.
pub const MAX_SH_DEGREE: u32 = 3;

/// Number of SH coefficients per color channel for `degree`, DC included.
pub const fn sh_coeff_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Width of one SH-rest row: three channels times the non-DC coefficients.
pub const fn sh_rest_width(degree: u32) -> usize {
    3 * (sh_coeff_count(degree) - 1)
}

pub(crate) fn check_degree(degree: u32) -> Result<()> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    Ok(())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One Gaussian, in raw (pre-activation) parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub sh_dc: [f64; 3],
    /// Per-coefficient interleaved RGB: `[c1.r, c1.g, c1.b, c2.r, ...]`.
    pub sh_rest: Vec<f64>,
    pub raw_opacity: f64,
    pub raw_scale: [f64; 3],
    /// Quaternion `w, x, y, z`.
    pub rotation: [f64; 4],
}

/// Column store of N Gaussians.
///
/// Every attribute lives in its own flat plane so the pipeline stages can
/// stream whole planes; row `i` of a plane with width `w` is
/// `plane[i * w..(i + 1) * w]`. SH-rest rows use a per-coefficient layout
/// with the three channels interleaved, so truncating to a lower degree is a
/// prefix of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    sh_degree: u32,
    pub positions: Vec<f64>,
    pub sh_dc: Vec<f64>,
    pub sh_rest: Vec<f64>,
    pub raw_opacity: Vec<f64>,
    pub raw_scale: Vec<f64>,
    pub rotation: Vec<f64>,
}

impl GaussianCloud {
    pub fn empty(sh_degree: u32) -> Result<Self> {
        check_degree(sh_degree)?;
        Ok(Self {
            sh_degree,
            positions: Vec::new(),
            sh_dc: Vec::new(),
            sh_rest: Vec::new(),
            raw_opacity: Vec::new(),
            raw_scale: Vec::new(),
            rotation: Vec::new(),
        })
    }

    /// Builds a cloud from complete planes, checking that all widths agree.
    pub fn from_planes(
        sh_degree: u32,
        positions: Vec<f64>,
        sh_dc: Vec<f64>,
        sh_rest: Vec<f64>,
        raw_opacity: Vec<f64>,
        raw_scale: Vec<f64>,
        rotation: Vec<f64>,
    ) -> Result<Self> {
        let cloud = Self {
            sh_degree,
            positions,
            sh_dc,
            sh_rest,
            raw_opacity,
            raw_scale,
            rotation,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        check_degree(self.sh_degree)?;
        let n = self.raw_opacity.len();
        let planes = [
            ("positions", self.positions.len(), 3),
            ("sh_dc", self.sh_dc.len(), 3),
            ("sh_rest", self.sh_rest.len(), self.rest_width()),
            ("raw_scale", self.raw_scale.len(), 3),
            ("rotation", self.rotation.len(), 4),
        ];
        for (name, len, width) in planes {
            if len != n * width {
                return Err(Error::Shape(format!(
                    "{name} plane has {len} values, expected {n} x {width}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.raw_opacity.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.raw_opacity.is_empty()
    }

    #[inline]
    pub fn sh_degree(&self) -> u32 {
        self.sh_degree
    }

    #[inline]
    pub fn rest_width(&self) -> usize {
        sh_rest_width(self.sh_degree)
    }

    /// Total SH coefficients stored per Gaussian (DC plus rest, all channels).
    pub fn sh_elements_per_gaussian(&self) -> usize {
        3 + self.rest_width()
    }

    #[inline]
    pub fn position(&self, i: usize) -> [f64; 3] {
        row3(&self.positions, i)
    }

    #[inline]
    pub fn dc(&self, i: usize) -> [f64; 3] {
        row3(&self.sh_dc, i)
    }

    #[inline]
    pub fn rest(&self, i: usize) -> &[f64] {
        let w = self.rest_width();
        &self.sh_rest[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn rest_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.rest_width();
        &mut self.sh_rest[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn raw_scale(&self, i: usize) -> [f64; 3] {
        row3(&self.raw_scale, i)
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let r = &self.rotation[i * 4..i * 4 + 4];
        [r[0], r[1], r[2], r[3]]
    }

    /// Activated opacity, in (0, 1).
    #[inline]
    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.raw_opacity[i])
    }

    /// Activated scale, componentwise positive.
    #[inline]
    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.raw_scale(i).map(f64::exp)
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.position(i),
            sh_dc: self.dc(i),
            sh_rest: self.rest(i).to_vec(),
            raw_opacity: self.raw_opacity[i],
            raw_scale: self.raw_scale(i),
            rotation: self.rotation(i),
        }
    }

    pub fn push(&mut self, g: &Gaussian) -> Result<()> {
        if g.sh_rest.len() != self.rest_width() {
            return Err(Error::Shape(format!(
                "sh_rest row has {} values, degree {} needs {}",
                g.sh_rest.len(),
                self.sh_degree,
                self.rest_width()
            )));
        }
        self.positions.extend_from_slice(&g.position);
        self.sh_dc.extend_from_slice(&g.sh_dc);
        self.sh_rest.extend_from_slice(&g.sh_rest);
        self.raw_opacity.push(g.raw_opacity);
        self.raw_scale.extend_from_slice(&g.raw_scale);
        self.rotation.extend_from_slice(&g.rotation);
        Ok(())
    }

    /// Gathers the listed rows, in the given order, into a new cloud.
    pub fn select(&self, indices: &[usize]) -> GaussianCloud {
        let w = self.rest_width();
        let mut out = GaussianCloud {
            sh_degree: self.sh_degree,
            positions: Vec::with_capacity(indices.len() * 3),
            sh_dc: Vec::with_capacity(indices.len() * 3),
            sh_rest: Vec::with_capacity(indices.len() * w),
            raw_opacity: Vec::with_capacity(indices.len()),
            raw_scale: Vec::with_capacity(indices.len() * 3),
            rotation: Vec::with_capacity(indices.len() * 4),
        };
        for &i in indices {
            out.positions.extend_from_slice(&self.positions[i * 3..i * 3 + 3]);
            out.sh_dc.extend_from_slice(&self.sh_dc[i * 3..i * 3 + 3]);
            out.sh_rest.extend_from_slice(self.rest(i));
            out.raw_opacity.push(self.raw_opacity[i]);
            out.raw_scale.extend_from_slice(&self.raw_scale[i * 3..i * 3 + 3]);
            out.rotation.extend_from_slice(&self.rotation[i * 4..i * 4 + 4]);
        }
        out
    }

    /// Keeps only the SH coefficients up to `to_degree`.
    pub fn truncate_sh(&self, to_degree: u32) -> Result<GaussianCloud> {
        sh_truncate(self, to_degree)
    }

    /// Returns a copy with SH rows zero-padded up to `to_degree`.
    pub fn pad_sh(&self, to_degree: u32) -> Result<GaussianCloud> {
        check_degree(to_degree)?;
        if to_degree < self.sh_degree {
            return Err(Error::InvalidArgument(format!(
                "cannot pad degree {} down to {to_degree}",
                self.sh_degree
            )));
        }
        let (old_w, new_w) = (self.rest_width(), sh_rest_width(to_degree));
        let mut rest = vec![0.0; self.len() * new_w];
        for i in 0..self.len() {
            rest[i * new_w..i * new_w + old_w].copy_from_slice(self.rest(i));
        }
        let mut out = self.clone();
        out.sh_degree = to_degree;
        out.sh_rest = rest;
        Ok(out)
    }
}

#[inline]
fn row3(plane: &[f64], i: usize) -> [f64; 3] {
    [plane[i * 3], plane[i * 3 + 1], plane[i * 3 + 2]]
}

/// Drops every SH band above `to_degree`; all other planes are copied.
pub fn sh_truncate(cloud: &GaussianCloud, to_degree: u32) -> Result<GaussianCloud> {
    if to_degree > cloud.sh_degree {
        return Err(Error::InvalidTruncation {
            from: cloud.sh_degree,
            to: to_degree,
        });
    }
    if to_degree == cloud.sh_degree {
        return Ok(cloud.clone());
    }
    let new_w = sh_rest_width(to_degree);
    let mut rest = Vec::with_capacity(cloud.len() * new_w);
    for i in 0..cloud.len() {
        rest.extend_from_slice(&cloud.rest(i)[..new_w]);
    }
    Ok(GaussianCloud {
        sh_degree: to_degree,
        positions: cloud.positions.clone(),
        sh_dc: cloud.sh_dc.clone(),
        sh_rest: rest,
        raw_opacity: cloud.raw_opacity.clone(),
        raw_scale: cloud.raw_scale.clone(),
        rotation: cloud.rotation.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(degree: u32, n: usize) -> GaussianCloud {
        let mut cloud = GaussianCloud::empty(degree).unwrap();
        for i in 0..n {
            let f = i as f64;
            cloud
                .push(&Gaussian {
                    position: [f, f + 0.5, -f],
                    sh_dc: [0.1 * f, 0.2, 0.3],
                    sh_rest: (0..sh_rest_width(degree)).map(|k| k as f64 + f).collect(),
                    raw_opacity: 0.3 * f - 1.0,
                    raw_scale: [-1.0, -2.0, -0.5],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                })
                .unwrap();
        }
        cloud
    }

    #[test]
    fn rest_widths() {
        assert_eq!(sh_rest_width(0), 0);
        assert_eq!(sh_rest_width(1), 9);
        assert_eq!(sh_rest_width(2), 24);
        assert_eq!(sh_rest_width(3), 45);
    }

    #[test]
    fn truncate_three_to_two_drops_21_elements() {
        let cloud = sample(3, 4);
        let small = sh_truncate(&cloud, 2).unwrap();
        assert_eq!(cloud.sh_elements_per_gaussian(), 48);
        assert_eq!(small.sh_elements_per_gaussian(), 27);
        for i in 0..4 {
            assert_eq!(small.rest(i), &cloud.rest(i)[..24]);
        }
        assert_eq!(small.sh_dc, cloud.sh_dc);
        assert_eq!(small.positions, cloud.positions);
        assert_eq!(small.raw_opacity, cloud.raw_opacity);
    }

    #[test]
    fn truncate_to_same_degree_is_identity() {
        let cloud = sample(2, 3);
        assert_eq!(sh_truncate(&cloud, 2).unwrap(), cloud);
    }

    #[test]
    fn truncate_upwards_is_rejected() {
        let cloud = sample(1, 2);
        assert!(matches!(
            sh_truncate(&cloud, 2),
            Err(Error::InvalidTruncation { from: 1, to: 2 })
        ));
    }

    #[test]
    fn from_planes_checks_widths() {
        let err = GaussianCloud::from_planes(
            1,
            vec![0.0; 3],
            vec![0.0; 3],
            vec![0.0; 8],
            vec![0.0],
            vec![0.0; 3],
            vec![1.0, 0.0, 0.0, 0.0],
        );
        assert!(matches!(err, Err(Error::Shape(_))));
        assert!(matches!(GaussianCloud::empty(4), Err(Error::UnsupportedDegree(4))));
    }

    #[test]
    fn activations() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((sigmoid(logit(0.8)) - 0.8).abs() < 1e-12);
        for x in [-30.0, -1.0, 0.0, 2.0, 30.0] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s <= 1.0);
        }
        let cloud = sample(0, 2);
        assert!(cloud.scale(1).iter().all(|&s| s > 0.0));
    }

    #[test]
    fn select_preserves_rows() {
        let cloud = sample(1, 5);
        let sub = cloud.select(&[4, 1]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.get(0), cloud.get(4));
        assert_eq!(sub.get(1), cloud.get(1));
    }
}
