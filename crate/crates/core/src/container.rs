//! Compact binary container.
//!
//! All integers and half-precision floats are little-endian. Layout:
//!
//! | field            | type  | count                    |
//! |------------------|-------|--------------------------|
//! | magic `LGSC`     | u8    | 4                        |
//! | version (= 1)    | u16   | 1                        |
//! | count N          | u64   | 1                        |
//! | sh_degree D      | u8    | 1                        |
//! | codebook_k K     | u32   | 1                        |
//! | codebook_dim d   | u32   | 1                        |
//! | vq_member_count M| u64   | 1                        |
//! | positions        | f16   | 3N                       |
//! | sh_dc            | f16   | 3N                       |
//! | raw_opacity      | f16   | N                        |
//! | raw_scale        | f16   | 3N                       |
//! | rotation (wxyz)  | f16   | 4N                       |
//! | non-member rest  | f16   | (N − M)·d                |
//! | membership bits  | u8    | ceil(N / 8)              |
//! | code indices     | u16   | M                        |
//! | codebook         | f16   | K·d                      |
//!
//! `d` always equals the SH-rest width `3((D+1)² − 1)`. Membership is one bit
//! per Gaussian, least significant bit first, padding bits zero. Non-member
//! rest rows and code indices appear in ascending Gaussian order.

use half::f16;
use thiserror::Error;

use crate::error::Result;
use crate::model::{sh_rest_width, GaussianCloud, MAX_SH_DEGREE};
use crate::vq::{AssignmentVector, Codebook};

pub const MAGIC: [u8; 4] = *b"LGSC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 31;
pub const MAX_CODEBOOK_SIZE: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum ContainerError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unexpected end of data in {plane} at offset {offset}: need {needed} bytes, {available} available")]
    UnexpectedEof {
        plane: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{count} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("codebook of {0} codes does not fit 16-bit indices")]
    IndexWidth(usize),
    #[error("invalid header field {field}: {message}")]
    Header { field: &'static str, message: String },
    #[error("code index {code} at offset {offset} is out of range for {k} codes")]
    CodeOutOfRange { offset: usize, code: u16, k: u32 },
    #[error("membership bitmap at offset {offset}: {message}")]
    Membership { offset: usize, message: String },
    #[error("{plane} value {value} at element {index} is not representable in half precision")]
    Overflow {
        plane: &'static str,
        index: usize,
        value: f64,
    },
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u16,
    pub count: u64,
    pub sh_degree: u8,
    pub codebook_k: u32,
    pub codebook_dim: u32,
    pub vq_member_count: u64,
}

impl ContainerHeader {
    /// Exact container length implied by the header, `None` on overflow.
    pub fn total_len(&self) -> Option<usize> {
        let n = usize::try_from(self.count).ok()?;
        let m = usize::try_from(self.vq_member_count).ok()?;
        let k = self.codebook_k as usize;
        let d = self.codebook_dim as usize;
        let planes = n.checked_mul(28)?;
        let rest = n.checked_sub(m)?.checked_mul(d)?.checked_mul(2)?;
        let bitmap = n.div_ceil(8);
        let codes = m.checked_mul(2)?;
        let book = k.checked_mul(d)?.checked_mul(2)?;
        HEADER_LEN
            .checked_add(planes)?
            .checked_add(rest)?
            .checked_add(bitmap)?
            .checked_add(codes)?
            .checked_add(book)
    }

    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..14].copy_from_slice(&self.count.to_le_bytes());
        b[14] = self.sh_degree;
        b[15..19].copy_from_slice(&self.codebook_k.to_le_bytes());
        b[19..23].copy_from_slice(&self.codebook_dim.to_le_bytes());
        b[23..31].copy_from_slice(&self.vq_member_count.to_le_bytes());
        b
    }
}

fn header_err(field: &'static str, message: impl Into<String>) -> ContainerError {
    ContainerError::Header {
        field,
        message: message.into(),
    }
}

/// Parses and checks the fixed-size header.
pub fn read_header(bytes: &[u8]) -> Result<ContainerHeader, ContainerError> {
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::UnexpectedEof {
            plane: "header",
            offset: 0,
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let h = ContainerHeader {
        version: u16::from_le_bytes(bytes[4..6].try_into().unwrap()),
        count: u64::from_le_bytes(bytes[6..14].try_into().unwrap()),
        sh_degree: bytes[14],
        codebook_k: u32::from_le_bytes(bytes[15..19].try_into().unwrap()),
        codebook_dim: u32::from_le_bytes(bytes[19..23].try_into().unwrap()),
        vq_member_count: u64::from_le_bytes(bytes[23..31].try_into().unwrap()),
    };
    if h.version != VERSION {
        return Err(ContainerError::UnsupportedVersion(h.version));
    }
    if h.sh_degree as u32 > MAX_SH_DEGREE {
        return Err(header_err("sh_degree", format!("{} exceeds {MAX_SH_DEGREE}", h.sh_degree)));
    }
    if h.codebook_k as usize > MAX_CODEBOOK_SIZE {
        return Err(ContainerError::IndexWidth(h.codebook_k as usize));
    }
    let width = sh_rest_width(h.sh_degree as u32);
    if h.codebook_dim as usize != width {
        return Err(header_err(
            "codebook_dim",
            format!("{} does not match SH-rest width {width}", h.codebook_dim),
        ));
    }
    if h.vq_member_count > h.count {
        return Err(header_err(
            "vq_member_count",
            format!("{} exceeds count {}", h.vq_member_count, h.count),
        ));
    }
    if h.vq_member_count > 0 && h.codebook_k == 0 {
        return Err(header_err("codebook_k", "members present but codebook is empty"));
    }
    Ok(h)
}

/// Rounds to the nearest binary16 value, ties to even. Magnitudes of
/// 65520 and above become infinity.
///
/// `f16::from_f64` may round twice (through `f32`, or after dropping low
/// mantissa bits), so its result is only used as a starting point and the
/// nearest of it and its two neighbours is chosen exactly.
pub fn to_f16(v: f64) -> f16 {
    if !v.is_finite() {
        return f16::from_f64(v);
    }
    let a = v.abs();
    if a >= 65520.0 {
        return f16::from_f64(v.signum() * f64::INFINITY);
    }
    let start = f16::from_f64(a).min(f16::MAX).to_bits();
    let mut best = start;
    for bits in [start.saturating_sub(1), start + 1] {
        if bits > f16::MAX.to_bits() {
            continue;
        }
        // Adjacent binary16 values bracket `a` within a factor of two, so
        // these differences are exact.
        let d_best = (a - f16::from_bits(best).to_f64()).abs();
        let d = (a - f16::from_bits(bits).to_f64()).abs();
        if d < d_best || (d == d_best && bits & 1 == 0) {
            best = bits;
        }
    }
    let h = f16::from_bits(best);
    if v.is_sign_negative() {
        -h
    } else {
        h
    }
}

/// Passes every stored attribute of `cloud` through half precision.
pub fn fp16_round(cloud: &GaussianCloud) -> GaussianCloud {
    let mut out = cloud.clone();
    for plane in [
        &mut out.positions,
        &mut out.sh_dc,
        &mut out.sh_rest,
        &mut out.raw_opacity,
        &mut out.raw_scale,
        &mut out.rotation,
    ] {
        for v in plane.iter_mut() {
            *v = to_f16(*v).to_f64();
        }
    }
    out
}

/// Passes every code vector through half precision.
pub fn fp16_round_codebook(codebook: &Codebook) -> Codebook {
    let mut out = codebook.clone();
    for v in &mut out.vectors {
        *v = to_f16(*v).to_f64();
    }
    out
}

fn put_f16(out: &mut Vec<u8>, plane: &'static str, index: usize, v: f64) -> Result<(), ContainerError> {
    let h = to_f16(v);
    if !h.is_finite() {
        return Err(ContainerError::Overflow { plane, index, value: v });
    }
    out.extend_from_slice(&h.to_le_bytes());
    Ok(())
}

fn put_plane(out: &mut Vec<u8>, plane: &'static str, values: &[f64]) -> Result<(), ContainerError> {
    for (i, &v) in values.iter().enumerate() {
        put_f16(out, plane, i, v)?;
    }
    Ok(())
}

/// Serializes a cloud with its codebook and assignments.
///
/// Member SH-rest rows are not stored; on decode they are read from their
/// codes. Every float must be finite in half precision.
pub fn encode(cloud: &GaussianCloud, codebook: &Codebook, assignments: &AssignmentVector) -> Result<Vec<u8>> {
    let n = cloud.len();
    let width = cloud.rest_width();
    let k = codebook.k();
    if k > MAX_CODEBOOK_SIZE {
        return Err(ContainerError::IndexWidth(k).into());
    }
    if k > 0 && codebook.dim != width {
        return Err(ContainerError::Inconsistent(format!(
            "codebook width {} does not match SH-rest width {width}",
            codebook.dim
        ))
        .into());
    }
    if assignments.len() != n {
        return Err(ContainerError::Inconsistent(format!("{} assignments for {n} Gaussians", assignments.len())).into());
    }
    if let Some(c) = assignments.codes.iter().flatten().find(|&&c| c as usize >= k) {
        return Err(ContainerError::Inconsistent(format!("code index {c} out of range for {k} codes")).into());
    }
    let members = assignments.member_count();
    let header = ContainerHeader {
        version: VERSION,
        count: n as u64,
        sh_degree: cloud.sh_degree() as u8,
        codebook_k: k as u32,
        codebook_dim: width as u32,
        vq_member_count: members as u64,
    };
    let total = header.total_len().expect("in-memory sizes fit usize");
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&header.to_bytes());
    put_plane(&mut out, "positions", &cloud.positions)?;
    put_plane(&mut out, "sh_dc", &cloud.sh_dc)?;
    put_plane(&mut out, "raw_opacity", &cloud.raw_opacity)?;
    put_plane(&mut out, "raw_scale", &cloud.raw_scale)?;
    put_plane(&mut out, "rotation", &cloud.rotation)?;
    for i in (0..n).filter(|&i| !assignments.is_member(i)) {
        for (j, &v) in cloud.rest(i).iter().enumerate() {
            put_f16(&mut out, "sh_rest", i * width + j, v)?;
        }
    }
    let mut bitmap = vec![0u8; n.div_ceil(8)];
    for i in (0..n).filter(|&i| assignments.is_member(i)) {
        bitmap[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bitmap);
    for c in assignments.codes.iter().flatten() {
        out.extend_from_slice(&(*c as u16).to_le_bytes());
    }
    if k > 0 {
        put_plane(&mut out, "codebook", &codebook.vectors)?;
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, plane: &'static str, len: usize) -> Result<&'a [u8], ContainerError> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(ContainerError::UnexpectedEof {
                plane,
                offset: self.pos,
                needed: len,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn f16_plane(&mut self, plane: &'static str, count: usize) -> Result<Vec<f64>, ContainerError> {
        let len = count.checked_mul(2).ok_or_else(|| header_err("count", "plane size overflows"))?;
        Ok(self
            .take(plane, len)?
            .chunks_exact(2)
            .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f64())
            .collect())
    }
}

/// Reconstructs the cloud, codebook and assignments from container bytes.
/// Member SH-rest rows are materialized from their codes; widening from half
/// precision is exact.
pub fn decode(bytes: &[u8]) -> Result<(GaussianCloud, Codebook, AssignmentVector)> {
    Ok(decode_inner(bytes)?)
}

fn decode_inner(bytes: &[u8]) -> Result<(GaussianCloud, Codebook, AssignmentVector), ContainerError> {
    let h = read_header(bytes)?;
    let n = usize::try_from(h.count).map_err(|_| header_err("count", "too large"))?;
    let m = h.vq_member_count as usize;
    let k = h.codebook_k as usize;
    let d = h.codebook_dim as usize;
    let mut r = Reader {
        bytes,
        pos: HEADER_LEN,
    };
    let big = |count: usize, per: usize| count.checked_mul(per).ok_or_else(|| header_err("count", "plane size overflows"));
    let positions = r.f16_plane("positions", big(n, 3)?)?;
    let sh_dc = r.f16_plane("sh_dc", big(n, 3)?)?;
    let raw_opacity = r.f16_plane("raw_opacity", n)?;
    let raw_scale = r.f16_plane("raw_scale", big(n, 3)?)?;
    let rotation = r.f16_plane("rotation", big(n, 4)?)?;
    let raw_rest = r.f16_plane("sh_rest", big(n - m, d)?)?;
    let bitmap_offset = r.pos;
    let bitmap = r.take("membership", n.div_ceil(8))?;
    let members: Vec<bool> = (0..n).map(|i| bitmap[i / 8] >> (i % 8) & 1 == 1).collect();
    let set = members.iter().filter(|&&b| b).count();
    if set != m {
        return Err(ContainerError::Membership {
            offset: bitmap_offset,
            message: format!("{set} bits set, header declares {m} members"),
        });
    }
    if n % 8 != 0 && bitmap[n / 8] >> (n % 8) != 0 {
        return Err(ContainerError::Membership {
            offset: bitmap_offset + n / 8,
            message: "padding bits are not zero".into(),
        });
    }
    let codes_offset = r.pos;
    let code_bytes = r.take("code_indices", big(m, 2)?)?;
    let mut indices = Vec::with_capacity(m);
    for (j, b) in code_bytes.chunks_exact(2).enumerate() {
        let code = u16::from_le_bytes([b[0], b[1]]);
        if code as usize >= k {
            return Err(ContainerError::CodeOutOfRange {
                offset: codes_offset + 2 * j,
                code,
                k: h.codebook_k,
            });
        }
        indices.push(code as u32);
    }
    let codebook = Codebook::new(r.f16_plane("codebook", big(k, d)?)?, d, crate::vq::DEFAULT_DECAY);
    if r.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes {
            offset: r.pos,
            count: bytes.len() - r.pos,
        });
    }

    let assignments = AssignmentVector::from_membership(&members, &indices)
        .map_err(|e| ContainerError::Inconsistent(e.to_string()))?;
    let mut sh_rest = vec![0.0; n * d];
    let mut raw_rows = raw_rest.chunks_exact(d.max(1));
    for (i, code) in assignments.codes.iter().enumerate() {
        if d == 0 {
            break;
        }
        let row = &mut sh_rest[i * d..(i + 1) * d];
        match code {
            Some(c) => row.copy_from_slice(codebook.code(*c as usize)),
            None => row.copy_from_slice(raw_rows.next().expect("plane sized from header")),
        }
    }
    let cloud = GaussianCloud::from_planes(
        h.sh_degree as u32,
        positions,
        sh_dc,
        sh_rest,
        raw_opacity,
        raw_scale,
        rotation,
    )
    .map_err(|e| ContainerError::Inconsistent(e.to_string()))?;
    Ok((cloud, codebook, assignments))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud_is_header_only() {
        let cloud = GaussianCloud::empty(0).unwrap();
        let bytes = encode(&cloud, &Codebook::empty(0), &AssignmentVector::none(0)).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let (c, cb, a) = decode(&bytes).unwrap();
        assert!(c.is_empty());
        assert_eq!(cb.k(), 0);
        assert!(a.is_empty());
    }

    #[test]
    fn documented_size_example() {
        let h = ContainerHeader {
            version: 1,
            count: 1000,
            sh_degree: 2,
            codebook_k: 8192,
            codebook_dim: 24,
            vq_member_count: 600,
        };
        let expected = HEADER_LEN + 1000 * 14 * 2 + 400 * 24 * 2 + 125 + 600 * 2 + 8192 * 24 * 2;
        assert_eq!(h.total_len(), Some(expected));
    }

    #[test]
    fn header_rejections() {
        let cloud = GaussianCloud::empty(1).unwrap();
        let good = encode(&cloud, &Codebook::empty(9), &AssignmentVector::none(0)).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_header(&bad), Err(ContainerError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(read_header(&bad), Err(ContainerError::UnsupportedVersion(2)));
        let mut bad = good.clone();
        bad[19] = 8;
        assert!(matches!(read_header(&bad), Err(ContainerError::Header { field: "codebook_dim", .. })));
        let mut bad = good;
        bad.push(0);
        assert!(matches!(
            decode(&bad),
            Err(crate::Error::Container(ContainerError::TrailingBytes { offset: 31, count: 1 }))
        ));
    }
}
