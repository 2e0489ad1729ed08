//! Binary little-endian PLY in the layout written by 3D Gaussian splatting
//! trainers: `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`,
//! every property a 32-bit float.
//!
//! `f_rest_*` is stored channel-major in the file (all red coefficients, then
//! green, then blue); it is re-interleaved per coefficient on read.

use thiserror::Error;

use crate::model::{sh_coeff_count, sh_rest_width, GaussianCloud, MAX_SH_DEGREE};

#[derive(Debug, Error, PartialEq)]
pub enum PlyError {
    #[error("malformed PLY header at byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("unsupported PLY layout: {0}")]
    Layout(String),
    #[error("unexpected end of PLY body: need {expected} bytes, found {available}")]
    UnexpectedEof { expected: usize, available: usize },
}

/// Property count for a degree-`degree` file.
pub const fn property_count(degree: u32) -> usize {
    17 + sh_rest_width(degree)
}

/// Canonical property names, in file order.
pub fn property_names(degree: u32) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..sh_rest_width(degree)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn header_err(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::Header {
        offset,
        message: message.into(),
    }
}

struct Header {
    vertex_count: usize,
    degree: u32,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| header_err(0, "missing end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|e| header_err(e.valid_up_to(), "header is not UTF-8"))?;

    let mut offset = 0;
    let mut vertex_count = None;
    let mut format_seen = false;
    let mut names = Vec::new();
    for (lineno, raw) in text.split_inclusive('\n').enumerate() {
        let line_offset = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if lineno == 0 {
            if line != "ply" {
                return Err(header_err(line_offset, "missing `ply` magic"));
            }
            continue;
        }
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => format_seen = true,
            ["format", other, ..] => {
                return Err(header_err(line_offset, format!("unsupported format `{other}`")));
            }
            ["element", "vertex", n] => {
                if vertex_count.is_some() {
                    return Err(header_err(line_offset, "duplicate vertex element"));
                }
                let n = n
                    .parse::<usize>()
                    .map_err(|_| header_err(line_offset, format!("bad vertex count `{n}`")))?;
                vertex_count = Some(n);
            }
            ["element", other, ..] => {
                return Err(header_err(line_offset, format!("unexpected element `{other}`")));
            }
            ["property", ty, name] => {
                if vertex_count.is_none() {
                    return Err(header_err(line_offset, "property before element"));
                }
                if *ty != "float" && *ty != "float32" {
                    return Err(header_err(line_offset, format!("property `{name}` has type `{ty}`, expected float")));
                }
                names.push(name.to_string());
            }
            _ => return Err(header_err(line_offset, format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_seen {
        return Err(header_err(0, "missing format line"));
    }
    let vertex_count = vertex_count.ok_or_else(|| header_err(0, "missing vertex element"))?;

    let rest_count = names.len().checked_sub(17).ok_or_else(|| {
        PlyError::Layout(format!("{} properties, at least 17 required", names.len()))
    })?;
    let degree = (0..=MAX_SH_DEGREE)
        .find(|&d| sh_rest_width(d) == rest_count)
        .ok_or_else(|| PlyError::Layout(format!("{rest_count} f_rest properties match no SH degree")))?;
    let expected = property_names(degree);
    if let Some((got, want)) = names.iter().zip(&expected).find(|(g, w)| g != w) {
        return Err(PlyError::Layout(format!("property `{got}` where `{want}` was expected")));
    }
    Ok(Header {
        vertex_count,
        degree,
        body_offset: end + END.len(),
    })
}

/// Parses a 3D-GS PLY. Normals are discarded.
pub fn read_ply(bytes: &[u8]) -> Result<GaussianCloud, PlyError> {
    let header = parse_header(bytes)?;
    let n = header.vertex_count;
    let props = property_count(header.degree);
    let body_len = n
        .checked_mul(props * 4)
        .ok_or_else(|| PlyError::Layout("vertex count overflows".into()))?;
    let body = &bytes[header.body_offset..];
    if body.len() < body_len {
        return Err(PlyError::UnexpectedEof {
            expected: body_len,
            available: body.len(),
        });
    }
    let body = &body[..body_len];

    let n_coeff = sh_coeff_count(header.degree) - 1;
    let rest_w = sh_rest_width(header.degree);
    let mut cloud = GaussianCloud::empty(header.degree).expect("degree validated");
    cloud.positions.reserve(n * 3);
    cloud.sh_dc.reserve(n * 3);
    cloud.sh_rest.reserve(n * rest_w);
    cloud.raw_opacity.reserve(n);
    cloud.raw_scale.reserve(n * 3);
    cloud.rotation.reserve(n * 4);

    let mut row = vec![0f64; props];
    for vertex in body.chunks_exact(props * 4) {
        for (v, b) in row.iter_mut().zip(vertex.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
        cloud.positions.extend_from_slice(&row[0..3]);
        cloud.sh_dc.extend_from_slice(&row[6..9]);
        let file_rest = &row[9..9 + rest_w];
        for k in 0..n_coeff {
            for c in 0..3 {
                cloud.sh_rest.push(file_rest[c * n_coeff + k]);
            }
        }
        let tail = 9 + rest_w;
        cloud.raw_opacity.push(row[tail]);
        cloud.raw_scale.extend_from_slice(&row[tail + 1..tail + 4]);
        cloud.rotation.extend_from_slice(&row[tail + 4..tail + 8]);
    }
    Ok(cloud)
}

/// Canonical header text for `count` vertices of degree `degree`.
pub fn ply_header(count: usize, degree: u32) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {count}\n"));
    for name in property_names(degree) {
        h.push_str(&format!("property float {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

/// Serializes `cloud`; values are narrowed to `f32` and normals written as zeros.
pub fn write_ply(cloud: &GaussianCloud) -> Vec<u8> {
    let degree = cloud.sh_degree();
    let header = ply_header(cloud.len(), degree);
    let props = property_count(degree);
    let n_coeff = sh_coeff_count(degree) - 1;
    let mut out = Vec::with_capacity(header.len() + cloud.len() * props * 4);
    out.extend_from_slice(header.as_bytes());
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for i in 0..cloud.len() {
        cloud.position(i).into_iter().for_each(&mut put);
        [0.0; 3].into_iter().for_each(&mut put);
        cloud.dc(i).into_iter().for_each(&mut put);
        let rest = cloud.rest(i);
        for c in 0..3 {
            for k in 0..n_coeff {
                put(rest[k * 3 + c]);
            }
        }
        put(cloud.raw_opacity[i]);
        cloud.raw_scale(i).into_iter().for_each(&mut put);
        cloud.rotation(i).into_iter().for_each(&mut put);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud() {
        let cloud = GaussianCloud::empty(3).unwrap();
        let bytes = write_ply(&cloud);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert!(text.ends_with("end_header\n"));
        let back = read_ply(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.sh_degree(), 3);
    }

    #[test]
    fn property_counts() {
        assert_eq!(property_count(3), 62);
        assert_eq!(property_count(2), 41);
        assert_eq!(property_names(2).len(), 41);
    }

    #[test]
    fn rejects_ascii() {
        let h = "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        match read_ply(h.as_bytes()) {
            Err(PlyError::Header { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_property() {
        let mut h = ply_header(0, 0).replace("end_header\n", "");
        h.push_str("property float extra\nend_header\n");
        assert!(matches!(read_ply(h.as_bytes()), Err(PlyError::Layout(_))));
    }

    #[test]
    fn rejects_rest_count_between_degrees() {
        let mut names = property_names(1);
        names.insert(18, "f_rest_9".into());
        let mut h = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 0\n");
        for n in names {
            h.push_str(&format!("property float {n}\n"));
        }
        h.push_str("end_header\n");
        assert!(matches!(read_ply(h.as_bytes()), Err(PlyError::Layout(_))));
    }

    #[test]
    fn truncated_body() {
        let mut bytes = ply_header(2, 0).into_bytes();
        bytes.extend_from_slice(&[0u8; 17 * 4 + 3]);
        assert_eq!(
            read_ply(&bytes),
            Err(PlyError::UnexpectedEof {
                expected: 2 * 17 * 4,
                available: 17 * 4 + 3
            })
        );
    }

    #[test]
    fn ignores_bytes_past_declared_extent() {
        let mut bytes = ply_header(1, 0).into_bytes();
        bytes.extend((0..17).flat_map(|i| (i as f32).to_le_bytes()));
        bytes.extend_from_slice(b"trailing garbage");
        let cloud = read_ply(&bytes).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.rotation(0), [13.0, 14.0, 15.0, 16.0]);
    }

    #[test]
    fn missing_end_header() {
        assert!(matches!(read_ply(b"ply\nformat binary_little_endian 1.0\n"), Err(PlyError::Header { .. })));
    }
}
