//! Binary little-endian PLY with float32 `x y z` and optional `intensity`.
//!
//! The frame label travels in a `comment frame <label>` header line; other
//! `comment key value` lines carry artifact metadata.

use std::path::Path;

use crate::error::{Error, Result};
use crate::lidar::PointCloud;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(format!("PLY: {}", msg.into()))
}

/// Serializes a cloud. `comments` are emitted verbatim after the frame line.
pub fn encode(cloud: &PointCloud, comments: &[String]) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment frame {}\n", cloud.frame()));
    for c in comments {
        header.push_str(&format!("comment {}\n", c.replace('\n', " ")));
    }
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    let intensity = cloud.intensity();
    if intensity.is_some() {
        header.push_str("property float intensity\n");
    }
    header.push_str("end_header\n");
    let stride = if intensity.is_some() { 16 } else { 12 };
    let mut out = Vec::with_capacity(header.len() + cloud.len() * stride);
    out.extend_from_slice(header.as_bytes());
    for (i, p) in cloud.points().iter().enumerate() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(int) = intensity {
            out.extend_from_slice(&int[i].to_le_bytes());
        }
    }
    out
}

/// Parsed PLY: the cloud plus any non-frame header comments.
#[derive(Debug, Clone)]
pub struct PlyFile {
    pub cloud: PointCloud,
    pub comments: Vec<String>,
}

pub fn decode(bytes: &[u8]) -> Result<PlyFile> {
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| format_err("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| format_err("header is not UTF-8"))?;
    let body = &bytes[end + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(format_err("missing magic"));
    }
    let mut frame = None;
    let mut comments = Vec::new();
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("binary_little_endian") {
                    return Err(format_err("only binary_little_endian is supported"));
                }
            }
            Some("comment") => {
                let rest = line["comment".len()..].trim_start();
                if let Some(label) = rest.strip_prefix("frame ") {
                    frame = Some(label.trim().to_owned());
                } else {
                    comments.push(rest.to_owned());
                }
            }
            Some("element") => {
                let name = tok.next();
                in_vertex = name == Some("vertex");
                if in_vertex {
                    let n: usize = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| format_err("bad vertex count"))?;
                    count = Some(n);
                } else {
                    return Err(format_err("only a vertex element is supported"));
                }
            }
            Some("property") if in_vertex => {
                let ty = tok.next().unwrap_or_default();
                if ty != "float" && ty != "float32" {
                    return Err(format_err(format!("unsupported property type `{ty}`")));
                }
                props.push(tok.next().unwrap_or_default().to_owned());
            }
            Some("obj_info") | None => {}
            Some(other) => return Err(format_err(format!("unexpected header line `{other}`"))),
        }
    }
    let n = count.ok_or_else(|| format_err("missing vertex element"))?;
    let idx = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (idx("x"), idx("y"), idx("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(format_err("vertex needs x, y, z")),
    };
    let ii = idx("intensity");
    let stride = props.len() * 4;
    if body.len() < n * stride {
        return Err(format_err(format!(
            "expected {} payload bytes, found {}",
            n * stride,
            body.len()
        )));
    }
    let mut points = Vec::with_capacity(n);
    let mut intensity = ii.map(|_| Vec::with_capacity(n));
    for rec in body[..n * stride].chunks_exact(stride) {
        let f = |k: usize| f32::from_le_bytes([rec[4 * k], rec[4 * k + 1], rec[4 * k + 2], rec[4 * k + 3]]);
        points.push([f(ix) as f64, f(iy) as f64, f(iz) as f64]);
        if let (Some(k), Some(v)) = (ii, intensity.as_mut()) {
            v.push(f(k));
        }
    }
    let cloud = PointCloud::with_intensity(frame.unwrap_or_else(|| "world".to_owned()), points, intensity)?;
    Ok(PlyFile { cloud, comments })
}

pub fn write(path: impl AsRef<Path>, cloud: &PointCloud, comments: &[String]) -> Result<()> {
    super::write_atomic(path, &encode(cloud, comments))
}

pub fn read(path: impl AsRef<Path>) -> Result<PlyFile> {
    decode(&std::fs::read(path)?)
}
