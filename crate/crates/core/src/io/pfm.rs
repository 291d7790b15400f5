//! Portable float map. Written as single-channel `Pf`, little-endian
//! (scale `-1.0`), rows stored bottom-to-top. Invalid depth is stored as 0.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::DepthMap;

/// Raw single-channel float raster in top-to-bottom row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

pub fn encode(raster: &FloatRaster) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1.0\n", raster.width, raster.height);
    let mut out = Vec::with_capacity(header.len() + raster.data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for row in raster.data.chunks_exact(raster.width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(format!("PFM: {}", msg.into()))
}

pub fn decode(bytes: &[u8]) -> Result<FloatRaster> {
    // header is three whitespace-terminated tokens after the magic line
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated header"));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(t)
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format_err(format!("bad magic `{other}`"))),
    };
    let width: usize = token()?.parse().map_err(|_| format_err("bad width"))?;
    let height: usize = token()?.parse().map_err(|_| format_err("bad height"))?;
    let scale: f32 = token()?.parse().map_err(|_| format_err("bad scale"))?;
    // exactly one whitespace byte separates the scale from the payload
    pos += 1;
    let n = width * height * channels;
    let payload = bytes
        .get(pos..pos + n * 4)
        .ok_or_else(|| format_err("truncated payload"))?;
    let little = scale < 0.0;
    let samples: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    if channels == 3 {
        return Err(format_err("three-channel PFM is not a depth map"));
    }
    let mut data = Vec::with_capacity(n);
    for row in samples.chunks_exact(width.max(1)).rev() {
        data.extend_from_slice(row);
    }
    Ok(FloatRaster {
        width,
        height,
        data,
    })
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    encode(&FloatRaster {
        width: depth.width(),
        height: depth.height(),
        data: depth.values().iter().map(|v| *v as f32).collect(),
    })
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let r = decode(bytes)?;
    DepthMap::from_values(r.width, r.height, r.data.iter().map(|v| *v as f64).collect())
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    super::write_atomic(path, &encode_depth(depth))
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_depth(&std::fs::read(path)?)
}
