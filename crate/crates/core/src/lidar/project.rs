//! Z-buffer rendering of camera-frame points into a depth map.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::optics::ThinLensConfig;
use crate::raster::DepthMap;
use crate::error::{invalid, Result};

/// Pinhole intrinsics in pixels; pixel `(i, j)` has its center at `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.fx != 0.0
            && self.fy != 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("bad intrinsics {self:?}")))
        }
    }

    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &[f64; 3]) -> Option<[f64; 2]> {
        if !(p[2] > 0.0) {
            return None;
        }
        let u = self.fx * p[0] / p[2] + self.cx;
        let v = self.fy * p[1] / p[2] + self.cy;
        (u.is_finite() && v.is_finite()).then_some([u, v])
    }
}

impl From<&ThinLensConfig> for Intrinsics {
    fn from(lens: &ThinLensConfig) -> Self {
        let [cx, cy] = lens.principal_point();
        Intrinsics {
            fx: lens.focal_length_px(),
            fy: lens.focal_length_px(),
            cx,
            cy,
        }
    }
}

/// Integer offsets covered by a splat of the given radius: the digital disk
/// `du^2 + dv^2 <= (r + 1/2)^2`, i.e. `<= r^2 + r`.
pub fn splat_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let limit = r * r + r;
    let mut out = Vec::new();
    for dv in -r..=r {
        for du in -r..=r {
            if du * du + dv * dv <= limit {
                out.push((du, dv));
            }
        }
    }
    out
}

/// Renders points into a `width x height` depth map. Each point with `z > 0`
/// covers a solid disk of `splat_radius_px` around its nearest pixel; each
/// pixel keeps the smallest depth. Untouched pixels are invalid.
pub fn project_zbuffer(
    p_cam: &PointCloud,
    intrinsics: &Intrinsics,
    width: usize,
    height: usize,
    splat_radius_px: usize,
) -> Result<DepthMap> {
    intrinsics.validate()?;
    if width == 0 || height == 0 {
        return Err(invalid("depth map dimensions must be >= 1"));
    }
    let offsets = splat_offsets(splat_radius_px);
    // positive f64 bit patterns order like the values, so fetch_min on the
    // bits is an order-independent depth test
    let zbuf: Vec<AtomicU64> = (0..width * height).map(|_| AtomicU64::new(u64::MAX)).collect();
    p_cam.points().par_iter().for_each(|p| {
        let Some([u, v]) = intrinsics.project(p) else {
            return;
        };
        let (cu, cv) = (u.round(), v.round());
        let bound = splat_radius_px as f64 + 1.0;
        if cu < -bound || cv < -bound || cu > width as f64 + bound || cv > height as f64 + bound {
            return;
        }
        let (cu, cv) = (cu as isize, cv as isize);
        let bits = p[2].to_bits();
        for (du, dv) in &offsets {
            let (x, y) = (cu + du, cv + dv);
            if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                zbuf[y as usize * width + x as usize].fetch_min(bits, Ordering::Relaxed);
            }
        }
    });
    let values = zbuf
        .into_iter()
        .map(|b| {
            let b = b.into_inner();
            if b == u64::MAX {
                0.0
            } else {
                f64::from_bits(b)
            }
        })
        .collect();
    DepthMap::from_values(width, height, values)
}
