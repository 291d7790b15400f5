//! Center zoom for focal-length augmentation.

use crate::error::{invalid, Result};
use crate::optics::ThinLensConfig;
use crate::raster::{DepthMap, RgbImage};

pub const MIN_ZOOM: f64 = 1.0;
pub const MAX_ZOOM: f64 = 1.5;

/// Upscales by `scale` about the image center and crops back to the original
/// size. Color is resampled bilinearly; depth uses nearest-neighbor so no
/// depth values are invented across discontinuities. Depth magnitudes are
/// unchanged. The returned lens has `scale` times the focal length in pixels
/// and its principal point mapped through the same zoom.
pub fn zoom_augment(
    rgb: &RgbImage,
    depth: &DepthMap,
    lens: &ThinLensConfig,
    scale: f64,
) -> Result<(RgbImage, DepthMap, ThinLensConfig)> {
    if !(MIN_ZOOM..=MAX_ZOOM).contains(&scale) {
        return Err(invalid(format!("zoom factor {scale} outside [{MIN_ZOOM}, {MAX_ZOOM}]")));
    }
    super::check_dims(rgb, depth)?;
    let (w, h) = rgb.dims();
    let center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let to_src = |x: usize, y: usize| {
        [
            (x as f64 - center[0]) / scale + center[0],
            (y as f64 - center[1]) / scale + center[1],
        ]
    };

    let out_rgb = RgbImage::from_fn(w, h, |x, y| {
        let [sx, sy] = to_src(x, y);
        bilinear(rgb, sx, sy)
    })?;
    let mut out_depth = DepthMap::invalid(w, h)?;
    for y in 0..h {
        for x in 0..w {
            let [sx, sy] = to_src(x, y);
            let nx = (sx.round() as isize).clamp(0, w as isize - 1) as usize;
            let ny = (sy.round() as isize).clamp(0, h as isize - 1) as usize;
            out_depth.set(x, y, depth.get(nx, ny));
        }
    }
    let out_lens = lens.zoomed(scale, center)?;
    Ok((out_rgb, out_depth, out_lens))
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> [f32; 3] {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, w as f64 - 1.0);
    let y = y.clamp(0.0, h as f64 - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x1, y0);
    let p01 = img.pixel(x0, y1);
    let p11 = img.pixel(x1, y1);
    let mut out = [0f32; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy) as f32;
    }
    out
}
