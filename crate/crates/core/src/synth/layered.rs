//! Layered approximation of the reference defocus.
//!
//! Depth is binned uniformly in disparity. Every non-empty bin is blurred with
//! a single kernel evaluated at the bin's representative disparity, both its
//! premultiplied color and its coverage mask. Color and coverage are summed
//! over all layers and divided at the end, which is exactly the reference
//! gather with per-pixel kernels replaced by per-bin kernels.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::optics::ThinLensConfig;
use crate::raster::{DepthMap, RgbImage};

use super::{check_inputs, kernel_for_depth};

/// Disparity bins of a fully valid depth map.
#[derive(Debug, Clone)]
pub struct DisparityBins {
    /// Bin index per pixel.
    pub index: Vec<usize>,
    /// Representative disparity (1/m) per bin; `None` for empty bins.
    pub centers: Vec<Option<f64>>,
}

/// Bins pixels uniformly in disparity over the map's own disparity range and
/// takes the midpoint of each bin as its representative.
pub fn bin_disparity(depth: &DepthMap, n_layers: usize) -> Result<DisparityBins> {
    if n_layers < 1 {
        return Err(invalid("need at least one layer"));
    }
    let disp: Vec<f64> = depth.values().iter().map(|d| 1.0 / d).collect();
    let lo = disp.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = disp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_layers as f64;
    let index: Vec<usize> = disp
        .iter()
        .map(|d| {
            if width > 0.0 {
                (((d - lo) / width) as usize).min(n_layers - 1)
            } else {
                0
            }
        })
        .collect();
    let mut used = vec![false; n_layers];
    for &b in &index {
        used[b] = true;
    }
    let centers = used
        .iter()
        .enumerate()
        .map(|(b, u)| u.then(|| if width > 0.0 { lo + (b as f64 + 0.5) * width } else { lo }))
        .collect();
    Ok(DisparityBins { index, centers })
}

pub fn synthesize_image_layered(
    rgb: &RgbImage,
    depth: &DepthMap,
    lens: &ThinLensConfig,
    focus_distance_m: f64,
    psf_shape_p: f64,
    n_layers: usize,
) -> Result<RgbImage> {
    if n_layers < 2 {
        return Err(invalid(format!("layered synthesis needs >= 2 layers, got {n_layers}")));
    }
    synthesize_with_bins(rgb, depth, lens, focus_distance_m, psf_shape_p, n_layers)
}

pub(crate) fn synthesize_with_bins(
    rgb: &RgbImage,
    depth: &DepthMap,
    lens: &ThinLensConfig,
    focus_distance_m: f64,
    psf_shape_p: f64,
    n_layers: usize,
) -> Result<RgbImage> {
    check_inputs(rgb, depth)?;
    let (w, h) = rgb.dims();
    let bins = bin_disparity(depth, n_layers)?;
    let src = rgb.data();

    // (r, g, b, coverage) accumulated layer by layer in bin order
    let mut acc = vec![0f64; w * h * 4];
    for (b, center) in bins.centers.iter().enumerate() {
        let Some(disp) = center else { continue };
        let kernel = kernel_for_depth(1.0 / disp, lens, focus_distance_m, psf_shape_p)?.to_kernel();
        let r = kernel.radius() as isize;
        let index = &bins.index;
        acc.par_chunks_mut(w * 4).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let mut sum = [0f64; 4];
                for dv in -r..=r {
                    let sy = (y as isize - dv).clamp(0, h as isize - 1) as usize;
                    for du in -r..=r {
                        let sx = (x as isize - du).clamp(0, w as isize - 1) as usize;
                        let s = sy * w + sx;
                        if index[s] != b {
                            continue;
                        }
                        let k = kernel.weight(du, dv);
                        for c in 0..3 {
                            sum[c] += k * src[3 * s + c] as f64;
                        }
                        sum[3] += k;
                    }
                }
                for c in 0..4 {
                    row[4 * x + c] += sum[c];
                }
            }
        });
    }
    let out = acc
        .chunks_exact(4)
        .flat_map(|a| {
            let cov = a[3];
            [a[0], a[1], a[2]].map(|v| ((v / cov) as f32).clamp(0.0, 1.0))
        })
        .collect();
    Ok(RgbImage::from_raw_unchecked(w, h, out))
}
