//! Exact spatially varying defocus.
//!
//! Every source pixel `s` spreads its color with its own normalized kernel
//! `K_s`, sized by the CoC at its depth. The output is the weight-normalized
//! gather
//!
//! ```text
//! out(q) = sum_s K_s(q - s) rgb(s) / sum_s K_s(q - s)
//! ```
//!
//! which keeps constant images constant even where neighboring kernels
//! differ. Off-image sources replicate the nearest edge pixel (color and
//! depth). Each output pixel is an independent, fixed-order sum, so the result
//! does not depend on thread scheduling.

use rayon::prelude::*;

use crate::error::Result;
use std::collections::HashMap;

use crate::optics::{DiscreteKernel, KernelProfile, ThinLensConfig};
use crate::raster::{DepthMap, RgbImage};

use super::{check_inputs, kernel_for_depth};

pub fn synthesize_image_reference(
    rgb: &RgbImage,
    depth: &DepthMap,
    lens: &ThinLensConfig,
    focus_distance_m: f64,
    psf_shape_p: f64,
) -> Result<RgbImage> {
    check_inputs(rgb, depth)?;
    let (w, h) = rgb.dims();
    let kernels = PixelKernels::new(depth, lens, focus_distance_m, psf_shape_p)?;
    let reach = kernels.reach() as isize;
    let src = rgb.data();

    let mut out = vec![0f32; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let mut acc = [0f64; 3];
            let mut wsum = 0f64;
            for dv in -reach..=reach {
                let sy = (y as isize - dv).clamp(0, h as isize - 1) as usize;
                for du in -reach..=reach {
                    let sx = (x as isize - du).clamp(0, w as isize - 1) as usize;
                    let s = sy * w + sx;
                    let k = kernels.weight(s, du, dv);
                    if k == 0.0 {
                        continue;
                    }
                    wsum += k;
                    for c in 0..3 {
                        acc[c] += k * src[3 * s + c] as f64;
                    }
                }
            }
            for c in 0..3 {
                row[3 * x + c] = ((acc[c] / wsum) as f32).clamp(0.0, 1.0);
            }
        }
    });
    Ok(RgbImage::from_raw_unchecked(w, h, out))
}

/// Above this many cached weights, kernels are evaluated on the fly.
const MAX_TABLE_WEIGHTS: usize = 1 << 24;

/// Per-pixel kernels, shared between pixels of equal depth. Tables hold the
/// same values [`KernelProfile::weight`] returns, so both paths agree bitwise.
struct PixelKernels {
    index: Vec<usize>,
    profiles: Vec<KernelProfile>,
    tables: Option<Vec<DiscreteKernel>>,
}

impl PixelKernels {
    fn new(depth: &DepthMap, lens: &ThinLensConfig, focus_distance_m: f64, psf_shape_p: f64) -> Result<Self> {
        let mut slot: HashMap<u64, usize> = HashMap::new();
        let mut profiles = Vec::new();
        let mut index = Vec::with_capacity(depth.values().len());
        for d in depth.values() {
            let i = match slot.get(&d.to_bits()) {
                Some(i) => *i,
                None => {
                    profiles.push(kernel_for_depth(*d, lens, focus_distance_m, psf_shape_p)?);
                    slot.insert(d.to_bits(), profiles.len() - 1);
                    profiles.len() - 1
                }
            };
            index.push(i);
        }
        let table_size: usize = profiles.iter().map(|p| (2 * p.radius() + 1).pow(2)).sum();
        let tables = (table_size <= MAX_TABLE_WEIGHTS).then(|| profiles.iter().map(|p| p.to_kernel()).collect());
        Ok(PixelKernels { index, profiles, tables })
    }

    fn reach(&self) -> usize {
        self.profiles.iter().map(|k| k.radius()).max().unwrap_or(0)
    }

    #[inline]
    fn weight(&self, pixel: usize, du: isize, dv: isize) -> f64 {
        let i = self.index[pixel];
        match &self.tables {
            Some(t) => t[i].weight(du, dv),
            None => self.profiles[i].weight(du, dv),
        }
    }
}
