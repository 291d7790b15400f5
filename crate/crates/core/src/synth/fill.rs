//! Deterministic depth hole filling: nearest-valid dilation, then a 3x3
//! median over the filled pixels only.

use crate::error::{invalid, Result};
use crate::raster::DepthMap;

const AXIAL: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const DIAGONAL: [(isize, isize); 4] = [(-1, -1), (1, -1), (-1, 1), (1, 1)];

fn lower_median(vals: &mut [f64]) -> f64 {
    vals.sort_by(f64::total_cmp);
    vals[(vals.len() - 1) / 2]
}

/// Fills every invalid pixel. Original valid pixels are left untouched.
///
/// Each dilation pass assigns to a hole pixel the lower median of its valid
/// 4-neighbors, or of its valid diagonal neighbors when it has no valid
/// 4-neighbor. Passes repeat until no hole remains. Filled pixels are then
/// replaced by the lower median of their (clamped) 3x3 window.
pub fn fill_depth_holes(depth: &DepthMap) -> Result<DepthMap> {
    if depth.valid_count() == 0 {
        return Err(invalid("cannot fill a depth map with no valid pixels"));
    }
    if depth.is_fully_valid() {
        return Ok(depth.clone());
    }
    let (w, h) = depth.dims();
    let mut vals = depth.values().to_vec();
    let mut known = depth.mask().to_vec();
    let mut cand = Vec::with_capacity(4);

    while known.iter().any(|k| !k) {
        let mut next_vals = vals.clone();
        let mut next_known = known.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if known[i] {
                    continue;
                }
                for ring in [&AXIAL, &DIAGONAL] {
                    cand.clear();
                    for (dx, dy) in ring.iter() {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if known[j] {
                            cand.push(vals[j]);
                        }
                    }
                    if !cand.is_empty() {
                        next_vals[i] = lower_median(&mut cand);
                        next_known[i] = true;
                        break;
                    }
                }
            }
        }
        vals = next_vals;
        known = next_known;
    }

    let dilated = vals.clone();
    let mut window = Vec::with_capacity(9);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if depth.mask()[i] {
                continue;
            }
            window.clear();
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    window.push(dilated[ny * w + nx]);
                }
            }
            vals[i] = lower_median(&mut window);
        }
    }
    DepthMap::from_values(w, h, vals)
}
