//! Classical depth from focus: sum-modified-Laplacian sharpness, per-pixel
//! argmax over the stack, optional parabolic refinement in log-disparity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::DepthMap;
use crate::synth::FocusStack;

pub const DEFAULT_WINDOW_RADIUS: usize = 4;
/// Peak measure at or below this fraction of the image maximum is "no texture".
pub const TEXTURE_FLOOR_REL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusMeasureMap {
    pub width: usize,
    pub height: usize,
    pub window_radius: usize,
    /// One `width * height` row-major map per stack image.
    pub measures: Vec<Vec<f64>>,
}

/// Modified Laplacian `|2I - I(x-1) - I(x+1)| + |2I - I(y-1) - I(y+1)|` with
/// clamped borders.
pub fn modified_laplacian(lum: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        lum[y * w + x]
    };
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let c = 2.0 * at(x, y);
            (c - at(x - 1, y) - at(x + 1, y)).abs() + (c - at(x, y - 1) - at(x, y + 1)).abs()
        })
        .collect()
}

/// Box sum over a `(2r+1)^2` window truncated at the image border.
fn window_sum(values: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = values[y * w + lo..=y * w + hi].iter().sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).sum();
        }
    }
    out
}

pub fn sml_map(lum: &[f64], w: usize, h: usize, window_radius: usize) -> Vec<f64> {
    window_sum(&modified_laplacian(lum, w, h), w, h, window_radius)
}

pub fn focus_measure(stack: &FocusStack, window_radius: usize) -> Result<FocusMeasureMap> {
    if window_radius < 1 {
        return Err(invalid("focus-measure window radius must be >= 1"));
    }
    let (w, h) = stack.dims();
    let measures = stack
        .images()
        .par_iter()
        .map(|img| sml_map(&img.luminance(), w, h, window_radius))
        .collect();
    Ok(FocusMeasureMap {
        width: w,
        height: h,
        window_radius,
        measures,
    })
}

pub fn estimate_depth(stack: &FocusStack, window_radius: usize, refine: bool) -> Result<DepthMap> {
    let m = stack.len();
    if m < 2 {
        return Err(invalid(format!("depth from focus needs >= 2 images, got {m}")));
    }
    let fds = stack.focus_distances_m();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| fds[*a].total_cmp(&fds[*b]));
    if order.windows(2).any(|p| fds[p[0]] == fds[p[1]]) {
        return Err(invalid("focus distances must be distinct"));
    }
    let fm = focus_measure(stack, window_radius)?;
    // everything below works in ascending-FD order so the input order is irrelevant
    let measures: Vec<&Vec<f64>> = order.iter().map(|&i| &fm.measures[i]).collect();
    let sorted_fd: Vec<f64> = order.iter().map(|&i| fds[i]).collect();
    let log_disp: Vec<f64> = sorted_fd.iter().map(|d| -d.ln()).collect();
    let floors: Vec<f64> = measures
        .iter()
        .map(|mm| TEXTURE_FLOOR_REL * mm.iter().copied().fold(0.0, f64::max))
        .collect();

    let (w, h) = (fm.width, fm.height);
    let mut out = DepthMap::invalid(w, h)?;
    for i in 0..w * h {
        let mut best = 0;
        for k in 1..m {
            if measures[k][i] > measures[best][i] {
                best = k;
            }
        }
        let peak = measures[best][i];
        if peak <= floors[best] {
            continue;
        }
        let mut depth = sorted_fd[best];
        if refine && best > 0 && best + 1 < m {
            let xs = [log_disp[best - 1], log_disp[best], log_disp[best + 1]];
            let ys = [measures[best - 1][i], peak, measures[best + 1][i]];
            if let Some(xv) = parabola_vertex(xs, ys) {
                let lo = log_disp[m - 1];
                let hi = log_disp[0];
                depth = (-xv.clamp(lo, hi)).exp();
            }
        }
        out.set(i % w, i / w, Some(depth));
    }
    Ok(out)
}

/// Vertex abscissa of the parabola through three points, if it opens down.
fn parabola_vertex(xs: [f64; 3], ys: [f64; 3]) -> Option<f64> {
    let [x0, x1, x2] = xs;
    let [y0, y1, y2] = ys;
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if !(a < 0.0) || !a.is_finite() {
        return None;
    }
    // y' = d01 + a (2x - x0 - x1) = 0
    let xv = (x0 + x1) / 2.0 - d01 / (2.0 * a);
    xv.is_finite().then_some(xv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::ThinLensConfig;
    use crate::raster::RgbImage;

    #[test]
    fn hand_fixture_3x3() {
        #[rustfmt::skip]
        let lum = [
            0.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 0.0,
        ];
        let ml = modified_laplacian(&lum, 3, 3);
        assert_eq!(ml[4], 4.0);
        // edge-clamped neighbor of the center, e.g. (1, 0): |0-0-0| + |0-0-1|
        assert_eq!(ml[1], 1.0);
        assert_eq!(ml[0], 0.0);
        let sml = sml_map(&lum, 3, 3, 1);
        assert_eq!(sml[4], 8.0);
        assert_eq!(sml[0], 6.0);
    }

    #[test]
    fn parabola_vertex_symmetric_and_skewed() {
        assert_eq!(parabola_vertex([-1.0, 0.0, 1.0], [0.0, 1.0, 0.0]), Some(0.0));
        let xv = parabola_vertex([0.0, 1.0, 3.0], [-(0.0f64 - 1.2).powi(2), -(1.0f64 - 1.2).powi(2), -(3.0f64 - 1.2).powi(2)]);
        assert!((xv.unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(parabola_vertex([0.0, 1.0, 2.0], [1.0, 1.0, 1.0]), None);
    }

    #[test]
    fn textureless_is_invalid() {
        let lens = ThinLensConfig::new(0.05, 2.0, 2e-5, [4.0, 4.0]).unwrap();
        let img = RgbImage::filled(8, 8, [0.5, 0.5, 0.5]).unwrap();
        let stack = FocusStack::new(vec![img.clone(), img], vec![1.0, 2.0], lens).unwrap();
        let d = estimate_depth(&stack, 2, true).unwrap();
        assert_eq!(d.valid_count(), 0);
        assert!(focus_measure(&stack, 0).is_err());
    }
}
