//! Distance-adaptive density filter.
//!
//! A point `x` survives when at least `k` other points lie within
//! `alpha * |x - origin|` of it. Lidar returns are spaced uniformly in angle,
//! so Euclidean spacing grows linearly with range and the radius follows it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KdTree, Point3, PointCloud};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Radius scale: neighbor radius is `alpha` times range.
    pub alpha: f64,
    /// Minimum neighbor count (excluding the point itself).
    pub k_neighbors: usize,
    /// Frames aggregated before the first filter pass.
    pub warmup_frames: usize,
    /// Filter period in frames once warm.
    pub interval_frames: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            alpha: 0.008,
            k_neighbors: 7,
            warmup_frames: 50,
            interval_frames: 10,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.warmup_frames < 1 || self.interval_frames < 1 {
            return Err(invalid("warm-up and interval must be >= 1 frame"));
        }
        Ok(())
    }

    /// Whether aggregation step `i` (1-based over the appended frames) filters.
    pub fn filters_at(&self, i: usize) -> bool {
        i > self.warmup_frames && i % self.interval_frames == 0
    }
}

/// Keep-mask of [`density_filter`].
pub fn density_filter_mask(points: &[Point3], sensor_origin: &Point3, params: &FilterParams) -> Vec<bool> {
    let k = params.k_neighbors;
    if k == 0 {
        return vec![true; points.len()];
    }
    let tree = KdTree::new(points);
    points
        .par_iter()
        .map(|p| {
            let d2 = (0..3).map(|a| (p[a] - sensor_origin[a]).powi(2)).sum::<f64>();
            let r2 = params.alpha * params.alpha * d2;
            // the query point itself is always inside its own radius
            tree.count_within(p, r2, k + 1) > k
        })
        .collect()
}

/// Removes points with fewer than `k` neighbors inside their adaptive radius.
pub fn density_filter(cloud: &PointCloud, sensor_origin: &Point3, params: &FilterParams) -> PointCloud {
    let keep = density_filter_mask(cloud.points(), sensor_origin, params);
    cloud.retain_mask(&keep)
}
