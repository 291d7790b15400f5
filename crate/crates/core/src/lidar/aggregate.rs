//! Sequential scan aggregation with periodic density filtering.
//!
//! ```text
//! G_0 <- P_0
//! for i in 1..N:
//!     T   <- ICP(source = G_{i-1}, target = P_i)
//!     G_i <- T(G_{i-1}) ∪ P_i
//!     if i > warmup and i % interval == 0: density-filter G_i
//! ```
//!
//! The global cloud is always expressed in the frame of the newest scan, so
//! the sensor sits at the origin whenever the filter runs.

use serde::{Deserialize, Serialize};

use super::{density_filter_mask, icp_register, FilterParams, IcpParams, PointCloud, RigidTransform};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// `None` disables density filtering.
    pub filter: Option<FilterParams>,
    pub icp: IcpParams,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            filter: Some(FilterParams::default()),
            icp: IcpParams {
                max_iterations: 100,
                max_correspondence_m: 0.05,
                rms_tolerance_m: 1e-5,
                max_source_points: Some(5000),
                ..IcpParams::default()
            },
        }
    }
}

/// Which input frame and point a global point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointOrigin {
    pub frame: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterPass {
    pub step: usize,
    pub before: usize,
    pub removed: usize,
}

#[derive(Debug, Clone)]
pub struct AggregateTrace {
    /// Provenance of every point of the output cloud, in output order.
    pub origins: Vec<PointOrigin>,
    /// `T_i` mapping `G_{i-1}` into frame `i`, for `i >= 1`.
    pub steps: Vec<RigidTransform>,
    pub filter_passes: Vec<FilterPass>,
}

impl AggregateTrace {
    pub fn total_removed(&self) -> usize {
        self.filter_passes.iter().map(|p| p.removed).sum()
    }
}

pub fn aggregate(frames: &[PointCloud], opts: &AggregateOptions) -> Result<PointCloud> {
    aggregate_traced(frames, opts).map(|(cloud, _)| cloud)
}

pub fn aggregate_traced(frames: &[PointCloud], opts: &AggregateOptions) -> Result<(PointCloud, AggregateTrace)> {
    let first = frames.first().ok_or_else(|| invalid("aggregation needs at least one frame"))?;
    if let Some(f) = &opts.filter {
        f.validate()?;
    }
    let mut global = first.clone();
    let mut origins: Vec<PointOrigin> = (0..first.len()).map(|index| PointOrigin { frame: 0, index }).collect();
    let mut steps = Vec::with_capacity(frames.len().saturating_sub(1));
    let mut passes = Vec::new();

    for (i, frame) in frames.iter().enumerate().skip(1) {
        let step = icp_register(&global, frame, &opts.icp)
            .map_err(|e| Error::Frame {
                frame: i,
                source: Box::new(e),
            })?
            .transform;
        let moved = step.transform_cloud(&global)?;
        global = moved.union(&frame.clone().relabeled(moved.frame()))?.relabeled(frame.frame());
        origins.extend((0..frame.len()).map(|index| PointOrigin { frame: i, index }));
        steps.push(step);

        if let Some(fp) = opts.filter.as_ref().filter(|fp| fp.filters_at(i)) {
            let keep = density_filter_mask(global.points(), &[0.0; 3], fp);
            let before = global.len();
            global = global.retain_mask(&keep);
            origins = origins
                .into_iter()
                .zip(&keep)
                .filter_map(|(o, k)| k.then_some(o))
                .collect();
            passes.push(FilterPass {
                step: i,
                before,
                removed: before - global.len(),
            });
        }
    }
    Ok((
        global,
        AggregateTrace {
            origins,
            steps,
            filter_passes: passes,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob() -> PointCloud {
        let pts = (0..200)
            .map(|i| {
                let a = i as f64 * 0.1;
                [a.cos() * (1.0 + 0.1 * a), a.sin(), 0.05 * a + 0.3 * (0.7 * a).sin()]
            })
            .collect();
        PointCloud::new("lidar", pts).unwrap()
    }

    #[test]
    fn single_frame_is_returned_unchanged() {
        let c = blob();
        let out = aggregate(&[c.clone()], &AggregateOptions::default()).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn identical_frames_double_without_dedup() {
        let c = blob();
        let (out, trace) = aggregate_traced(&[c.clone(), c.clone()], &AggregateOptions::default()).unwrap();
        assert_eq!(out.len(), 2 * c.len());
        assert!(trace.steps[0].angle() < 1e-9);
        assert!(trace.steps[0].translation().norm() < 1e-9);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(aggregate(&[], &AggregateOptions::default()).is_err());
    }

    #[test]
    fn icp_failure_reports_frame_index() {
        let line = PointCloud::new("lidar", (0..20).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        let err = aggregate(&[blob(), blob(), line], &AggregateOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Frame { frame: 2, .. }), "{err}");
    }
}
