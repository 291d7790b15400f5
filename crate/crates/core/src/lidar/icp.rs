//! Point-to-point ICP with a closed-form (SVD) rigid fit.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KdTree, Point3, PointCloud, RigidTransform};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondences farther apart than this (meters) are discarded.
    pub max_correspondence_m: f64,
    /// Stop once the RMS residual changes by less than this (meters).
    pub rms_tolerance_m: f64,
    /// Optional voxel-grid downsampling of the source before matching.
    pub voxel_size_m: Option<f64>,
    /// Optional cap on matched source points, taken with a fixed stride.
    pub max_source_points: Option<usize>,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: 30,
            max_correspondence_m: 0.5,
            rms_tolerance_m: 1e-6,
            voxel_size_m: None,
            max_source_points: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpReport {
    /// Maps source-frame points onto the target.
    pub transform: RigidTransform,
    /// RMS distance of the final correspondences.
    pub rms_m: f64,
    pub iterations: usize,
    pub correspondences: usize,
}

fn centroid(points: &[Point3]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for p in points {
        c += Vector3::from(*p);
    }
    c / points.len() as f64
}

/// Rejects point sets that are empty, coincident or collinear.
pub fn check_spread(points: &[Point3], what: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{what} has {} points, need at least 3",
            points.len()
        )));
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - c;
        cov += d * d.transpose();
    }
    let mut sv: Vec<f64> = cov.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 1e-18 {
        return Err(Error::Degenerate(format!("{what} points are coincident")));
    }
    if sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Degenerate(format!("{what} points are collinear")));
    }
    Ok(())
}

/// Least-squares rotation and translation with `dst ≈ R src + t` (Kabsch).
pub fn fit_rigid(src: &[Point3], dst: &[Point3]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "rigid fit needs >= 3 paired points, got {} / {}",
            src.len(),
            dst.len()
        )));
    }
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (Vector3::from(*s) - cs) * (Vector3::from(*d) - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD of cross-covariance failed".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    let t = cd - r * cs;
    Ok((r, t))
}

fn voxel_downsample(points: &[Point3], voxel: f64) -> Vec<Point3> {
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let key = p.map(|c| (c / voxel).floor() as i64);
        let e = cells.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += Vector3::from(*p);
        e.1 += 1;
    }
    cells
        .into_values()
        .map(|(s, n)| {
            let c = s / n as f64;
            [c.x, c.y, c.z]
        })
        .collect()
}

fn stride_sample(points: Vec<Point3>, cap: usize) -> Vec<Point3> {
    if cap == 0 || points.len() <= cap {
        return points;
    }
    let n = points.len();
    (0..cap).map(|k| points[k * n / cap]).collect()
}

/// Estimates the transform mapping `source` onto `target`, starting from
/// `initial` (identity when `None`).
pub fn icp_register_from(
    source: &PointCloud,
    target: &PointCloud,
    params: &IcpParams,
    initial: Option<&RigidTransform>,
) -> Result<IcpReport> {
    if !(params.max_correspondence_m > 0.0) || params.max_iterations == 0 {
        return Err(invalid("ICP needs a positive gate and at least one iteration"));
    }
    check_spread(source.points(), "source")?;
    check_spread(target.points(), "target")?;

    let mut src: Vec<Point3> = match params.voxel_size_m {
        Some(v) if v > 0.0 => voxel_downsample(source.points(), v),
        _ => source.points().to_vec(),
    };
    if let Some(cap) = params.max_source_points {
        src = stride_sample(src, cap);
    }
    let tree = KdTree::new(target.points());
    let gate2 = params.max_correspondence_m * params.max_correspondence_m;

    let (mut rot, mut trans) = match initial {
        Some(t) => (*t.rotation(), *t.translation()),
        None => (Matrix3::identity(), Vector3::zeros()),
    };
    let mut prev_rms = f64::INFINITY;
    let mut prev_pairs: Vec<Option<usize>> = Vec::new();
    for iter in 1..=params.max_iterations {
        let pairs: Vec<Option<(usize, f64)>> = src
            .par_iter()
            .map(|p| {
                let q = rot * Vector3::from(*p) + trans;
                tree.nearest(&[q.x, q.y, q.z]).filter(|(_, d2)| *d2 <= gate2)
            })
            .collect();
        let mut s = Vec::new();
        let mut d = Vec::new();
        for (p, m) in src.iter().zip(&pairs) {
            if let Some((j, _)) = m {
                s.push(*p);
                d.push(target.points()[*j]);
            }
        }
        if s.len() < 3 {
            return Err(Error::Degenerate(format!(
                "only {} correspondences inside the {} m gate",
                s.len(),
                params.max_correspondence_m
            )));
        }
        let (r, t) = fit_rigid(&s, &d)?;
        rot = r;
        trans = t;
        let rms = residual_rms(&s, &d, &rot, &trans);
        let ids: Vec<Option<usize>> = pairs.iter().map(|m| m.map(|(j, _)| j)).collect();
        let stable = ids == prev_pairs;
        if stable || (prev_rms - rms).abs() < params.rms_tolerance_m {
            return Ok(IcpReport {
                transform: RigidTransform::from_parts_unchecked(rot, trans, source.frame(), target.frame()),
                rms_m: rms,
                iterations: iter,
                correspondences: s.len(),
            });
        }
        prev_rms = rms;
        prev_pairs = ids;
    }
    Err(Error::NotConverged {
        iterations: params.max_iterations,
        rms: prev_rms,
    })
}

fn residual_rms(s: &[Point3], d: &[Point3], r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
    let sum: f64 = s
        .iter()
        .zip(d)
        .map(|(a, b)| ((r * Vector3::from(*a) + t) - Vector3::from(*b)).norm_squared())
        .sum();
    (sum / s.len() as f64).sqrt()
}

/// Point-to-point ICP from the identity.
pub fn icp_register(source: &PointCloud, target: &PointCloud, params: &IcpParams) -> Result<IcpReport> {
    icp_register_from(source, target, params, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kabsch_recovers_exact_motion() {
        let src = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.3, 0.1, 1.0]];
        let t = RigidTransform::from_axis_angle([0.2, 0.5, 1.0], 0.4, [1.0, -2.0, 0.5], "a", "b").unwrap();
        let dst: Vec<Point3> = src.iter().map(|p| t.apply(p)).collect();
        let (r, tr) = fit_rigid(&src, &dst).unwrap();
        assert!((r - t.rotation()).abs().max() < 1e-12);
        assert!((tr - t.translation()).abs().max() < 1e-12);
    }

    #[test]
    fn kabsch_never_returns_reflection() {
        // planar input admits a reflection with equal residual
        let src = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let (r, _) = fit_rigid(&src, &src).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let line = PointCloud::new("a", (0..10).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        let ok = PointCloud::new("b", vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(matches!(icp_register(&line, &ok, &IcpParams::default()), Err(Error::Degenerate(_))));
        let same = PointCloud::new("a", vec![[1.0, 1.0, 1.0]; 5]).unwrap();
        assert!(matches!(icp_register(&same, &ok, &IcpParams::default()), Err(Error::Degenerate(_))));
        let two = PointCloud::new("a", vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(icp_register(&two, &ok, &IcpParams::default()).is_err());
    }

    #[test]
    fn voxel_downsample_is_deterministic() {
        let pts: Vec<Point3> = (0..100).map(|i| [(i % 10) as f64 * 0.01, (i / 10) as f64 * 0.01, 0.0]).collect();
        let a = voxel_downsample(&pts, 0.05);
        let b = voxel_downsample(&pts, 0.05);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }
}
