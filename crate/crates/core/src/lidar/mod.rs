//! Dense depth ground truth from Lidar sweeps.
//!
//! The pipeline registers a sequence of per-frame scans into one global cloud
//! (ICP plus periodic distance-adaptive density filtering), chains the result
//! into the camera frame and renders it into a depth map with a z-buffer.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub mod aggregate;
pub mod filter;
pub mod icp;
pub mod kdtree;
pub mod project;
pub mod region;

pub use aggregate::{aggregate, aggregate_traced, AggregateOptions, AggregateTrace, FilterPass, PointOrigin};
pub use filter::{density_filter, density_filter_mask, FilterParams};
pub use icp::{fit_rigid, icp_register, icp_register_from, IcpParams, IcpReport};
pub use kdtree::KdTree;
pub use project::{project_zbuffer, splat_offsets, Intrinsics};
pub use region::{point_in_polygon, region_mask, remove_by_region, CameraView, DepthRange, RegionEdit};

pub type Point3 = [f64; 3];

/// Points in a named coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    frame: String,
    points: Vec<Point3>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(frame: impl Into<String>, points: Vec<Point3>) -> Result<Self> {
        Self::with_intensity(frame, points, None)
    }

    pub fn with_intensity(
        frame: impl Into<String>,
        points: Vec<Point3>,
        intensity: Option<Vec<f32>>,
    ) -> Result<Self> {
        let frame = frame.into();
        if frame.is_empty() {
            return Err(invalid("point cloud frame label must be non-empty"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(invalid(format!("point {i} has non-finite coordinates")));
        }
        if let Some(int) = &intensity {
            if int.len() != points.len() {
                return Err(invalid(format!(
                    "{} intensities for {} points",
                    int.len(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud {
            frame,
            points,
            intensity,
        })
    }

    pub fn empty(frame: impl Into<String>) -> Result<Self> {
        Self::new(frame, Vec::new())
    }

    pub fn frame(&self) -> &str {
        &self.frame
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points whose mask entry is `true`.
    pub fn retain_mask(&self, keep: &[bool]) -> PointCloud {
        debug_assert_eq!(keep.len(), self.points.len());
        let points = self
            .points
            .iter()
            .zip(keep)
            .filter_map(|(p, k)| k.then_some(*p))
            .collect();
        let intensity = self.intensity.as_ref().map(|int| {
            int.iter()
                .zip(keep)
                .filter_map(|(v, k)| k.then_some(*v))
                .collect()
        });
        PointCloud {
            frame: self.frame.clone(),
            points,
            intensity,
        }
    }

    /// Concatenation; `other` must be in the same frame. Intensity is kept
    /// only when both sides carry it.
    pub fn union(&self, other: &PointCloud) -> Result<PointCloud> {
        if self.frame != other.frame {
            return Err(Error::FrameMismatch {
                expected: self.frame.clone(),
                found: other.frame.clone(),
            });
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let intensity = match (&self.intensity, &other.intensity) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(PointCloud {
            frame: self.frame.clone(),
            points,
            intensity,
        })
    }

    pub(crate) fn relabeled(mut self, frame: &str) -> PointCloud {
        self.frame = frame.to_owned();
        self
    }
}

/// Rigid motion `p_target = R p_source + t` between two named frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    source: String,
    target: String,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        source: impl Into<String>,
        target: impl Into<String>,
    ) -> Result<Self> {
        let t = RigidTransform {
            rotation,
            translation,
            source: source.into(),
            target: target.into(),
        };
        t.check()?;
        Ok(t)
    }

    pub fn identity(source: impl Into<String>, target: impl Into<String>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            source: source.into(),
            target: target.into(),
        }
    }

    /// Rotation about a unit axis by `angle` radians, followed by `translation`.
    pub fn from_axis_angle(
        axis: [f64; 3],
        angle: f64,
        translation: [f64; 3],
        source: impl Into<String>,
        target: impl Into<String>,
    ) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(Vector3::from(axis), 1e-12)
            .ok_or_else(|| invalid("rotation axis must be non-zero"))?;
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        Self::new(*r.matrix(), Vector3::from(translation), source, target)
    }

    fn check(&self) -> Result<()> {
        if self.source.is_empty() || self.target.is_empty() {
            return Err(invalid("transform frame labels must be non-empty"));
        }
        let r = &self.rotation;
        if !r.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(invalid("transform has non-finite entries"));
        }
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(invalid(format!("rotation is not orthonormal (error {err:.2e})")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let v = self.rotation * Vector3::from(*p) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            translation: -(rt * self.translation),
            rotation: rt,
            source: self.target.clone(),
            target: self.source.clone(),
        }
    }

    /// `self ∘ inner`: applies `inner` first. Requires `inner.target == self.source`.
    pub fn compose(&self, inner: &RigidTransform) -> Result<RigidTransform> {
        if inner.target != self.source {
            return Err(Error::FrameMismatch {
                expected: self.source.clone(),
                found: inner.target.clone(),
            });
        }
        Ok(RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
            source: inner.source.clone(),
            target: self.target.clone(),
        })
    }

    /// Maps every point of a cloud in the source frame into the target frame.
    pub fn transform_cloud(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.frame != self.source {
            return Err(Error::FrameMismatch {
                expected: self.source.clone(),
                found: cloud.frame.clone(),
            });
        }
        Ok(PointCloud {
            frame: self.target.clone(),
            points: cloud.points.iter().map(|p| self.apply(p)).collect(),
            intensity: cloud.intensity.clone(),
        })
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub(crate) fn from_parts_unchecked(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        source: &str,
        target: &str,
    ) -> Self {
        RigidTransform {
            rotation,
            translation,
            source: source.to_owned(),
            target: target.to_owned(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TransformJson {
    source_frame: String,
    target_frame: String,
    matrix: [[f64; 4]; 4],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = self.matrix();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        TransformJson {
            source_frame: self.source.clone(),
            target_frame: self.target.clone(),
            matrix: rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = TransformJson::deserialize(d)?;
        let m = raw.matrix;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(serde::de::Error::custom("last row of a rigid transform must be [0,0,0,1]"));
        }
        let rotation = Matrix3::from_fn(|r, c| m[r][c]);
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        RigidTransform::new(rotation, translation, raw.source_frame, raw.target_frame)
            .map_err(serde::de::Error::custom)
    }
}

/// `cam_T_lidar · lidar_T_world` applied to every world point.
pub fn chain_to_camera(
    p_world: &PointCloud,
    t_cam_lidar: &RigidTransform,
    t_lidar_world: &RigidTransform,
) -> Result<PointCloud> {
    let cam_world = t_cam_lidar.compose(t_lidar_world)?;
    cam_world.transform_cloud(p_world)
}
