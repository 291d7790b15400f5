//! Region-and-depth-range point removal used by manual cleanup.
//!
//! A point is removed when, seen from the edit's camera view, it projects
//! inside the image-space polygon and its camera-space depth lies in the
//! closed depth range. Points behind the camera are never removed.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Intrinsics, PointCloud, RigidTransform};
use crate::error::{invalid, Result};

/// Closed depth interval in meters; `max` may be `+inf` (JSON `null`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if min.is_nan() || max.is_nan() || min > max {
            return Err(invalid(format!("bad depth range [{min}, {max}]")));
        }
        Ok(DepthRange { min, max })
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.min && z <= self.max
    }
}

impl Serialize for DepthRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let max = self.max.is_finite().then_some(self.max);
        (self.min, max).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DepthRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (min, max): (f64, Option<f64>) = Deserialize::deserialize(d)?;
        DepthRange::new(min, max.unwrap_or(f64::INFINITY)).map_err(serde::de::Error::custom)
    }
}

/// Viewpoint an edit was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    /// Row-major 4x4 rigid transform from cloud coordinates to camera coordinates.
    pub camera_from_cloud: [[f64; 4]; 4],
}

impl CameraView {
    pub fn identity(intrinsics: Intrinsics) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        CameraView {
            intrinsics,
            camera_from_cloud: m,
        }
    }

    pub fn from_transform(intrinsics: Intrinsics, t: &RigidTransform) -> Self {
        let m = t.matrix();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        CameraView {
            intrinsics,
            camera_from_cloud: rows,
        }
    }

    pub fn transform(&self, cloud_frame: &str) -> Result<RigidTransform> {
        let m = &self.camera_from_cloud;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(invalid("view pose last row must be [0, 0, 0, 1]"));
        }
        RigidTransform::new(
            Matrix3::from_fn(|r, c| m[r][c]),
            Vector3::new(m[0][3], m[1][3], m[2][3]),
            cloud_frame,
            "view",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEdit {
    /// Image-space vertices in pixels; implicitly closed.
    pub polygon: Vec<[f64; 2]>,
    pub depth_range: DepthRange,
    pub view: CameraView,
}

impl RegionEdit {
    pub fn validate(&self) -> Result<()> {
        if self.polygon.len() < 3 {
            return Err(invalid(format!(
                "polygon needs at least 3 vertices, got {}",
                self.polygon.len()
            )));
        }
        if !self.polygon.iter().flatten().all(|v| v.is_finite()) {
            return Err(invalid("polygon vertices must be finite"));
        }
        self.view.intrinsics.validate()
    }
}

/// Even-odd rule point-in-polygon test.
pub fn point_in_polygon(pt: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let [x, y] = pt;
    let mut inside = false;
    let n = polygon.len();
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = polygon[i];
        let [xj, yj] = polygon[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// `true` for every point the edit removes.
pub fn region_mask(cloud: &PointCloud, edit: &RegionEdit) -> Result<Vec<bool>> {
    edit.validate()?;
    let pose = edit.view.transform(cloud.frame())?;
    Ok(cloud
        .points()
        .iter()
        .map(|p| {
            let q = pose.apply(p);
            match edit.view.intrinsics.project(&q) {
                Some(uv) => edit.depth_range.contains(q[2]) && point_in_polygon(uv, &edit.polygon),
                None => false,
            }
        })
        .collect())
}

pub fn remove_by_region(cloud: &PointCloud, edit: &RegionEdit) -> Result<PointCloud> {
    let hit = region_mask(cloud, edit)?;
    let keep: Vec<bool> = hit.iter().map(|h| !h).collect();
    Ok(cloud.retain_mask(&keep))
}
