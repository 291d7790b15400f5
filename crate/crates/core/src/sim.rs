//! Deterministic synthetic scenes for tests, demos and sweeps.
//!
//! - [`two_plane_scene`]: a noise-textured RGBD image whose left part is a
//!   fronto-parallel plane at one depth and the rest a plane at another.
//! - [`simulate_room_sweep`]: a limited-FOV range sensor panning through a
//!   box-shaped room with one box obstacle. A few returns per frame are
//!   floaters placed in free space, labeled so filters can be scored.

use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lidar::{Point3, PointCloud, RigidTransform};
use crate::randomization::SeededRng;
use crate::raster::{DepthMap, RgbImage};

#[derive(Debug, Clone)]
pub struct TwoPlaneScene {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// `true` where the near plane is.
    pub near_mask: Vec<bool>,
    pub near_m: f64,
    pub far_m: f64,
}

/// Noise texture on two planes; columns `x < width * near_fraction` are near.
pub fn two_plane_scene(
    width: usize,
    height: usize,
    near_m: f64,
    far_m: f64,
    near_fraction: f64,
    seed: u64,
) -> Result<TwoPlaneScene> {
    if !(near_m > 0.0 && near_m < far_m) {
        return Err(invalid(format!("need 0 < near < far, got {near_m} .. {far_m}")));
    }
    if !(0.0..=1.0).contains(&near_fraction) {
        return Err(invalid("near fraction must lie in [0, 1]"));
    }
    let split = (width as f64 * near_fraction).round() as usize;
    let mut rng = SeededRng::new(seed);
    let mut texel = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let base = rng.uniform(0.1, 0.9);
        let tint = [rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)];
        texel.push([
            (base + tint[0]) as f32,
            base as f32,
            (base + tint[1]) as f32,
        ]);
    }
    let rgb = RgbImage::from_fn(width, height, |x, y| texel[y * width + x])?;
    let near_mask: Vec<bool> = (0..width * height).map(|i| i % width < split).collect();
    let depth = DepthMap::from_fn(width, height, |x, y| if near_mask[y * width + x] { near_m } else { far_m })?;
    Ok(TwoPlaneScene {
        rgb,
        depth,
        near_mask,
        near_m,
        far_m,
    })
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - margin && p[a] <= self.max[a] + margin)
    }

    /// Distance from an interior point to the nearest face.
    fn interior_clearance(&self, p: &Vector3<f64>) -> f64 {
        (0..3)
            .map(|a| (p[a] - self.min[a]).min(self.max[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Ray parameter where a ray starting inside leaves the box.
    fn exit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
        (0..3)
            .filter(|a| d[*a] != 0.0)
            .map(|a| {
                let bound = if d[a] > 0.0 { self.max[a] } else { self.min[a] };
                (bound - o[a]) / d[a]
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Ray parameter where a ray from outside first enters the box.
    fn entry(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomSweepConfig {
    /// Number of scans, including the first.
    pub frames: usize,
    pub points_per_frame: usize,
    pub floaters_per_frame: usize,
    /// First frame that contains floaters.
    pub floater_start_frame: usize,
    pub fov_deg: [f64; 2],
    pub room: Aabb,
    pub obstacle: Aabb,
    pub start_position: [f64; 3],
    pub end_position: [f64; 3],
    pub start_yaw_deg: f64,
    pub end_yaw_deg: f64,
    pub pitch_deg: f64,
    pub range_noise_m: f64,
    /// Minimum distance between a floater and any surface.
    pub floater_clearance_m: f64,
    pub seed: u64,
}

impl Default for RoomSweepConfig {
    fn default() -> Self {
        RoomSweepConfig {
            frames: 121,
            points_per_frame: 12000,
            floaters_per_frame: 5,
            floater_start_frame: 61,
            fov_deg: [60.0, 45.0],
            room: Aabb {
                min: [-3.0, -2.5, 0.0],
                max: [3.0, 2.5, 2.6],
            },
            obstacle: Aabb {
                min: [1.0, 0.2, 0.0],
                max: [1.8, 1.0, 0.9],
            },
            start_position: [-1.6, -1.2, 1.3],
            end_position: [-1.3, -1.0, 1.35],
            start_yaw_deg: 25.0,
            end_yaw_deg: 45.0,
            pitch_deg: 10.0,
            range_noise_m: 0.002,
            floater_clearance_m: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimFrame {
    /// Returns in the sensor frame (x right, y down, z forward).
    pub cloud: PointCloud,
    pub is_floater: Vec<bool>,
    /// Maps sensor-frame points into the world frame.
    pub world_from_sensor: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct RoomSweep {
    pub frames: Vec<SimFrame>,
}

impl RoomSweep {
    pub fn clouds(&self) -> Vec<PointCloud> {
        self.frames.iter().map(|f| f.cloud.clone()).collect()
    }

    pub fn total_points(&self) -> usize {
        self.frames.iter().map(|f| f.cloud.len()).sum()
    }
}

/// Camera-style sensor rotation for a yaw about world `+z` and a downward
/// pitch. Columns are the sensor's right, down and forward axes.
fn sensor_rotation(yaw: f64, pitch: f64) -> Matrix3<f64> {
    let f = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin());
    let r = f.cross(&Vector3::z()).normalize();
    let d = f.cross(&r);
    Matrix3::from_columns(&[r, d, f])
}

pub fn simulate_room_sweep(cfg: &RoomSweepConfig) -> Result<RoomSweep> {
    if cfg.frames == 0 || cfg.points_per_frame < 3 {
        return Err(invalid("a sweep needs at least one frame and three points per frame"));
    }
    let [fh, fv] = cfg.fov_deg;
    if !(fh > 0.0 && fh < 170.0 && fv > 0.0 && fv < 170.0) {
        return Err(invalid("field of view must lie in (0, 170) degrees"));
    }
    let start = Vector3::from(cfg.start_position);
    if !cfg.room.contains(&start, 0.0) || cfg.obstacle.contains(&start, 0.0) {
        return Err(invalid("sensor path must start inside the room and outside the obstacle"));
    }
    let noise = Normal::new(0.0, cfg.range_noise_m.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let tan_h = (fh.to_radians() / 2.0).tan();
    let tan_v = (fv.to_radians() / 2.0).tan();
    let base = SeededRng::new(cfg.seed);

    let mut frames = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let s = if cfg.frames > 1 { i as f64 / (cfg.frames - 1) as f64 } else { 0.0 };
        let pos = start + (Vector3::from(cfg.end_position) - start) * s;
        let yaw = (cfg.start_yaw_deg + (cfg.end_yaw_deg - cfg.start_yaw_deg) * s).to_radians();
        let rot = sensor_rotation(yaw, cfg.pitch_deg.to_radians());
        let world_from_sensor = RigidTransform::new(rot, pos, format!("sensor_{i}"), "world")?;
        let mut rng = base.fork(i as u64 + 1);

        let cast = |dir_s: &Vector3<f64>| {
            let d = rot * dir_s;
            let wall = cfg.room.exit(&pos, &d);
            match cfg.obstacle.entry(&pos, &d) {
                Some(t) if t < wall => t,
                _ => wall,
            }
        };
        let mut points = Vec::with_capacity(cfg.points_per_frame + cfg.floaters_per_frame);
        let mut is_floater = Vec::with_capacity(points.capacity());
        for _ in 0..cfg.points_per_frame {
            let dir = Vector3::new(rng.uniform(-tan_h, tan_h), rng.uniform(-tan_v, tan_v), 1.0).normalize();
            let t = cast(&dir) + noise.sample(&mut rng);
            let p = dir * t;
            points.push([p.x, p.y, p.z]);
            is_floater.push(false);
        }
        let mut placed = 0;
        let floaters = if i >= cfg.floater_start_frame { cfg.floaters_per_frame } else { 0 };
        while placed < floaters {
            let dir = Vector3::new(rng.uniform(-tan_h, tan_h), rng.uniform(-tan_v, tan_v), 1.0).normalize();
            let t = rng.uniform(0.3, cast(&dir));
            let w = pos + rot * (dir * t);
            let clear = cfg.room.interior_clearance(&w) >= cfg.floater_clearance_m
                && !cfg.obstacle.contains(&w, cfg.floater_clearance_m);
            if clear {
                let p = dir * t;
                points.push([p.x, p.y, p.z]);
                is_floater.push(true);
                placed += 1;
            }
        }
        frames.push(SimFrame {
            cloud: PointCloud::new(format!("sensor_{i}"), points)?,
            is_floater,
            world_from_sensor,
        });
    }
    Ok(RoomSweep { frames })
}

/// Smooth, asymmetric surface patch for registration tests: `n` points on a
/// bumpy sheet spanning about 2 m x 1.5 m, deterministic in `seed`.
pub fn registration_surface(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| {
            let x = rng.uniform(-1.0, 1.0);
            let y = rng.uniform(-0.75, 0.75);
            let z = 3.0 + 0.3 * (1.7 * x).sin() * (2.3 * y + 0.4).cos() + 0.15 * x * x - 0.1 * x * y + 0.2 * y;
            [x, y, z]
        })
        .collect()
}
