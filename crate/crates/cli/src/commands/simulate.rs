//! Synthetic inputs for demos and end-to-end tests.

use std::path::Path;

use anyhow::Result;
use log::info;
use serde::Serialize;

use focuskit_core::io::{pfm, ply, png};
use focuskit_core::lidar::RigidTransform;
use focuskit_core::optics::ThinLensConfig;
use focuskit_core::sim::{simulate_room_sweep, two_plane_scene, RoomSweepConfig};

use super::lidar::{FrameLabels, SweepLabels};
use super::JobConfig;
use crate::artifact::OutputSet;
use crate::cli::{SimSweepArgs, TwoPlaneArgs};

/// Writes `rgb.png`, `depth.pfm` and `lens.json`.
pub fn two_plane(args: &TwoPlaneArgs, out_dir: &Path) -> Result<()> {
    let scene = two_plane_scene(args.width, args.height, args.near_m, args.far_m, 0.5, args.seed)?;
    let center = [(args.width as f64 - 1.0) / 2.0, (args.height as f64 - 1.0) / 2.0];
    let lens = ThinLensConfig::new(0.025, 2.0, 1e-5, center)?;
    let config = JobConfig::new("simulate two-plane", Vec::new(), args);
    let prov = config.provenance(Some(args.seed))?;
    let mut out = OutputSet::create(out_dir)?;
    out.write("rgb.png", &png::encode(&scene.rgb)?)?;
    out.write("depth.pfm", &pfm::encode_depth(&scene.depth))?;
    out.write_json("lens.json", &lens)?;
    #[derive(Serialize)]
    struct Results {
        near_m: f64,
        far_m: f64,
        near_pixels: usize,
    }
    let results = Results {
        near_m: scene.near_m,
        far_m: scene.far_m,
        near_pixels: scene.near_mask.iter().filter(|b| **b).count(),
    };
    out.finish("scene.json", &prov, &config, &results)?;
    Ok(())
}

/// Writes `frames/frame_NNN.ply`, `labels.json` and `poses.json`.
pub fn sweep(args: &SimSweepArgs, out_dir: &Path) -> Result<SweepLabels> {
    let cfg = RoomSweepConfig {
        frames: args.frames,
        points_per_frame: args.points_per_frame,
        floaters_per_frame: args.floaters_per_frame,
        floater_start_frame: args.floater_start_frame.unwrap_or(args.frames / 2),
        seed: args.seed,
        ..RoomSweepConfig::default()
    };
    let sim = simulate_room_sweep(&cfg)?;
    let config = JobConfig::new("simulate sweep", Vec::new(), &cfg);
    let prov = config.provenance(Some(args.seed))?;
    let comments = prov.ply_comments();
    let mut out = OutputSet::create(out_dir)?;
    let mut labels = SweepLabels { frames: Vec::new() };
    let mut poses: Vec<RigidTransform> = Vec::new();
    for (i, frame) in sim.frames.iter().enumerate() {
        let file = format!("frames/frame_{i:03}.ply");
        out.write(&file, &ply::encode(&frame.cloud, &comments))?;
        labels.frames.push(FrameLabels {
            file,
            points: frame.cloud.len(),
            floaters: (0..frame.cloud.len()).filter(|j| frame.is_floater[*j]).collect(),
        });
        poses.push(frame.world_from_sensor.clone());
    }
    out.write_json("labels.json", &labels)?;
    out.write_json("poses.json", &poses)?;
    let floaters: usize = labels.frames.iter().map(|f| f.floaters.len()).sum();
    info!("{} frames, {} points, {floaters} floaters", sim.frames.len(), sim.total_points());
    out.finish("simulation.json", &prov, &config, &serde_json::json!({ "floaters": floaters }))?;
    Ok(labels)
}
