//! Lidar commands: frame aggregation and z-buffer projection.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use focuskit_core::io::{pfm, ply};
use focuskit_core::lidar::{
    aggregate_traced, project_zbuffer, AggregateOptions, FilterParams, FilterPass, IcpParams, Intrinsics, PointCloud,
    RigidTransform,
};

use super::JobConfig;
use crate::artifact::{read_input, OutputSet};
use crate::cli::{AggregateArgs, ProjectArgs};

/// Ground-truth floater labels for a sequence of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLabels {
    pub frames: Vec<FrameLabels>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub file: String,
    pub points: usize,
    /// Indices of floater returns within the frame.
    pub floaters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStats {
    pub floaters_in: usize,
    pub floaters_removed: usize,
    pub structure_in: usize,
    pub structure_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResults {
    pub frames: usize,
    pub points_in: usize,
    pub points_out: usize,
    pub removed_total: usize,
    pub filter_passes: Vec<FilterPass>,
    /// Registration of the growing cloud into each new frame.
    pub steps: Vec<RigidTransform>,
    pub labels: Option<LabelStats>,
}

pub fn aggregate(args: &AggregateArgs, out_dir: &Path) -> Result<AggregateResults> {
    let mut inputs = Vec::with_capacity(args.frames.len() + 1);
    let mut clouds = Vec::with_capacity(args.frames.len());
    for path in &args.frames {
        let (bytes, r) = read_input(path)?;
        inputs.push(r);
        clouds.push(ply::decode(&bytes).with_context(|| format!("decoding {}", path.display()))?.cloud);
    }
    let labels = match &args.labels {
        Some(path) => {
            let (bytes, r) = read_input(path)?;
            inputs.push(r);
            let labels: SweepLabels = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            check_labels(&labels, &clouds)?;
            Some(labels)
        }
        None => None,
    };
    let filter = FilterParams {
        alpha: args.alpha,
        k_neighbors: args.k_neighbors,
        warmup_frames: args.warmup_frames,
        interval_frames: args.interval_frames,
    };
    let opts = AggregateOptions {
        filter: (!args.no_filter).then_some(filter),
        icp: IcpParams {
            max_iterations: args.icp_iterations,
            max_correspondence_m: args.icp_max_distance_m,
            ..AggregateOptions::default().icp
        },
    };
    let (cloud, trace) = aggregate_traced(&clouds, &opts)?;
    for pass in &trace.filter_passes {
        info!("filter pass at frame {}: removed {} of {} points", pass.step, pass.removed, pass.before);
    }
    let points_in: usize = clouds.iter().map(|c| c.len()).sum();
    info!(
        "{} frames, {points_in} points in, {} out, {} removed by {} filter passes",
        clouds.len(),
        cloud.len(),
        trace.total_removed(),
        trace.filter_passes.len()
    );

    let stats = labels.map(|labels| {
        let kept: HashSet<(usize, usize)> = trace.origins.iter().map(|o| (o.frame, o.index)).collect();
        let mut s = LabelStats {
            floaters_in: 0,
            floaters_removed: 0,
            structure_in: 0,
            structure_kept: 0,
        };
        for (f, fl) in labels.frames.iter().enumerate() {
            let floaters: HashSet<usize> = fl.floaters.iter().copied().collect();
            for i in 0..fl.points {
                let survived = kept.contains(&(f, i));
                if floaters.contains(&i) {
                    s.floaters_in += 1;
                    s.floaters_removed += !survived as usize;
                } else {
                    s.structure_in += 1;
                    s.structure_kept += survived as usize;
                }
            }
        }
        info!(
            "floaters removed {}/{}, structure kept {}/{}",
            s.floaters_removed, s.floaters_in, s.structure_kept, s.structure_in
        );
        s
    });

    let results = AggregateResults {
        frames: clouds.len(),
        points_in,
        points_out: cloud.len(),
        removed_total: trace.total_removed(),
        filter_passes: trace.filter_passes.clone(),
        steps: trace.steps.clone(),
        labels: stats,
    };
    let config = JobConfig::new("aggregate", inputs, args);
    let prov = config.provenance(None)?;
    let mut out = OutputSet::create(out_dir)?;
    out.write("aggregated.ply", &ply::encode(&cloud, &prov.ply_comments()))?;
    out.finish("aggregate.json", &prov, &config, &results)?;
    Ok(results)
}

fn check_labels(labels: &SweepLabels, clouds: &[PointCloud]) -> Result<()> {
    if labels.frames.len() != clouds.len() {
        bail!("labels cover {} frames but {} were given", labels.frames.len(), clouds.len());
    }
    for (i, (l, c)) in labels.frames.iter().zip(clouds).enumerate() {
        if l.points != c.len() {
            bail!("frame {i}: labels expect {} points, the file has {}", l.points, c.len());
        }
        if let Some(bad) = l.floaters.iter().find(|j| **j >= c.len()) {
            bail!("frame {i}: floater index {bad} out of range");
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectResults {
    pub points: usize,
    pub width: usize,
    pub height: usize,
    pub valid_pixels: usize,
}

pub fn project(args: &ProjectArgs, out_dir: &Path) -> Result<ProjectResults> {
    let (cloud_bytes, cloud_ref) = read_input(&args.cloud)?;
    let (intr_bytes, intr_ref) = read_input(&args.intrinsics)
        .with_context(|| format!("missing intrinsics {}", args.intrinsics.display()))?;
    let mut inputs = vec![cloud_ref, intr_ref];
    let cloud = ply::decode(&cloud_bytes)?.cloud;
    let intrinsics: Intrinsics =
        serde_json::from_slice(&intr_bytes).with_context(|| format!("parsing {}", args.intrinsics.display()))?;
    let cam_cloud = match &args.camera_from_cloud {
        Some(path) => {
            let (bytes, r) = read_input(path)?;
            inputs.push(r);
            let t: RigidTransform =
                serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            t.transform_cloud(&cloud)?
        }
        None => cloud,
    };
    if cam_cloud.is_empty() {
        warn!("the point cloud is empty; the depth map will be all invalid");
    }
    let depth = project_zbuffer(&cam_cloud, &intrinsics, args.width, args.height, args.splat_radius)?;
    let results = ProjectResults {
        points: cam_cloud.len(),
        width: args.width,
        height: args.height,
        valid_pixels: depth.valid_count(),
    };
    if results.valid_pixels == 0 && !cam_cloud.is_empty() {
        warn!("no point projects into the image");
    }
    info!("{} of {} pixels covered", results.valid_pixels, args.width * args.height);
    let config = JobConfig::new("project", inputs, args);
    let prov = config.provenance(None)?;
    let mut out = OutputSet::create(out_dir)?;
    out.write("depth.pfm", &pfm::encode_depth(&depth))?;
    out.finish("project.json", &prov, &config, &results)?;
    Ok(results)
}
