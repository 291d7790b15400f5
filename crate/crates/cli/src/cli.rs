use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::artifact::OUT_DIR_ENV;

#[derive(Debug, Parser)]
#[command(name = "focuskit", version, about = "Focus-stack synthesis and Lidar depth ground truth")]
pub struct Cli {
    /// Output directory.
    #[arg(long, short, global = true, env = OUT_DIR_ENV, default_value = "focuskit-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a focus stack from an RGB image and a depth map.
    Synthesize(SynthesizeArgs),
    /// Draw focus-distance sets (and blur parameters) from the seeded sampler.
    SampleFds(SampleFdsArgs),
    /// Register and filter a sequence of Lidar frames into one cloud.
    Aggregate(AggregateArgs),
    /// Render a point cloud into a PFM depth map with a z-buffer.
    Project(ProjectArgs),
    /// Compare a predicted depth map against ground truth.
    Evaluate(EvaluateArgs),
    /// Depth-from-focus over aperture, focus-distance and stack-size axes.
    Sweep(SweepArgs),
    /// Estimate depth from a synthesized stack by depth from focus.
    Dfo(DfoArgs),
    /// HTTP service for interactive point-cloud cleanup.
    ServeCleanup(ServeArgs),
    /// Write deterministic synthetic inputs.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Reference,
    Layered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FdModeArg {
    Percentile,
    Automatic,
    Mixed,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LensArgs {
    /// Lens JSON with focal_length_m, f_number, pixel_pitch_m, principal_point.
    #[arg(long, conflicts_with_all = ["focal_length_m", "f_number", "pixel_pitch_m"])]
    #[serde(skip)]
    pub lens: Option<PathBuf>,
    #[arg(long, default_value_t = 0.025)]
    pub focal_length_m: f64,
    /// Sampled from the aperture list when omitted.
    #[arg(long)]
    pub f_number: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub pixel_pitch_m: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FdArgs {
    /// Explicit ascending focus distances in meters; skips FD sampling.
    #[arg(long, value_delimiter = ',')]
    pub fds: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "mixed")]
    pub fd_mode: FdModeArg,
    #[arg(long, default_value_t = 5)]
    pub stack_size: usize,
    /// Fix the spacing exponent instead of drawing it from [0, 1].
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthesizeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub rgb: PathBuf,
    /// PFM depth in meters; zero or non-finite pixels are holes.
    #[arg(long)]
    #[serde(skip)]
    pub depth: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub lens: LensArgs,
    #[command(flatten)]
    pub fd: FdArgs,
    /// PSF shape exponent; sampled when omitted.
    #[arg(long)]
    pub psf_p: Option<f64>,
    #[arg(long, value_enum, default_value = "reference")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 32)]
    pub layers: usize,
    /// Fill depth holes before rendering instead of rejecting them.
    #[arg(long)]
    pub fill_holes: bool,
    /// Center zoom in [1, 1.5] applied before rendering.
    #[arg(long)]
    pub zoom: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleFdsArgs {
    #[arg(long)]
    pub seed: u64,
    /// Depth map for percentile bounds.
    #[arg(long)]
    #[serde(skip)]
    pub depth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mixed")]
    pub fd_mode: FdModeArg,
    #[arg(long, default_value_t = 5)]
    pub stack_size: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AggregateArgs {
    /// PLY frames in scan order.
    #[arg(required = true)]
    #[serde(skip)]
    pub frames: Vec<PathBuf>,
    /// JSON with per-frame floater indices, as written by `simulate sweep`.
    #[arg(long)]
    #[serde(skip)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long, default_value_t = 0.008)]
    pub alpha: f64,
    #[arg(long, default_value_t = 7)]
    pub k_neighbors: usize,
    #[arg(long, default_value_t = 50)]
    pub warmup_frames: usize,
    #[arg(long, default_value_t = 10)]
    pub interval_frames: usize,
    #[arg(long, default_value_t = 0.05)]
    pub icp_max_distance_m: f64,
    #[arg(long, default_value_t = 100)]
    pub icp_iterations: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub cloud: PathBuf,
    /// JSON {fx, fy, cx, cy} in pixels.
    #[arg(long)]
    #[serde(skip)]
    pub intrinsics: PathBuf,
    /// Rigid transform JSON taking cloud coordinates into the camera frame.
    #[arg(long)]
    #[serde(skip)]
    pub camera_from_cloud: Option<PathBuf>,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub splat_radius: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub pred: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub gt: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = focuskit_core::metrics::DEFAULT_DELTA_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = focuskit_core::metrics::DEFAULT_SILOG_LAMBDA)]
    pub silog_lambda: f64,
    #[arg(long, default_value_t = focuskit_core::metrics::DEFAULT_GRAD_SCALES)]
    pub grad_scales: usize,
    /// Also write metrics.csv with one row labelled by this scene name.
    #[arg(long)]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub rgb: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub depth: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.025)]
    pub focal_length_m: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub pixel_pitch_m: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1.4, 2.0, 2.8, 4.0])]
    pub f_numbers: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [3, 5, 9])]
    pub stack_sizes: Vec<usize>,
    /// FD spacings: a kappa in [0, 1], or `random` for a seeded draw.
    #[arg(long, value_delimiter = ',', default_values_t = ["0".to_string(), "1".to_string(), "random".to_string()])]
    pub fd_spacings: Vec<String>,
    #[arg(long, default_value_t = 2.0)]
    pub psf_p: f64,
    #[arg(long, default_value_t = focuskit_core::dfo::DEFAULT_WINDOW_RADIUS)]
    pub window: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DfoArgs {
    /// `stack.json` written by `synthesize`.
    #[arg(long)]
    #[serde(skip)]
    pub stack: PathBuf,
    #[arg(long, default_value_t = focuskit_core::dfo::DEFAULT_WINDOW_RADIUS)]
    pub window: usize,
    /// Sub-step refinement with a parabola in log disparity.
    #[arg(long)]
    pub refine: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, default_value_t = 8750)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Noise-textured two-plane RGBD scene plus a matching lens.
    TwoPlane(TwoPlaneArgs),
    /// Lidar sweep of a box room with labelled floaters.
    Sweep(SimSweepArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TwoPlaneArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 1.0)]
    pub near_m: f64,
    #[arg(long, default_value_t = 3.0)]
    pub far_m: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimSweepArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 121)]
    pub frames: usize,
    #[arg(long, default_value_t = 12000)]
    pub points_per_frame: usize,
    #[arg(long, default_value_t = 5)]
    pub floaters_per_frame: usize,
    /// Defaults to the middle of the sweep.
    #[arg(long)]
    pub floater_start_frame: Option<usize>,
}
