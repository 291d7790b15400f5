//! Focus-stack commands: synthesize, sample-fds, dfo and the robustness sweep.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use focuskit_core::dfo::estimate_depth;
use focuskit_core::io::{pfm, png};
use focuskit_core::metrics::{compute_metrics, LossConfig, DEFAULT_DELTA_THRESHOLDS};
use focuskit_core::optics::ThinLensConfig;
use focuskit_core::randomization::{
    interpolate_fds, percentile, sample_f_number, sample_fds, sample_psf_shape, BlurSamplerConfig, FdBounds, FdMode,
    FdSample, FdSamplerConfig, FdSource, SeededRng, RNG_ALGORITHM,
};
use focuskit_core::raster::{DepthMap, RgbImage};
use focuskit_core::synth::{fill_depth_holes, synthesize_stack, zoom_augment, FocusStack, SynthMode};

use super::JobConfig;
use crate::artifact::{read_input, InputRef, OutputSet};
use crate::cli::{DfoArgs, FdModeArg, ModeArg, SampleFdsArgs, SweepArgs, SynthesizeArgs};

// fixed sub-streams so an explicit value for one parameter leaves the
// draws of the others unchanged
const STREAM_FDS: u64 = 1;
const STREAM_PSF: u64 = 2;
const STREAM_F_NUMBER: u64 = 3;

impl From<FdModeArg> for FdMode {
    fn from(m: FdModeArg) -> Self {
        match m {
            FdModeArg::Percentile => FdMode::Percentile,
            FdModeArg::Automatic => FdMode::Automatic,
            FdModeArg::Mixed => FdMode::Mixed,
        }
    }
}

/// Everything needed to reload a synthesized stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMetadata {
    /// Image files relative to the manifest, in focus-distance order.
    pub images: Vec<String>,
    pub focus_distances_m: Vec<f64>,
    pub focal_length_m: f64,
    pub f_number: f64,
    pub pixel_pitch_m: f64,
    pub principal_point: [f64; 2],
    pub psf_shape_p: f64,
    pub synthesis: SynthMode,
    pub seed: u64,
    pub rng_algorithm: String,
    /// The sampler draw, when the focus distances were not given explicitly.
    pub fd_sample: Option<FdSample>,
    pub zoom: Option<f64>,
}

impl StackMetadata {
    pub fn lens(&self) -> Result<ThinLensConfig> {
        Ok(ThinLensConfig::new(
            self.focal_length_m,
            self.f_number,
            self.pixel_pitch_m,
            self.principal_point,
        )?)
    }
}

fn image_center(w: usize, h: usize) -> [f64; 2] {
    [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0]
}

/// Reads an RGB PNG and a PFM depth map of the same size.
pub fn load_rgbd(rgb: &Path, depth: &Path, fill_holes: bool) -> Result<(RgbImage, DepthMap, Vec<InputRef>)> {
    let (rgb_bytes, rgb_ref) = read_input(rgb)?;
    let (depth_bytes, depth_ref) = read_input(depth)?;
    let img = png::decode(&rgb_bytes).with_context(|| format!("decoding {}", rgb.display()))?;
    let mut d = pfm::decode_depth(&depth_bytes).with_context(|| format!("decoding {}", depth.display()))?;
    if img.dims() != d.dims() {
        bail!("image is {:?} but depth is {:?}", img.dims(), d.dims());
    }
    if !d.is_fully_valid() {
        let holes = d.width() * d.height() - d.valid_count();
        if !fill_holes {
            bail!("depth map has {holes} invalid pixels; pass --fill-holes to fill them");
        }
        info!("filling {holes} depth holes");
        d = fill_depth_holes(&d)?;
    }
    Ok((img, d, vec![rgb_ref, depth_ref]))
}

pub fn synthesize(args: &SynthesizeArgs, out_dir: &Path) -> Result<StackMetadata> {
    let (rgb, depth, mut inputs) = load_rgbd(&args.rgb, &args.depth, args.fill_holes)?;
    let rng = SeededRng::new(args.seed);
    let (w, h) = rgb.dims();
    let lens = match &args.lens.lens {
        Some(path) => {
            let (bytes, r) = read_input(path)?;
            inputs.push(r);
            serde_json::from_slice::<ThinLensConfig>(&bytes).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let n = match args.lens.f_number {
                Some(n) => n,
                None => sample_f_number(&BlurSamplerConfig::default(), &mut rng.fork(STREAM_F_NUMBER))?,
            };
            ThinLensConfig::new(args.lens.focal_length_m, n, args.lens.pixel_pitch_m, image_center(w, h))?
        }
    };
    let (rgb, depth, lens) = match args.zoom {
        Some(s) => zoom_augment(&rgb, &depth, &lens, s)?,
        None => (rgb, depth, lens),
    };

    let (fds, fd_sample) = match &args.fd.fds {
        Some(fds) => (fds.clone(), None),
        None => {
            let cfg = FdSamplerConfig {
                mode: args.fd.fd_mode.into(),
                stack_size: args.fd.stack_size,
                kappa_range: args.fd.kappa.map_or((0.0, 1.0), |k| (k, k)),
                ..FdSamplerConfig::default()
            };
            cfg.validate()?;
            let s = sample_fds(Some(&depth), &cfg, &mut rng.fork(STREAM_FDS))?;
            (s.focus_distances_m.clone(), Some(s))
        }
    };
    let p = args.psf_p.unwrap_or_else(|| sample_psf_shape(&mut rng.fork(STREAM_PSF)));
    let mode = match args.mode {
        ModeArg::Reference => SynthMode::Reference,
        ModeArg::Layered => SynthMode::Layered { n_layers: args.layers },
    };
    info!(
        "rendering {} images at f/{} with p = {p:.3} ({})",
        fds.len(),
        lens.f_number(),
        mode.name()
    );
    let stack = synthesize_stack(&rgb, &depth, &lens, &fds, p, mode)?;

    let config = JobConfig::new("synthesize", inputs, args);
    let prov = config.provenance(Some(args.seed))?;
    let mut out = OutputSet::create(out_dir)?;
    let mut images = Vec::with_capacity(stack.len());
    for (i, img) in stack.images().iter().enumerate() {
        let name = format!("stack_{i:02}.png");
        out.write(&name, &png::encode(img)?)?;
        images.push(name);
    }
    let meta = StackMetadata {
        images,
        focus_distances_m: fds,
        focal_length_m: lens.focal_length_m(),
        f_number: lens.f_number(),
        pixel_pitch_m: lens.pixel_pitch_m(),
        principal_point: lens.principal_point(),
        psf_shape_p: p,
        synthesis: mode,
        seed: args.seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        fd_sample,
        zoom: args.zoom,
    };
    let path = out.finish("stack.json", &prov, &config, &meta)?;
    println!("{}", path.display());
    Ok(meta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdDraw {
    #[serde(flatten)]
    pub fds: FdSample,
    pub psf_shape_p: f64,
    pub f_number: f64,
}

pub fn sample_fds_cmd(args: &SampleFdsArgs, out_dir: &Path) -> Result<Vec<FdDraw>> {
    let mut inputs = Vec::new();
    let depth = match &args.depth {
        Some(path) => {
            let (bytes, r) = read_input(path)?;
            inputs.push(r);
            Some(pfm::decode_depth(&bytes)?)
        }
        None => None,
    };
    let cfg = FdSamplerConfig {
        mode: args.fd_mode.into(),
        stack_size: args.stack_size,
        ..FdSamplerConfig::default()
    };
    cfg.validate()?;
    let blur = BlurSamplerConfig::default();
    let rng = SeededRng::new(args.seed);
    let mut draws = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let mut r = rng.fork(i as u64 + 1);
        let fds = sample_fds(depth.as_ref(), &cfg, &mut r)?;
        let psf_shape_p = sample_psf_shape(&mut r);
        let f_number = sample_f_number(&blur, &mut r)?;
        println!(
            "{}",
            fds.focus_distances_m.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(",")
        );
        draws.push(FdDraw {
            fds,
            psf_shape_p,
            f_number,
        });
    }
    let config = JobConfig::new("sample-fds", inputs, args);
    let prov = config.provenance(Some(args.seed))?;
    #[derive(Serialize)]
    struct Results<'a> {
        rng_algorithm: &'a str,
        sampler: &'a FdSamplerConfig,
        draws: &'a [FdDraw],
    }
    let results = Results {
        rng_algorithm: RNG_ALGORITHM,
        sampler: &cfg,
        draws: &draws,
    };
    OutputSet::create(out_dir)?.finish("fds.json", &prov, &config, &results)?;
    Ok(draws)
}

/// Reloads a stack written by [`synthesize`].
pub fn load_stack(manifest: &Path) -> Result<(FocusStack, StackMetadata, Vec<InputRef>)> {
    let (bytes, manifest_ref) = read_input(manifest)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let meta: StackMetadata = serde_json::from_value(value["results"].clone())
        .with_context(|| format!("{} is not a stack manifest", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut inputs = vec![manifest_ref];
    let mut images = Vec::with_capacity(meta.images.len());
    for name in &meta.images {
        let (b, r) = read_input(&base.join(name))?;
        inputs.push(r);
        images.push(png::decode(&b)?);
    }
    let stack = FocusStack::new(images, meta.focus_distances_m.clone(), meta.lens()?)?;
    Ok((stack, meta, inputs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DfoResults {
    pub width: usize,
    pub height: usize,
    pub valid_pixels: usize,
}

pub fn dfo(args: &DfoArgs, out_dir: &Path) -> Result<DfoResults> {
    let (stack, meta, inputs) = load_stack(&args.stack)?;
    let depth = estimate_depth(&stack, args.window, args.refine)?;
    let (width, height) = depth.dims();
    let results = DfoResults {
        width,
        height,
        valid_pixels: depth.valid_count(),
    };
    if results.valid_pixels == 0 {
        warn!("no pixel has enough texture for a depth estimate");
    }
    info!("{} of {} pixels estimated", results.valid_pixels, width * height);
    let config = JobConfig::new("dfo", inputs, args);
    let prov = config.provenance(Some(meta.seed))?;
    let mut out = OutputSet::create(out_dir)?;
    out.write("dfo_depth.pfm", &pfm::encode_depth(&depth))?;
    out.finish("dfo.json", &prov, &config, &results)?;
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Spacing {
    Kappa(f64),
    /// A full draw from the training sampler.
    Random,
}

fn parse_spacing(s: &str) -> Result<Spacing> {
    if s == "random" {
        return Ok(Spacing::Random);
    }
    match s.parse::<f64>() {
        Ok(k) if (0.0..=1.0).contains(&k) => Ok(Spacing::Kappa(k)),
        _ => bail!("FD spacing must be a kappa in [0, 1] or `random`, got {s:?}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub f_number: f64,
    pub fd_spacing: String,
    pub stack_size: usize,
    pub kappa: f64,
    pub near_m: f64,
    pub far_m: f64,
    /// Fraction of pixels with a depth estimate.
    pub coverage: f64,
    pub abs_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub delta: Option<Vec<f64>>,
    pub silog: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResults {
    pub rows: Vec<SweepRow>,
    /// Mean AbsRel per axis value, for robustness plots.
    pub curves: BTreeMap<String, Vec<(String, f64)>>,
}

pub fn sweep(args: &SweepArgs, out_dir: &Path) -> Result<SweepResults> {
    let (rgb, depth, inputs) = load_rgbd(&args.rgb, &args.depth, true)?;
    let spacings = args
        .fd_spacings
        .iter()
        .map(|s| parse_spacing(s))
        .collect::<Result<Vec<_>>>()?;
    let valid = depth.valid_values();
    let near = percentile(&valid, 5.0)?;
    let far = percentile(&valid, 95.0)?;
    if near >= far {
        bail!("the depth map spans no range to place focus distances in");
    }
    let (w, h) = rgb.dims();
    let rng = SeededRng::new(args.seed);
    let mut rows = Vec::new();
    let mut idx = 0u64;
    for &n in &args.f_numbers {
        let lens = ThinLensConfig::new(args.focal_length_m, n, args.pixel_pitch_m, image_center(w, h))?;
        for (spacing, label) in spacings.iter().zip(&args.fd_spacings) {
            for &m in &args.stack_sizes {
                idx += 1;
                let sample = match *spacing {
                    Spacing::Kappa(k) => FdSample {
                        bounds: FdBounds {
                            near_m: near,
                            far_m: far,
                            source: FdSource::Percentile,
                        },
                        kappa: k,
                        focus_distances_m: interpolate_fds(near, far, m, k)?,
                    },
                    Spacing::Random => {
                        let cfg = FdSamplerConfig {
                            stack_size: m,
                            ..FdSamplerConfig::default()
                        };
                        sample_fds(Some(&depth), &cfg, &mut rng.fork(idx))?
                    }
                };
                let stack = synthesize_stack(&rgb, &depth, &lens, &sample.focus_distances_m, args.psf_p, SynthMode::Reference)?;
                let pred = estimate_depth(&stack, args.window, false)?;
                let coverage = pred.valid_count() as f64 / (w * h) as f64;
                let report = compute_metrics(&pred, &depth, &DEFAULT_DELTA_THRESHOLDS, &LossConfig::default()).ok();
                if report.is_none() {
                    warn!("f/{n}, spacing {label}, {m} images: no estimate overlaps the ground truth");
                }
                info!(
                    "f/{n}, spacing {label}, {m} images: AbsRel {}",
                    report.as_ref().map_or("-".into(), |r| format!("{:.4}", r.abs_rel))
                );
                rows.push(SweepRow {
                    f_number: n,
                    fd_spacing: label.clone(),
                    stack_size: m,
                    kappa: sample.kappa,
                    near_m: sample.bounds.near_m,
                    far_m: sample.bounds.far_m,
                    coverage,
                    abs_rel: report.as_ref().map(|r| r.abs_rel),
                    rmse: report.as_ref().map(|r| r.rmse),
                    delta: report.as_ref().map(|r| r.delta.iter().map(|d| d.fraction).collect()),
                    silog: report.as_ref().map(|r| r.silog),
                });
            }
        }
    }
    let results = SweepResults {
        curves: curves(&rows),
        rows,
    };
    let config = JobConfig::new("sweep", inputs, args);
    let prov = config.provenance(Some(args.seed))?;
    let mut out = OutputSet::create(out_dir)?;
    out.write("sweep.csv", sweep_csv(&results.rows).as_bytes())?;
    out.finish("sweep.json", &prov, &config, &results)?;
    Ok(results)
}

fn curves(rows: &[SweepRow]) -> BTreeMap<String, Vec<(String, f64)>> {
    let mut out = BTreeMap::new();
    for axis in ["f_number", "fd_spacing", "stack_size"] {
        let key = |r: &SweepRow| match axis {
            "f_number" => r.f_number.to_string(),
            "fd_spacing" => r.fd_spacing.clone(),
            _ => r.stack_size.to_string(),
        };
        let mut points: Vec<(String, f64, usize)> = Vec::new();
        for r in rows {
            let Some(v) = r.abs_rel else { continue };
            let k = key(r);
            match points.iter_mut().find(|p| p.0 == k) {
                Some(p) => {
                    p.1 += v;
                    p.2 += 1;
                }
                None => points.push((k, v, 1)),
            }
        }
        out.insert(
            axis.to_string(),
            points.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect(),
        );
    }
    out
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
    let mut s = String::from("f_number,fd_spacing,stack_size,kappa,near_m,far_m,coverage,abs_rel,rmse,silog");
    for t in DEFAULT_DELTA_THRESHOLDS {
        s.push_str(&format!(",delta_{t}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.f_number,
            r.fd_spacing,
            r.stack_size,
            r.kappa,
            r.near_m,
            r.far_m,
            r.coverage,
            opt(r.abs_rel),
            opt(r.rmse),
            opt(r.silog)
        ));
        for i in 0..DEFAULT_DELTA_THRESHOLDS.len() {
            s.push(',');
            s.push_str(&opt(r.delta.as_ref().map(|d| d[i])));
        }
        s.push('\n');
    }
    s
}
