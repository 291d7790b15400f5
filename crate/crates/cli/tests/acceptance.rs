//! Acceptance run: one line per criterion with its runtime against the
//! allowed budget. Exits non-zero if any criterion fails or runs over.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use focuskit::artifact::sha256_hex;
use focuskit::service::{router, AppState};
use focuskit_core::attention::*;
use focuskit_core::dfo::{estimate_depth, sml_map, DEFAULT_WINDOW_RADIUS};
use focuskit_core::io::ply;
use focuskit_core::lidar::*;
use focuskit_core::metrics::*;
use focuskit_core::optics::{coc_meters, coc_pixels, make_kernel, psf_value, PsfSpec, ThinLensConfig};
use focuskit_core::randomization::*;
use focuskit_core::raster::{psnr, DepthMap, RgbImage};
use focuskit_core::sim::{registration_surface, simulate_room_sweep, two_plane_scene, RoomSweepConfig};
use focuskit_core::synth::{synthesize_image_layered, synthesize_image_reference, synthesize_stack, SynthMode};

fn main() {
    let checks: Vec<(&str, u64, fn() -> Result<String>)> = vec![
        ("psf family", 5, psf_family),
        ("circle of confusion", 1, circle_of_confusion),
        ("synthesis", 30, synthesis),
        ("round trip", 60, round_trip),
        ("fd sampler", 10, fd_sampler),
        ("icp and aggregation", 120, icp_and_aggregation),
        ("projection", 10, projection),
        ("metrics and losses", 5, metrics_and_losses),
        ("stack attention", 5, stack_attention_reference),
        ("cli determinism", 60, cli_determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, f) in checks {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(anyhow::anyhow!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(limit);
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("over time budget; {d}")),
            (Err(e), _) => ("FAIL", format!("{e:#}")),
        };
        failed += (status == "FAIL") as usize;
        println!("{status} {name:<22} {:>8.2} s (limit {limit} s)  {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---- optics ----

fn psf_family() -> Result<String> {
    let mut worst_gauss: f64 = 0.0;
    for c in [0.3, 1.0, 2.0, 7.5, 40.0] {
        let spec = PsfSpec::new(2.0, c)?;
        for iu in -40..=40 {
            for iv in -40..=40 {
                let (u, v) = (iu as f64 * 0.37, iv as f64 * 0.29);
                let oracle = (-2.0 * (u * u + v * v) / (c * c)).exp() / (c * c);
                worst_gauss = worst_gauss.max((psf_value(u, v, &spec)? - oracle).abs());
            }
        }
    }
    ensure!(worst_gauss <= 1e-12, "p=2 differs from the Gaussian by {worst_gauss:e}");

    let mut worst_disk: f64 = 0.0;
    for c in [1.0, 3.0, 10.0] {
        let spec = PsfSpec::new(512.0, c)?;
        for iu in -150..=150 {
            for iv in -150..=150 {
                let (u, v) = (iu as f64 * c / 100.0, iv as f64 * c / 100.0);
                let rho = (u * u + v * v).sqrt() / c;
                if (rho - 1.0).abs() <= 0.05 {
                    continue;
                }
                let disk = if rho < 1.0 { 1.0 / (c * c) } else { 0.0 };
                // relative to the disk height
                worst_disk = worst_disk.max((psf_value(u, v, &spec)? - disk).abs() * c * c);
            }
        }
    }
    ensure!(worst_disk <= 1e-3, "p=512 differs from the disk by {worst_disk:e}");

    let mut worst_sum: f64 = 0.0;
    let mut kernels = 0;
    for p in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 128.0, 512.0] {
        for c in [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 40.0, 60.0] {
            let k = make_kernel(&PsfSpec::new(p, c)?)?;
            worst_sum = worst_sum.max((k.weights().iter().sum::<f64>() - 1.0).abs());
            kernels += 1;
        }
    }
    ensure!(worst_sum <= 1e-6, "kernel sum off by {worst_sum:e}");
    Ok(format!(
        "gauss err {worst_gauss:.1e}, disk err {worst_disk:.1e}, {kernels} kernels sum err {worst_sum:.1e}"
    ))
}

fn circle_of_confusion() -> Result<String> {
    let (f, n, focus, d) = (0.05, 2.8, 3.08, 1.0);
    let lens = ThinLensConfig::new(f, n, 1e-5, [0.0, 0.0])?;
    let in_focus = coc_meters(focus, &lens, focus)?;
    ensure!(in_focus == 0.0, "in-focus CoC is {in_focus}");
    let oracle = (focus - d).abs() / d * f * f / (n * (focus - f));
    let got = coc_meters(d, &lens, focus)?;
    let rel = (got - oracle).abs() / oracle;
    ensure!(rel <= 1e-9, "CoC {got} vs {oracle}");
    ensure!((got - 6.13e-4).abs() < 5e-7, "CoC {got} does not round to 6.13e-4");
    Ok(format!("coc {got:.6e} m, rel err {rel:.1e}"))
}

// ---- synthesis ----

fn wavy_depth(w: usize, h: usize, seed: u64) -> DepthMap {
    let mut rng = SeededRng::new(seed);
    let (a, b, ph) = (rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9), rng.uniform(0.0, 6.0));
    DepthMap::from_fn(w, h, |x, y| 1.8 + 1.1 * (a * x as f64 + ph).sin() * (b * y as f64).cos()).unwrap()
}

fn synthesis() -> Result<String> {
    // blur radii up to ~15 px on the constant fixtures
    let coarse = ThinLensConfig::new(0.05, 2.0, 1e-4, [8.0, 8.0])?;
    let mut constant_cases = 0;
    let mut worst_const: f32 = 0.0;
    for seed in 0..8u64 {
        let color = [0.1 + 0.1 * seed as f32, 0.5, 0.9 - 0.05 * seed as f32];
        let rgb = RgbImage::filled(24, 18, color)?;
        let depth = wavy_depth(24, 18, seed);
        for p in [1.0, 2.0, 8.0, 32.0] {
            for fd in [0.7, 1.8, 4.0] {
                let outs = [
                    synthesize_image_reference(&rgb, &depth, &coarse, fd, p)?,
                    synthesize_image_layered(&rgb, &depth, &coarse, fd, p, 16)?,
                ];
                for out in outs {
                    for px in out.data().chunks(3) {
                        for ch in 0..3 {
                            worst_const = worst_const.max((px[ch] - color[ch]).abs());
                        }
                    }
                    constant_cases += 1;
                }
            }
        }
    }
    ensure!(worst_const <= 1e-6, "constant image changed by {worst_const:e}");

    // impulse on a constant depth: the response is the kernel itself
    let lens = ThinLensConfig::new(0.05, 2.0, 2e-5, [8.0, 8.0])?;
    let (w, h, fd) = (41usize, 41usize, 2.0);
    let mut worst_impulse: f64 = 0.0;
    for (depth_m, p) in [(1.9633, 2.0), (1.7, 2.0), (1.5, 8.0), (2.6, 32.0)] {
        let c = coc_pixels(depth_m, &lens, fd)?;
        let kernel = make_kernel(&PsfSpec::new(p, c)?)?;
        ensure!(kernel.radius() <= 20, "kernel too wide for the fixture");
        let rgb = RgbImage::from_fn(w, h, |x, y| if (x, y) == (20, 20) { [1.0; 3] } else { [0.0; 3] })?;
        let depth = DepthMap::constant(w, h, depth_m)?;
        let out = synthesize_image_reference(&rgb, &depth, &lens, fd, p)?;
        for y in 0..h {
            for x in 0..w {
                let want = kernel.weight(x as isize - 20, y as isize - 20);
                worst_impulse = worst_impulse.max((out.pixel(x, y)[1] as f64 - want).abs());
            }
        }
    }
    ensure!(worst_impulse <= 1e-6, "impulse response differs from the kernel by {worst_impulse:e}");

    let scene = two_plane_scene(64, 64, 1.0, 3.0, 0.5, 5)?;
    let lens = ThinLensConfig::new(0.025, 2.0, 1e-5, [32.0, 32.0])?;
    let mut worst_psnr = f64::INFINITY;
    for p in [2.0, 8.0] {
        for fd in [0.8, 1.0, 1.5, 2.0, 3.0, 5.0] {
            let a = synthesize_image_reference(&scene.rgb, &scene.depth, &lens, fd, p)?;
            let b = synthesize_image_layered(&scene.rgb, &scene.depth, &lens, fd, p, 32)?;
            worst_psnr = worst_psnr.min(psnr(&a, &b)?);
                }
    }
    ensure!(worst_psnr >= 40.0, "layered PSNR {worst_psnr:.2} dB");
    Ok(format!(
        "{constant_cases} constant cases max err {worst_const:.1e}, impulse err {worst_impulse:.1e}, min layered PSNR {worst_psnr:.1} dB"
    ))
}

fn round_trip() -> Result<String> {
    let (w, h) = (128usize, 64usize);
    let fds = interpolate_fds(0.8, 4.0, 9, 1.0)?;
    let scene = two_plane_scene(w, h, fds[2], fds[6], 0.5, 17)?;
    let lens = ThinLensConfig::new(0.025, 2.0, 1e-5, [w as f64 / 2.0, h as f64 / 2.0])?;
    let stack = synthesize_stack(&scene.rgb, &scene.depth, &lens, &fds, 2.0, SynthMode::Reference)?;
    let est = estimate_depth(&stack, DEFAULT_WINDOW_RADIUS, false)?;

    let sml = sml_map(&scene.rgb.luminance(), w, h, DEFAULT_WINDOW_RADIUS);
    let mut sorted = sml.clone();
    sorted.sort_by(f64::total_cmp);
    let thr = 0.25 * sorted[(sorted.len() as f64 * 0.95) as usize];
    let mid = (fds[2] * fds[6]).sqrt();
    let mut errors = Vec::new();
    let mut agree = 0;
    for i in (0..w * h).filter(|i| sml[*i] >= thr) {
        let gt = scene.depth.values()[i];
        match est.get(i % w, i / w) {
            Some(d) => {
                errors.push((d - gt).abs() / gt);
                agree += ((d < mid) == scene.near_mask[i]) as usize;
            }
            None => errors.push(f64::INFINITY),
        }
    }
    let n = errors.len();
    ensure!(n > 0, "no high-texture pixels");
    errors.sort_by(f64::total_cmp);
    let median = errors[n / 2];
    let agreement = agree as f64 / n as f64;
    ensure!(median <= 0.05, "median AbsRel {median:.4}");
    ensure!(agreement >= 0.95, "plane agreement {agreement:.4}");
    Ok(format!("{n} textured px, median AbsRel {median:.2e}, plane agreement {:.2}%", 100.0 * agreement))
}

// ---- randomization ----

fn fd_sampler() -> Result<String> {
    let fds = interpolate_fds(1.0, 8.0, 5, 1.0)?;
    let fixture = [1.0, 1.28, 16.0 / 9.0, 32.0 / 11.0, 8.0];
    let worst1 = fds.iter().zip(fixture).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    ensure!(worst1 <= 1e-9, "kappa=1 fixture off by {worst1:e}: {fds:?}");

    let geometric: Vec<f64> = (0..5).map(|i| 8f64.powf(i as f64 / 4.0)).collect();
    let mut worst0: f64 = 0.0;
    // the closed-form limit and the power law just past the switch
    for kappa in [0.0, 1e-6, 1.01 * KAPPA_LIMIT_THRESHOLD] {
        let got = interpolate_fds(1.0, 8.0, 5, kappa)?;
        worst0 = worst0.max(got.iter().zip(&geometric).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max));
    }
    ensure!(worst0 <= 1e-4, "small-kappa spacing off the geometric sequence by {worst0:e}");

    let depth = DepthMap::from_fn(8, 8, |x, y| 1.0 + 0.1 * (x + 8 * y) as f64)?;
    let cfg = FdSamplerConfig::default();
    let mut rng = SeededRng::new(2024);
    let n = 50_000;
    let mut hits = 0;
    for _ in 0..n {
        hits += (sample_fd_bounds(Some(&depth), &cfg, &mut rng)?.source == FdSource::Percentile) as usize;
    }
    let frac = hits as f64 / n as f64;
    ensure!((frac - 0.2).abs() <= 0.006, "percentile fraction {frac}");

    let mut rng = SeededRng::new(5);
    let mean = (0..10_000).map(|_| sample_psf_shape(&mut rng).log2()).sum::<f64>() / 10_000.0;
    ensure!((mean - 3.0).abs() <= 0.05, "mean log2 p {mean}");
    Ok(format!(
        "kappa=1 err {worst1:.1e}, kappa->0 err {worst0:.1e}, percentile frac {frac:.4}, mean log2 p {mean:.3}"
    ))
}

// ---- lidar ----

fn transform_error(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    let rel = a.rotation().transpose() * b.rotation();
    let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    ((a.translation() - b.translation()).norm(), angle)
}

fn gaussian(rng: &mut SeededRng, sigma: f64) -> f64 {
    let u1 = rng.uniform(f64::MIN_POSITIVE, 1.0);
    let u2 = rng.uniform(0.0, 1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn cube_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = SeededRng::new(seed);
    (0..n).map(|_| [0; 3].map(|_| rng.uniform(-1.0, 1.0))).collect()
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn icp_and_aggregation() -> Result<String> {
    let truth = RigidTransform::from_axis_angle([0.0, 0.0, 1.0], 10f64.to_radians(), [0.1, 0.0, 0.0], "src", "dst")?;
    let params = IcpParams::default();

    let (mut clean_t, mut clean_a) = (0f64, 0f64);
    for seed in 0..5u64 {
        let src = if seed % 2 == 0 { cube_points(500, seed) } else { registration_surface(800, seed) };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let t = icp_register(&PointCloud::new("src", src)?, &PointCloud::new("dst", dst)?, &params)?.transform;
        let (dt, da) = transform_error(&t, &truth);
        clean_t = clean_t.max(dt);
        clean_a = clean_a.max(da);
    }
    ensure!(clean_t <= 1e-6 && clean_a <= 1e-6, "noiseless recovery off by {clean_t:e} m / {clean_a:e} rad");

    let (mut noisy_t, mut noisy_a) = (0f64, 0f64);
    for seed in 0..20u64 {
        let src = cube_points(500, 100 + seed);
        let mut rng = SeededRng::new(seed);
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p).map(|v| v + gaussian(&mut rng, 0.005))).collect();
        let t = icp_register(&PointCloud::new("src", src)?, &PointCloud::new("dst", dst)?, &params)?.transform;
        let (dt, da) = transform_error(&t, &truth);
        noisy_t = noisy_t.max(dt);
        noisy_a = noisy_a.max(da);
    }
    ensure!(
        noisy_t <= 0.002 && noisy_a.to_degrees() <= 0.2,
        "noisy recovery off by {:.2} mm / {:.3} deg",
        noisy_t * 1e3,
        noisy_a.to_degrees()
    );

    let sweep = simulate_room_sweep(&RoomSweepConfig::default())?;
    let (_, trace) = aggregate_traced(&sweep.clouds(), &AggregateOptions::default())?;
    let floaters_in: usize = sweep.frames.iter().map(|f| f.is_floater.iter().filter(|b| **b).count()).sum();
    let structure_in = sweep.total_points() - floaters_in;
    let floaters_left = trace.origins.iter().filter(|o| sweep.frames[o.frame].is_floater[o.index]).count();
    let structure_kept = trace.origins.len() - floaters_left;
    let kept_frac = structure_kept as f64 / structure_in as f64;
    ensure!(floaters_in > 0, "sweep has no floaters");
    ensure!(floaters_left == 0, "{floaters_left} of {floaters_in} floaters survived");
    ensure!(kept_frac >= 0.99, "kept {:.3}% of structure", 100.0 * kept_frac);

    let mut fixtures = 0;
    for seed in 0..6u64 {
        let pts = clustered_cloud(seed);
        ensure!(pts.len() <= 2000);
        let origin = [0.1, -0.2, 0.0];
        for (alpha, k) in [(0.008, 7), (0.02, 3), (0.004, 1), (0.05, 12)] {
            let p = FilterParams { alpha, k_neighbors: k, ..Default::default() };
            let brute: Vec<bool> = pts
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let r = alpha * dist(a, &origin);
                    pts.iter().enumerate().filter(|(j, b)| *j != i && dist(a, b) <= r).count() >= k
                })
                .collect();
            ensure!(density_filter_mask(&pts, &origin, &p) == brute, "filter mismatch seed {seed} alpha {alpha} k {k}");
            fixtures += 1;
        }
    }
    Ok(format!(
        "clean {clean_t:.1e} m/{clean_a:.1e} rad, noisy {:.2} mm/{:.3} deg, floaters {floaters_in}/{floaters_in} removed, structure kept {:.2}%, {fixtures} filter fixtures",
        noisy_t * 1e3,
        noisy_a.to_degrees(),
        100.0 * kept_frac
    ))
}

fn clustered_cloud(seed: u64) -> Vec<Point3> {
    let mut rng = SeededRng::new(seed);
    let mut pts = Vec::new();
    for _ in 0..40 {
        let c = [rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(1.0, 6.0)];
        let spread = rng.uniform(0.005, 0.06);
        for _ in 0..rng.index(30) + 1 {
            pts.push([0, 1, 2].map(|a| c[a] + rng.uniform(-spread, spread)));
        }
    }
    for _ in 0..200 {
        pts.push([rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(0.5, 6.0)]);
    }
    pts
}

fn projection() -> Result<String> {
    let k = Intrinsics { fx: 60.0, fy: 60.0, cx: 31.5, cy: 23.5 };
    let (w, h) = (64usize, 48usize);
    let mut compared = 0;
    for seed in [15u64, 16] {
        let mut rng = SeededRng::new(seed);
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| {
                let z = rng.uniform(-0.5, 8.0);
                [rng.uniform(-0.7, 0.7) * z.abs(), rng.uniform(-0.5, 0.5) * z.abs(), z]
            })
            .collect();
        let centers: Vec<(f64, f64, f64)> = pts
            .iter()
            .filter(|p| p[2] > 0.0)
            .map(|p| ((60.0 * p[0] / p[2] + 31.5).round(), (60.0 * p[1] / p[2] + 23.5).round(), p[2]))
            .collect();
        let cloud = PointCloud::new("cam", pts)?;
        for radius in [0usize, 1, 3] {
            let d = project_zbuffer(&cloud, &k, w, h, radius)?;
            let lim = (radius * radius + radius) as f64;
            for y in 0..h {
                for x in 0..w {
                    let mut best: Option<f64> = None;
                    for (cu, cv, z) in &centers {
                        if (x as f64 - cu).powi(2) + (y as f64 - cv).powi(2) <= lim {
                            best = Some(best.map_or(*z, |b| b.min(*z)));
                        }
                    }
                    ensure!(d.get(x, y) == best, "seed {seed} radius {radius} pixel ({x}, {y})");
                }
            }
            compared += 1;
        }
    }

    let offsets = splat_offsets(3);
    let disk: Vec<(isize, isize)> = (-3..=3isize)
        .flat_map(|v| (-3..=3isize).map(move |u| (u, v)))
        .filter(|(u, v)| u * u + v * v <= 12)
        .collect();
    let mut sorted = offsets.clone();
    sorted.sort();
    let mut want = disk.clone();
    want.sort();
    ensure!(sorted == want && want.len() == 37, "radius-3 footprint has {} offsets", offsets.len());
    let single = project_zbuffer(&PointCloud::new("cam", vec![[0.0, 0.0, 2.5]])?, &Intrinsics { cx: 32.0, cy: 24.0, ..k }, w, h, 3)?;
    ensure!(single.valid_count() == 37, "single point covers {} pixels", single.valid_count());
    Ok(format!("{compared} z-buffers match brute force, radius-3 footprint 37 px"))
}

// ---- metrics ----

fn random_map(w: usize, h: usize, holes: f64, rng: &mut SeededRng) -> DepthMap {
    let values = (0..w * h)
        .map(|_| if rng.uniform(0.0, 1.0) < holes { 0.0 } else { rng.uniform(0.5, 12.0) })
        .collect();
    DepthMap::from_values(w, h, values).unwrap()
}

fn scaled(d: &DepthMap, s: f64) -> DepthMap {
    let (w, h) = d.dims();
    DepthMap::from_values(w, h, d.values().iter().map(|v| v * s).collect()).unwrap()
}

fn metrics_and_losses() -> Result<String> {
    let cfg = LossConfig::default();
    let gt = DepthMap::from_fn(8, 8, |x, y| 2f64.powi((x as i32 + y as i32) % 5 - 2))?;
    let pred = scaled(&gt, 1.25);
    ensure!(compute_metrics(&pred, &gt, &[1.25], &cfg)?.delta_at(1.25) == Some(0.0), "delta at the boundary counted");
    ensure!(compute_metrics(&gt, &pred, &[1.25], &cfg)?.delta_at(1.25) == Some(0.0), "inverse boundary counted");

    let mut rng = SeededRng::new(41);
    let mut worst_scale: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    for _ in 0..50 {
        let gt = random_map(16, 12, 0.1, &mut rng);
        let pred = random_map(16, 12, 0.1, &mut rng);
        let s = rng.uniform(0.05, 20.0);
        let a = silog_loss(&pred, &gt, 1.0)?;
        let b = silog_loss(&scaled(&pred, s), &gt, 1.0)?;
        worst_scale = worst_scale.max((a - b).abs());

        let r = compute_metrics(&pred, &gt, &DEFAULT_DELTA_THRESHOLDS, &cfg)?;
        let silog = silog_loss(&pred, &gt, cfg.silog_lambda)?;
        let grad = grad_match_loss(&pred, &gt, cfg.grad_scales)?;
        let recomposed = silog + GRAD_MATCH_WEIGHT * grad;
        worst_comp = worst_comp.max((r.total_loss - recomposed).abs()).max((total_loss(&pred, &gt, &cfg)? - recomposed).abs());
    }
    ensure!(worst_scale <= 1e-12, "unit-lambda SiLog changes by {worst_scale:e} under scaling");
    ensure!(worst_comp <= 1e-12, "loss composition off by {worst_comp:e}");

    let mut pads = 0;
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(seed);
        let gt = random_map(9, 8, 0.15, &mut rng);
        let pred = random_map(9, 8, 0.15, &mut rng);
        let (pw, ph) = (1 + seed as usize % 4, seed as usize % 3);
        let gt_p = DepthMap::from_fn(9 + pw, 8 + ph, |x, y| {
            let junk = rng.uniform(0.5, 5.0);
            if x < 9 && y < 8 { gt.get(x, y).unwrap_or(0.0) } else { junk }
        })?;
        let pred_p = DepthMap::from_fn(9 + pw, 8 + ph, |x, y| if x < 9 && y < 8 { pred.get(x, y).unwrap_or(0.0) } else { 0.0 })?;
        let a = compute_metrics(&pred, &gt, &DEFAULT_DELTA_THRESHOLDS, &cfg)?;
        let b = compute_metrics(&pred_p, &gt_p, &DEFAULT_DELTA_THRESHOLDS, &cfg)?;
        ensure!(a == b, "padding changed the report for seed {seed}");
        pads += 1;
    }
    Ok(format!(
        "strict delta ok, SiLog scale drift {worst_scale:.1e}, composition err {worst_comp:.1e}, {pads} padded maps identical"
    ))
}

// ---- stack attention ----

fn matvec(l: &Linear, x: &[f64]) -> Vec<f64> {
    let mut y = l.bias.clone();
    for o in 0..l.n_out {
        for i in 0..l.n_in {
            y[o] += l.weight[o * l.n_in + i] * x[i];
        }
    }
    y
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

fn random_layers(c: usize, n: usize, with_fd: bool, rng: &mut SeededRng) -> Vec<StackLayerParams> {
    (0..n)
        .map(|_| {
            let mut l = StackLayerParams::random(c, rng);
            if with_fd {
                l.fd_mlp = FdMlp::random(c, rng);
            }
            l
        })
        .collect()
}

fn stack_attention_reference() -> Result<String> {
    let mut worst_perm: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(seed);
        let m = 2 + seed as usize % 5;
        let t = TokenGrid::random(m, 4, 2, 2, &mut rng)?;
        let fds: Vec<f64> = (0..m).map(|_| rng.uniform(0.5, 12.0)).collect();
        let layers = random_layers(4, 2, true, &mut rng);
        let mut order: Vec<usize> = (0..m).collect();
        order.rotate_left(seed as usize % m);
        order.swap(0, m - 1);
        let pfds: Vec<f64> = order.iter().map(|&i| fds[i]).collect();
        let a = forward_extract(&t, &fds, &layers, ForwardOptions::default())?;
        let b = forward_extract(&t.permuted(&order)?, &pfds, &layers, ForwardOptions::default())?;
        worst_perm = worst_perm.max(rel_err(&b.data, &a.data));
    }
    ensure!(worst_perm <= 1e-5, "permutation changed the output by {worst_perm:e}");

    for seed in 0..20u64 {
        let mut rng = SeededRng::new(seed);
        let m = 1 + seed as usize % 4;
        let t = TokenGrid::random(m, 4, 2, 2, &mut rng)?;
        let fds: Vec<f64> = (0..m).map(|_| rng.uniform(0.5, 12.0)).collect();
        let mut layers = random_layers(4, 2, false, &mut rng);
        layers.iter_mut().for_each(|l| l.fd_mlp = FdMlp::zeros(4));
        let a = forward_extract(&t, &fds, &layers, ForwardOptions { inject_fd: true })?;
        let b = forward_extract(&t, &fds, &layers, ForwardOptions { inject_fd: false })?;
        ensure!(a == b, "zero FD MLP changed the output for seed {seed}");
    }

    let mut worst_row: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(seed);
        let mut p = AttentionParams::random(4, &mut rng);
        let scale = 0.1 + seed as f64;
        p.q.weight.iter_mut().for_each(|w| *w *= scale);
        let m = 1 + seed as usize % 7;
        let t = TokenGrid::random(m, 4, 2, 2, &mut rng)?;
        let (_, trace) = stack_attention_traced(&t, &p)?;
        for map in &trace.weights {
            for row in map.chunks(m) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure!(worst_row <= 1e-6, "attention rows sum off by {worst_row:e}");

    // M = 3 toy against a direct evaluation
    let mut worst_toy: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = SeededRng::new(100 + seed);
        let c = 3;
        let p = AttentionParams::random(c, &mut rng);
        let t = TokenGrid::random(3, c, 1, 2, &mut rng)?;
        let out = stack_attention(&t, &p)?;
        for x in 0..2 {
            let tokens: Vec<Vec<f64>> = (0..3).map(|i| t.token(i, 0, x).to_vec()).collect();
            for (i, qi) in tokens.iter().enumerate() {
                let q = matvec(&p.q, qi);
                let scores: Vec<f64> = tokens
                    .iter()
                    .map(|kj| {
                        let k = matvec(&p.k, kj);
                        ((0..c).map(|ch| q[ch] * k[ch]).sum::<f64>() / (c as f64).sqrt()).exp()
                    })
                    .collect();
                let z: f64 = scores.iter().sum();
                let mut mixed = vec![0.0; c];
                for (j, vj) in tokens.iter().enumerate() {
                    let v = matvec(&p.v, vj);
                    for ch in 0..c {
                        mixed[ch] += scores[j] / z * v[ch];
                    }
                }
                let o = matvec(&p.o, &mixed);
                let want: Vec<f64> = (0..c).map(|ch| qi[ch] + o[ch]).collect();
                let got = out.token(i, 0, x);
                worst_toy = worst_toy.max(got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
        }
    }
    ensure!(worst_toy <= 1e-9, "M=3 toy off by {worst_toy:e}");
    Ok(format!(
        "permutation err {worst_perm:.1e}, zero-init exact, row sum err {worst_row:.1e}, toy err {worst_toy:.1e}"
    ))
}

// ---- determinism ----

fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Runs `args` into `<dir>/<tag>_a` and `<dir>/<tag>_b` and compares the trees.
fn twice(dir: &Path, tag: &str, args: &[&str]) -> Result<PathBuf> {
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(format!("{tag}_{run}"));
        let o = Command::new(env!("CARGO_BIN_EXE_focuskit"))
            .arg("--out")
            .arg(&out)
            .args(args)
            .env_remove("FOCUSKIT_OUT_DIR")
            .env("RUST_LOG", "warn")
            .output()?;
        ensure!(o.status.success(), "{tag} failed: {}", String::from_utf8_lossy(&o.stderr));
        trees.push(tree_hashes(&out));
    }
    ensure!(!trees[0].is_empty(), "{tag} wrote nothing");
    ensure!(trees[0] == trees[1], "{tag} outputs differ between runs");
    Ok(dir.join(format!("{tag}_a")))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cli_determinism() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    let scene = twice(dir, "two_plane", &["simulate", "two-plane", "--seed", "3", "--width", "48", "--height", "32"])?;
    let (rgb, depth) = (scene.join("rgb.png"), scene.join("depth.pfm"));
    let stack = twice(dir, "synthesize", &["synthesize", "--rgb", s(&rgb), "--depth", s(&depth), "--seed", "4"])?;
    twice(dir, "sample_fds", &["sample-fds", "--seed", "5", "--depth", s(&depth), "--count", "20"])?;
    let dfo = twice(dir, "dfo", &["dfo", "--stack", s(&stack.join("stack.json"))])?;
    twice(dir, "evaluate", &["evaluate", "--pred", s(&dfo.join("dfo_depth.pfm")), "--gt", s(&depth), "--csv", "scene"])?;
    twice(
        dir,
        "sweep",
        &["sweep", "--rgb", s(&rgb), "--depth", s(&depth), "--seed", "6", "--f-numbers", "2", "--stack-sizes", "3", "--fd-spacings", "1,random"],
    )?;
    let sim = twice(
        dir,
        "simulate_sweep",
        &["simulate", "sweep", "--seed", "7", "--frames", "11", "--points-per-frame", "4000", "--floater-start-frame", "5"],
    )?;
    let labels: Value = serde_json::from_slice(&std::fs::read(sim.join("labels.json"))?)?;
    let frames: Vec<String> = labels["frames"]
        .as_array()
        .context("labels without frames")?
        .iter()
        .map(|f| s(&sim.join(f["file"].as_str().unwrap())).to_string())
        .collect();
    let labels_path = sim.join("labels.json");
    let mut args = vec!["aggregate", "--labels", s(&labels_path), "--warmup-frames", "5", "--interval-frames", "5"];
    args.extend(frames.iter().map(String::as_str));
    let agg = twice(dir, "aggregate", &args)?;
    let intr = dir.join("intrinsics.json");
    std::fs::write(&intr, r#"{"fx": 40, "fy": 40, "cx": 32, "cy": 24}"#)?;
    twice(
        dir,
        "project",
        &["project", "--cloud", s(&agg.join("aggregated.ply")), "--intrinsics", s(&intr), "--width", "64", "--height", "48", "--splat-radius", "1"],
    )?;
    let service = service_twice(&agg.join("aggregated.ply"), dir)?;
    Ok(format!("10 commands reproduced bit for bit ({service} service files)"))
}

/// The cleanup service driven in-process: one edit then a save, twice.
fn service_twice(cloud: &Path, dir: &Path) -> Result<usize> {
    let rt = tokio::runtime::Runtime::new()?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(format!("serve_{run}"));
        let app = router(AppState::load(cloud, &out)?);
        let edit = json!({
            "polygon": [[0.0, 0.0], [40.0, 0.0], [40.0, 30.0], [0.0, 30.0]],
            "depth_range": [0.0, null],
            "view": {
                "intrinsics": {"fx": 40.0, "fy": 40.0, "cx": 32.0, "cy": 24.0},
                "camera_from_cloud": [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
            },
        });
        for (uri, body) in [("/edit", edit), ("/save", json!({"name": "cleaned"}))] {
            let req = Request::builder()
                .method("POST")
                .uri(uri)
                .header("content-type", "application/json")
                .body(Body::from(serde_json::to_vec(&body)?))?;
            let resp = rt.block_on(app.clone().oneshot(req))?;
            let status = resp.status();
            let bytes = rt.block_on(resp.into_body().collect())?.to_bytes();
            ensure!(status == StatusCode::OK, "{uri}: {status} {}", String::from_utf8_lossy(&bytes));
        }
        ply::decode(&std::fs::read(out.join("cleaned.ply"))?)?;
        trees.push(tree_hashes(&out));
    }
    ensure!(trees[0] == trees[1], "cleanup service outputs differ between runs");
    Ok(trees[0].len())
}
