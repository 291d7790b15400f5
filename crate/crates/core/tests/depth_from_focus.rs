use focuskit_core::dfo::*;
use focuskit_core::optics::ThinLensConfig;
use focuskit_core::randomization::{interpolate_fds, SeededRng};
use focuskit_core::raster::{DepthMap, RgbImage};
use focuskit_core::sim::two_plane_scene;
use focuskit_core::synth::{synthesize_stack, FocusStack, SynthMode};
use proptest::prelude::*;

fn lens(w: usize, h: usize) -> ThinLensConfig {
    ThinLensConfig::new(0.025, 2.0, 1e-5, [w as f64 / 2.0, h as f64 / 2.0]).unwrap()
}

fn noise(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = SeededRng::new(seed);
    let v: Vec<f32> = (0..w * h).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    RgbImage::from_fn(w, h, |x, y| [v[y * w + x]; 3]).unwrap()
}

/// Pixels whose all-in-focus texture is in the top band of the image.
fn high_texture(img: &RgbImage) -> Vec<bool> {
    let (w, h) = img.dims();
    let sml = sml_map(&img.luminance(), w, h, DEFAULT_WINDOW_RADIUS);
    let mut sorted = sml.clone();
    sorted.sort_by(f64::total_cmp);
    let thr = 0.25 * sorted[(sorted.len() as f64 * 0.95) as usize];
    sml.iter().map(|v| *v >= thr).collect()
}

#[test]
fn hand_computed_measure() {
    // a 3x3 ramp; borders clamp
    let lum = [0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 4.0];
    let ml = modified_laplacian(&lum, 3, 3);
    // center: |4-1-3| + |4-1-3| = 0; corner (0,0): |0-0-1| + |0-0-1| = 2
    assert_eq!(ml[4], 0.0);
    assert_eq!(ml[0], 2.0);
    assert_eq!(ml[8], 2.0);
    // the window of radius 1 around the center covers everything
    let total: f64 = ml.iter().sum();
    assert_eq!(sml_map(&lum, 3, 3, 1)[4], total);
}

#[test]
fn plane_at_a_focus_distance_is_recovered() {
    let (w, h) = (64, 48);
    let fds = interpolate_fds(0.8, 4.0, 5, 1.0).unwrap();
    let img = noise(w, h, 1);
    let depth = DepthMap::constant(w, h, fds[2]).unwrap();
    let stack = synthesize_stack(&img, &depth, &lens(w, h), &fds, 2.0, SynthMode::Reference).unwrap();
    let est = estimate_depth(&stack, DEFAULT_WINDOW_RADIUS, false).unwrap();
    let tex = high_texture(&img);
    for (i, t) in tex.iter().enumerate() {
        if *t {
            assert_eq!(est.get(i % w, i / w), Some(fds[2]));
        }
    }
}

#[test]
fn two_planes_split_by_mask() {
    let (w, h) = (96, 48);
    let fds = interpolate_fds(0.8, 4.0, 5, 1.0).unwrap();
    let scene = two_plane_scene(w, h, fds[1], fds[3], 0.5, 2).unwrap();
    let stack = synthesize_stack(&scene.rgb, &scene.depth, &lens(w, h), &fds, 2.0, SynthMode::Reference).unwrap();
    let est = estimate_depth(&stack, DEFAULT_WINDOW_RADIUS, false).unwrap();
    let mid = (fds[1] * fds[3]).sqrt();
    let tex = high_texture(&scene.rgb);
    let (mut n, mut agree) = (0, 0);
    for i in (0..w * h).filter(|i| tex[*i]) {
        n += 1;
        if let Some(d) = est.get(i % w, i / w) {
            agree += ((d < mid) == scene.near_mask[i]) as usize;
        }
    }
    assert!(agree as f64 >= 0.95 * n as f64, "{agree}/{n}");
}

#[test]
fn textureless_scene_is_invalid() {
    let img = RgbImage::filled(20, 16, [0.4, 0.5, 0.6]).unwrap();
    let depth = DepthMap::constant(20, 16, 1.5).unwrap();
    let stack = synthesize_stack(&img, &depth, &lens(20, 16), &[1.0, 2.0, 3.0], 2.0, SynthMode::Reference).unwrap();
    assert!(focus_measure(&stack, 2).unwrap().measures.iter().flatten().all(|v| *v == 0.0));
    for refine in [false, true] {
        assert_eq!(estimate_depth(&stack, 4, refine).unwrap().valid_count(), 0);
    }
}

#[test]
fn single_image_and_bad_window_are_errors() {
    let img = noise(8, 8, 3);
    let one = FocusStack::new(vec![img.clone()], vec![1.0], lens(8, 8)).unwrap();
    assert!(estimate_depth(&one, 4, false).is_err());
    let two = FocusStack::new(vec![img.clone(), img], vec![1.0, 2.0], lens(8, 8)).unwrap();
    assert!(focus_measure(&two, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_stay_in_range_and_ignore_order(seed in any::<u64>(), m in 2usize..6, refine in any::<bool>()) {
        let mut rng = SeededRng::new(seed);
        let images: Vec<RgbImage> = (0..m).map(|i| noise(12, 10, seed ^ (i as u64 + 1))).collect();
        let mut fds: Vec<f64> = (0..m).map(|_| rng.uniform(0.5, 10.0)).collect();
        fds.sort_by(f64::total_cmp);
        fds.dedup();
        prop_assume!(fds.len() == m);
        let stack = FocusStack::new(images, fds.clone(), lens(12, 10)).unwrap();
        let est = estimate_depth(&stack, 2, refine).unwrap();
        for d in est.valid_values() {
            prop_assert!(d >= fds[0] * (1.0 - 1e-12) && d <= fds[m - 1] * (1.0 + 1e-12));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.reverse();
        order.rotate_left((seed % m as u64) as usize);
        let again = estimate_depth(&stack.permuted(&order).unwrap(), 2, refine).unwrap();
        prop_assert_eq!(est, again);
    }
}
