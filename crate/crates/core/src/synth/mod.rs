//! Focus-stack synthesis from an all-in-focus RGB image and dense depth.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::optics::{coc_pixels, KernelProfile, PsfSpec, ThinLensConfig};
use crate::raster::{DepthMap, RgbImage};

mod fill;
mod layered;
mod reference;
mod zoom;

pub use fill::fill_depth_holes;
pub use layered::{bin_disparity, synthesize_image_layered, DisparityBins};
pub use reference::synthesize_image_reference;
pub use zoom::{zoom_augment, MAX_ZOOM, MIN_ZOOM};

/// Which synthesis path to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SynthMode {
    Reference,
    Layered { n_layers: usize },
}

impl SynthMode {
    pub fn name(&self) -> &'static str {
        match self {
            SynthMode::Reference => "reference",
            SynthMode::Layered { .. } => "layered",
        }
    }
}

/// `M` pixel-aligned images of one scene at increasing focus distances.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusStack {
    images: Vec<RgbImage>,
    focus_distances_m: Vec<f64>,
    lens: ThinLensConfig,
}

impl FocusStack {
    pub fn new(images: Vec<RgbImage>, focus_distances_m: Vec<f64>, lens: ThinLensConfig) -> Result<Self> {
        if images.is_empty() {
            return Err(invalid("a focus stack needs at least one image"));
        }
        if images.len() != focus_distances_m.len() {
            return Err(mismatch(format!(
                "{} images but {} focus distances",
                images.len(),
                focus_distances_m.len()
            )));
        }
        let dims = images[0].dims();
        if let Some(bad) = images.iter().find(|i| i.dims() != dims) {
            return Err(mismatch(format!("stack image {:?} differs from {:?}", bad.dims(), dims)));
        }
        if let Some(bad) = focus_distances_m.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(invalid(format!("focus distance {bad} must be positive")));
        }
        Ok(FocusStack {
            images,
            focus_distances_m,
            lens,
        })
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    pub fn focus_distances_m(&self) -> &[f64] {
        &self.focus_distances_m
    }

    pub fn lens(&self) -> &ThinLensConfig {
        &self.lens
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images[0].dims()
    }

    /// The stack reordered by `order` (a permutation of `0..len`).
    pub fn permuted(&self, order: &[usize]) -> Result<FocusStack> {
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(invalid("not a permutation of the stack"));
            }
        }
        if order.len() != self.len() {
            return Err(invalid("not a permutation of the stack"));
        }
        FocusStack::new(
            order.iter().map(|&i| self.images[i].clone()).collect(),
            order.iter().map(|&i| self.focus_distances_m[i]).collect(),
            self.lens,
        )
    }
}

pub(crate) fn check_dims(rgb: &RgbImage, depth: &DepthMap) -> Result<()> {
    if rgb.dims() != depth.dims() {
        return Err(mismatch(format!(
            "image is {:?} but depth is {:?}",
            rgb.dims(),
            depth.dims()
        )));
    }
    Ok(())
}

pub(crate) fn check_inputs(rgb: &RgbImage, depth: &DepthMap) -> Result<()> {
    check_dims(rgb, depth)?;
    if !depth.is_fully_valid() {
        return Err(invalid("synthesis needs a fully valid depth map; fill holes first"));
    }
    Ok(())
}

pub(crate) fn kernel_for_depth(
    depth_m: f64,
    lens: &ThinLensConfig,
    focus_distance_m: f64,
    psf_shape_p: f64,
) -> Result<KernelProfile> {
    let c = coc_pixels(depth_m, lens, focus_distance_m)?;
    KernelProfile::new(&PsfSpec::new(psf_shape_p, c)?)
}

/// One synthesized image per focus distance, in the given (ascending) order.
pub fn synthesize_stack(
    rgb: &RgbImage,
    depth: &DepthMap,
    lens: &ThinLensConfig,
    focus_distances_m: &[f64],
    psf_shape_p: f64,
    mode: SynthMode,
) -> Result<FocusStack> {
    if focus_distances_m.is_empty() {
        return Err(invalid("no focus distances given"));
    }
    if focus_distances_m.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("focus distances must be sorted ascending"));
    }
    let images = focus_distances_m
        .iter()
        .map(|&fd| match mode {
            SynthMode::Reference => synthesize_image_reference(rgb, depth, lens, fd, psf_shape_p),
            SynthMode::Layered { n_layers } => {
                synthesize_image_layered(rgb, depth, lens, fd, psf_shape_p, n_layers)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FocusStack::new(images, focus_distances_m.to_vec(), *lens)
}
