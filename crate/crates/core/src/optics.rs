//! Thin-lens defocus model.
//!
//! The circle of confusion of a point at depth `D` for a lens of focal length
//! `f` and f-number `N` focused at `d` is
//!
//! ```text
//! CoC = |D - d| / D * f^2 / (N (d - f))
//! ```
//!
//! The blur it causes is modeled with a generalized PSF whose shape exponent
//! `p` moves continuously from a Gaussian (`p = 2`) to a uniform disk
//! (`p -> inf`):
//!
//! ```text
//! F(u, v) = 1/c^2 * exp(-2 ((u^2 + v^2) / c^2)^(p/2))
//! ```
//!
//! The CoC is used directly as the radius scale `c` of the PSF.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Default truncation threshold for kernels, relative to the center value.
pub const DEFAULT_CUTOFF_REL: f64 = 1e-3;
/// Hard cap on kernel radius in pixels.
pub const MAX_KERNEL_RADIUS: usize = 64;
/// Blur scales below this many pixels map to the identity kernel.
pub const MIN_BLUR_SCALE_PX: f64 = 0.25;

/// Thin-lens camera parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LensJson", into = "LensJson")]
pub struct ThinLensConfig {
    focal_length_m: f64,
    f_number: f64,
    pixel_pitch_m: f64,
    principal_point: [f64; 2],
    focal_length_px: f64,
}

#[derive(Serialize, Deserialize)]
struct LensJson {
    focal_length_m: f64,
    f_number: f64,
    pixel_pitch_m: f64,
    principal_point: [f64; 2],
}

impl TryFrom<LensJson> for ThinLensConfig {
    type Error = crate::Error;

    fn try_from(raw: LensJson) -> Result<Self> {
        ThinLensConfig::new(
            raw.focal_length_m,
            raw.f_number,
            raw.pixel_pitch_m,
            raw.principal_point,
        )
    }
}

impl From<ThinLensConfig> for LensJson {
    fn from(lens: ThinLensConfig) -> Self {
        LensJson {
            focal_length_m: lens.focal_length_m,
            f_number: lens.f_number,
            pixel_pitch_m: lens.pixel_pitch_m,
            principal_point: lens.principal_point,
        }
    }
}

impl ThinLensConfig {
    pub fn new(
        focal_length_m: f64,
        f_number: f64,
        pixel_pitch_m: f64,
        principal_point: [f64; 2],
    ) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(focal_length_m) {
            return Err(invalid(format!("focal length must be > 0, got {focal_length_m}")));
        }
        if !positive(f_number) {
            return Err(invalid(format!("f-number must be > 0, got {f_number}")));
        }
        if !positive(pixel_pitch_m) {
            return Err(invalid(format!("pixel pitch must be > 0, got {pixel_pitch_m}")));
        }
        if !principal_point.iter().all(|v| v.is_finite()) {
            return Err(invalid("principal point must be finite"));
        }
        Ok(ThinLensConfig {
            focal_length_m,
            f_number,
            pixel_pitch_m,
            principal_point,
            focal_length_px: focal_length_m / pixel_pitch_m,
        })
    }

    pub fn focal_length_m(&self) -> f64 {
        self.focal_length_m
    }

    pub fn f_number(&self) -> f64 {
        self.f_number
    }

    pub fn pixel_pitch_m(&self) -> f64 {
        self.pixel_pitch_m
    }

    pub fn principal_point(&self) -> [f64; 2] {
        self.principal_point
    }

    /// Focal length expressed in pixels.
    pub fn focal_length_px(&self) -> f64 {
        self.focal_length_px
    }

    /// Same lens with a different aperture.
    pub fn with_f_number(&self, f_number: f64) -> Result<Self> {
        Self::new(self.focal_length_m, f_number, self.pixel_pitch_m, self.principal_point)
    }

    /// Same optics sampled on a finer grid, as produced by upscaling the image
    /// by `scale` about `center`. The pixel pitch shrinks by `scale`, so the
    /// focal length in pixels grows by `scale`.
    pub fn zoomed(&self, scale: f64, center: [f64; 2]) -> Result<Self> {
        let pp = [
            center[0] + scale * (self.principal_point[0] - center[0]),
            center[1] + scale * (self.principal_point[1] - center[1]),
        ];
        let mut lens = Self::new(self.focal_length_m, self.f_number, self.pixel_pitch_m / scale, pp)?;
        lens.focal_length_px = self.focal_length_px * scale;
        Ok(lens)
    }
}

/// Circle of confusion in meters on the sensor.
pub fn coc_meters(depth_m: f64, lens: &ThinLensConfig, focus_distance_m: f64) -> Result<f64> {
    if !(depth_m.is_finite() && depth_m > 0.0) {
        return Err(domain(format!("depth must be positive and finite, got {depth_m}")));
    }
    let f = lens.focal_length_m;
    if !(focus_distance_m.is_finite() && focus_distance_m > f) {
        return Err(domain(format!(
            "focus distance {focus_distance_m} m must exceed the focal length {f} m"
        )));
    }
    Ok((depth_m - focus_distance_m).abs() / depth_m * (f * f)
        / (lens.f_number * (focus_distance_m - f)))
}

/// Circle of confusion in sensor pixels.
pub fn coc_pixels(depth_m: f64, lens: &ThinLensConfig, focus_distance_m: f64) -> Result<f64> {
    Ok(coc_meters(depth_m, lens, focus_distance_m)? / lens.pixel_pitch_m)
}

/// Parameters of one generalized PSF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfSpec {
    /// Shape exponent; 2 is Gaussian, large values approach a disk.
    pub shape_p: f64,
    /// Radius scale in pixels.
    pub scale_c_px: f64,
    /// Kernel truncation threshold relative to the center value.
    pub cutoff_rel: f64,
}

impl PsfSpec {
    pub fn new(shape_p: f64, scale_c_px: f64) -> Result<Self> {
        let spec = PsfSpec {
            shape_p,
            scale_c_px,
            cutoff_rel: DEFAULT_CUTOFF_REL,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_cutoff(mut self, cutoff_rel: f64) -> Result<Self> {
        self.cutoff_rel = cutoff_rel;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape_p >= 1.0) || self.shape_p.is_nan() {
            return Err(invalid(format!("PSF shape p must be >= 1, got {}", self.shape_p)));
        }
        if !(self.scale_c_px.is_finite() && self.scale_c_px >= 0.0) {
            return Err(invalid(format!(
                "PSF scale must be finite and >= 0, got {}",
                self.scale_c_px
            )));
        }
        if !(self.cutoff_rel > 0.0 && self.cutoff_rel <= 1.0) {
            return Err(invalid(format!(
                "PSF cutoff must lie in (0, 1], got {}",
                self.cutoff_rel
            )));
        }
        Ok(())
    }
}

/// Unnormalized generalized PSF at pixel offset `(u, v)`.
pub fn psf_value(u: f64, v: f64, spec: &PsfSpec) -> Result<f64> {
    let c = spec.scale_c_px;
    if !(c > 0.0) {
        return Err(domain(format!("PSF scale must be > 0, got {c}")));
    }
    Ok(psf_unchecked(u * u + v * v, c, spec.shape_p))
}

#[inline]
pub(crate) fn psf_unchecked(r2: f64, c: f64, p: f64) -> f64 {
    let c2 = c * c;
    let rho2 = r2 / c2;
    // exponent p/2 applied to the squared ratio; p == 2 skips the powf
    let shaped = if p == 2.0 { rho2 } else { rho2.powf(0.5 * p) };
    (-2.0 * shaped).exp() / c2
}

/// Square kernel of odd side `2r + 1`, normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    radius: usize,
    weights: Vec<f64>,
}

impl DiscreteKernel {
    pub fn identity() -> Self {
        DiscreteKernel {
            radius: 0,
            weights: vec![1.0],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major weights, `side() * side()` entries.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(du, dv)` from the center; zero outside the support.
    #[inline]
    pub fn weight(&self, du: isize, dv: isize) -> f64 {
        let r = self.radius as isize;
        if du.abs() > r || dv.abs() > r {
            return 0.0;
        }
        let side = self.side() as isize;
        self.weights[((dv + r) * side + (du + r)) as usize]
    }

    pub fn is_identity(&self) -> bool {
        self.radius == 0
    }
}

/// Kernel support radius for a PSF; 0 means identity.
pub fn kernel_radius(spec: &PsfSpec) -> usize {
    let c = spec.scale_c_px;
    if c < MIN_BLUR_SCALE_PX {
        return 0;
    }
    let p = spec.shape_p;
    // psf(r + 0.5) <= cutoff * psf(0)  <=>  ((r + 0.5) / c)^p >= ln(1/cutoff) / 2
    let threshold = 0.5 * (1.0 / spec.cutoff_rel).ln();
    let below = |r: usize| {
        let rho = (r as f64 + 0.5) / c;
        (-2.0 * rho.powf(p)).exp() <= spec.cutoff_rel
    };
    let estimate = (c * threshold.powf(1.0 / p) - 0.5).ceil().max(0.0) as usize;
    let mut r = estimate.saturating_sub(1);
    while !below(r) && r < MAX_KERNEL_RADIUS {
        r += 1;
    }
    while r > 0 && below(r - 1) {
        r -= 1;
    }
    if p >= 8.0 {
        r = r.max(c.ceil() as usize);
    }
    r.min(MAX_KERNEL_RADIUS)
}

/// Normalized kernel evaluated on demand, without materializing the grid.
/// Weights are bit-identical to those of [`make_kernel`] for the same spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelProfile {
    radius: usize,
    scale: f64,
    shape_p: f64,
    norm: f64,
}

impl KernelProfile {
    pub fn new(spec: &PsfSpec) -> Result<Self> {
        spec.validate()?;
        let radius = kernel_radius(spec);
        if radius == 0 {
            return Ok(Self::identity());
        }
        let c = spec.scale_c_px;
        let r = radius as isize;
        let mut norm = 0.0;
        for dv in -r..=r {
            for du in -r..=r {
                norm += psf_unchecked((du * du + dv * dv) as f64, c, spec.shape_p);
            }
        }
        Ok(KernelProfile {
            radius,
            scale: c,
            shape_p: spec.shape_p,
            norm,
        })
    }

    pub fn identity() -> Self {
        KernelProfile {
            radius: 0,
            scale: 0.0,
            shape_p: 2.0,
            norm: 1.0,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Weight at offset `(du, dv)`; zero outside the square support.
    #[inline]
    pub fn weight(&self, du: isize, dv: isize) -> f64 {
        let r = self.radius as isize;
        if du.abs() > r || dv.abs() > r {
            return 0.0;
        }
        if r == 0 {
            return 1.0;
        }
        psf_unchecked((du * du + dv * dv) as f64, self.scale, self.shape_p) / self.norm
    }

    pub fn to_kernel(&self) -> DiscreteKernel {
        let r = self.radius as isize;
        let mut weights = Vec::with_capacity(self.side_len());
        for dv in -r..=r {
            for du in -r..=r {
                weights.push(self.weight(du, dv));
            }
        }
        DiscreteKernel {
            radius: self.radius,
            weights,
        }
    }

    fn side_len(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }
}

/// Samples the PSF at integer offsets and normalizes the weights to sum 1.
pub fn make_kernel(spec: &PsfSpec) -> Result<DiscreteKernel> {
    Ok(KernelProfile::new(spec)?.to_kernel())
}
