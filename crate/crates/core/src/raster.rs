//! Row-major RGB images and depth maps.

use crate::error::{invalid, mismatch, Result};

/// Three-channel image with values in `[0, 1]`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image dimensions must be >= 1"));
        }
        if data.len() != width * height * 3 {
            return Err(mismatch(format!(
                "expected {} samples for a {width}x{height} RGB image, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("channel value {bad} outside [0, 1]")));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = std::iter::repeat_n(rgb, width * height).flatten().collect();
        Self::new(width, height, data)
    }

    /// Builds an image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(width, height, data)
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }
}

/// Dense metric depth in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from raw values; entries that are positive and finite are
    /// valid, everything else is invalid and stored as 0.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("depth map dimensions must be >= 1"));
        }
        if values.len() != width * height {
            return Err(mismatch(format!(
                "expected {} depth values for {width}x{height}, got {}",
                width * height,
                values.len()
            )));
        }
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let data = values
            .into_iter()
            .zip(&valid)
            .map(|(v, ok)| if *ok { v } else { 0.0 })
            .collect();
        Ok(DepthMap {
            width,
            height,
            data,
            valid,
        })
    }

    pub fn constant(width: usize, height: usize, depth_m: f64) -> Result<Self> {
        Self::from_values(width, height, vec![depth_m; width * height])
    }

    pub fn invalid(width: usize, height: usize) -> Result<Self> {
        Self::from_values(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::from_values(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Depth values; invalid entries read as 0.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.data[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: Option<f64>) {
        let i = y * self.width + x;
        match depth {
            Some(d) if d.is_finite() && d > 0.0 => {
                self.data[i] = d;
                self.valid[i] = true;
            }
            _ => {
                self.data[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.data
            .iter()
            .zip(&self.valid)
            .filter_map(|(d, ok)| ok.then_some(*d))
            .collect()
    }
}

/// Peak signal-to-noise ratio in dB for images with unit peak.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(mismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Largest absolute per-sample difference.
pub fn max_abs_diff(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(mismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max))
}
