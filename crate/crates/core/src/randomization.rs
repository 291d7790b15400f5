//! Seeded samplers for training-time domain randomization.
//!
//! - PSF shape: `p = 2^u`, `u ~ U(1, 5)`.
//! - f-number: uniform choice from `{1.0, 1.4, 2.0, 2.8, 4.0}`.
//! - Focus-distance range: either the 5th/95th depth percentiles of the scene
//!   ("percentile") or `z_near ~ U(0.6, 1.0)`, `z_far = z_near * U(7, 15)`
//!   ("automatic"), mixed 1:4.
//! - Focus distances: power-law interpolation in disparity,
//!   `f_i = ((1 - t_i) z_near^-k + t_i z_far^-k)^(-1/k)`, `t_i = (i-1)/(S-1)`,
//!   `k ~ U(0, 1)`, with the geometric limit at `k = 0`.
//!
//! All randomness flows through [`SeededRng`], a ChaCha8 stream that is
//! identical on every platform for a given seed and stream id.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::DepthMap;

/// Identifier recorded in metadata next to the seed.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Below this `kappa` the geometric (log-space) limit is used.
pub const KAPPA_LIMIT_THRESHOLD: f64 = 1e-4;

/// Reproducible random stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, stream, inner }
    }

    /// Independent substream for parallel consumers; does not advance `self`.
    pub fn fork(&self, stream: u64) -> SeededRng {
        SeededRng::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.inner.random_range(lo..hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlurSamplerConfig {
    /// `p = 2^u` with `u` uniform on this range.
    pub log2_p_range: (f64, f64),
    pub f_numbers: Vec<f64>,
}

impl Default for BlurSamplerConfig {
    fn default() -> Self {
        BlurSamplerConfig {
            log2_p_range: (1.0, 5.0),
            f_numbers: vec![1.0, 1.4, 2.0, 2.8, 4.0],
        }
    }
}

/// PSF shape for a given exponent draw `u`.
pub fn psf_shape_from_exponent(u: f64) -> f64 {
    u.exp2()
}

pub fn sample_psf_shape(rng: &mut SeededRng) -> f64 {
    let cfg = BlurSamplerConfig::default();
    sample_psf_shape_with(&cfg, rng)
}

pub fn sample_psf_shape_with(cfg: &BlurSamplerConfig, rng: &mut SeededRng) -> f64 {
    let (lo, hi) = cfg.log2_p_range;
    psf_shape_from_exponent(rng.uniform(lo, hi))
}

pub fn sample_f_number(cfg: &BlurSamplerConfig, rng: &mut SeededRng) -> Result<f64> {
    if cfg.f_numbers.is_empty() {
        return Err(invalid("no f-numbers to sample from"));
    }
    Ok(cfg.f_numbers[rng.index(cfg.f_numbers.len())])
}

/// How the near/far focus range is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdMode {
    Percentile,
    Automatic,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdSamplerConfig {
    pub mode: FdMode,
    /// Relative weights of (percentile, automatic) in mixed mode.
    pub mix_ratio: (f64, f64),
    pub stack_size: usize,
    /// Lower and upper depth percentiles, in percent.
    pub percentile_bounds: (f64, f64),
    pub auto_near_range_m: (f64, f64),
    pub auto_far_multiplier_range: (f64, f64),
    pub kappa_range: (f64, f64),
}

impl Default for FdSamplerConfig {
    fn default() -> Self {
        FdSamplerConfig {
            mode: FdMode::Mixed,
            mix_ratio: (1.0, 4.0),
            stack_size: 5,
            percentile_bounds: (5.0, 95.0),
            auto_near_range_m: (0.6, 1.0),
            auto_far_multiplier_range: (7.0, 15.0),
            kappa_range: (0.0, 1.0),
        }
    }
}

impl FdSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stack_size < 2 {
            return Err(invalid(format!("stack size must be >= 2, got {}", self.stack_size)));
        }
        let (kl, kh) = self.kappa_range;
        if !(0.0 <= kl && kl <= kh && kh <= 1.0) {
            return Err(invalid("kappa range must lie within [0, 1]"));
        }
        let (pw, aw) = self.mix_ratio;
        if !(pw >= 0.0 && aw >= 0.0 && pw + aw > 0.0) {
            return Err(invalid("mix ratio weights must be non-negative and not both zero"));
        }
        let (lo, hi) = self.percentile_bounds;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(invalid("percentile bounds must satisfy 0 <= lo < hi <= 100"));
        }
        let (nl, nh) = self.auto_near_range_m;
        let (ml, mh) = self.auto_far_multiplier_range;
        if !(nl > 0.0 && nl <= nh && ml > 1.0 && ml <= mh) {
            return Err(invalid("automatic range needs near > 0 and far multiplier > 1"));
        }
        Ok(())
    }

    pub fn percentile_probability(&self) -> f64 {
        match self.mode {
            FdMode::Percentile => 1.0,
            FdMode::Automatic => 0.0,
            FdMode::Mixed => self.mix_ratio.0 / (self.mix_ratio.0 + self.mix_ratio.1),
        }
    }
}

/// Which rule produced a focus range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdSource {
    Percentile,
    Automatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdBounds {
    pub near_m: f64,
    pub far_m: f64,
    pub source: FdSource,
}

/// Percentile `q` (in percent) with linear interpolation between order
/// statistics.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(invalid(format!("percentile {q} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&v, q))
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Minimum number of valid depth pixels for percentile bounds.
pub const MIN_PERCENTILE_PIXELS: usize = 20;

pub fn sample_fd_bounds(depth: Option<&DepthMap>, cfg: &FdSamplerConfig, rng: &mut SeededRng) -> Result<FdBounds> {
    cfg.validate()?;
    let use_percentile = match cfg.mode {
        FdMode::Percentile => true,
        FdMode::Automatic => false,
        FdMode::Mixed => rng.uniform(0.0, 1.0) < cfg.percentile_probability(),
    };
    if use_percentile {
        let depth = depth.ok_or_else(|| invalid("percentile focus range needs a depth map"))?;
        let mut valid = depth.valid_values();
        if valid.len() < MIN_PERCENTILE_PIXELS {
            return Err(invalid(format!(
                "percentile focus range needs >= {MIN_PERCENTILE_PIXELS} valid depth pixels, got {}",
                valid.len()
            )));
        }
        valid.sort_by(f64::total_cmp);
        let near = percentile_sorted(&valid, cfg.percentile_bounds.0);
        let far = percentile_sorted(&valid, cfg.percentile_bounds.1);
        if !(near < far) {
            return Err(invalid(format!("depth percentiles do not span a range ({near} .. {far})")));
        }
        Ok(FdBounds {
            near_m: near,
            far_m: far,
            source: FdSource::Percentile,
        })
    } else {
        let near = rng.uniform(cfg.auto_near_range_m.0, cfg.auto_near_range_m.1);
        let mult = rng.uniform(cfg.auto_far_multiplier_range.0, cfg.auto_far_multiplier_range.1);
        Ok(FdBounds {
            near_m: near,
            far_m: near * mult,
            source: FdSource::Automatic,
        })
    }
}

/// `count` focus distances from `near` to `far` (inclusive), spaced by a power
/// law in disparity with exponent `kappa`.
pub fn interpolate_fds(near_m: f64, far_m: f64, count: usize, kappa: f64) -> Result<Vec<f64>> {
    if !(near_m > 0.0 && near_m < far_m && far_m.is_finite()) {
        return Err(invalid(format!("need 0 < near < far, got {near_m} .. {far_m}")));
    }
    if count < 2 {
        return Err(invalid(format!("need at least 2 focus distances, got {count}")));
    }
    if !(0.0..=1.0).contains(&kappa) {
        return Err(invalid(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    let last = count - 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let fd = if i == 0 {
            near_m
        } else if i == last {
            far_m
        } else {
            let t = i as f64 / last as f64;
            if kappa < KAPPA_LIMIT_THRESHOLD {
                near_m.powf(1.0 - t) * far_m.powf(t)
            } else {
                ((1.0 - t) * near_m.powf(-kappa) + t * far_m.powf(-kappa)).powf(-1.0 / kappa)
            }
        };
        out.push(fd);
    }
    Ok(out)
}

/// A complete focus-distance draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSample {
    pub bounds: FdBounds,
    pub kappa: f64,
    pub focus_distances_m: Vec<f64>,
}

pub fn sample_fds(depth: Option<&DepthMap>, cfg: &FdSamplerConfig, rng: &mut SeededRng) -> Result<FdSample> {
    let bounds = sample_fd_bounds(depth, cfg, rng)?;
    let kappa = rng.uniform(cfg.kappa_range.0, cfg.kappa_range.1);
    let focus_distances_m = interpolate_fds(bounds.near_m, bounds.far_m, cfg.stack_size, kappa)?;
    Ok(FdSample {
        bounds,
        kappa,
        focus_distances_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_bounds_map_to_gaussian_and_32() {
        assert_eq!(psf_shape_from_exponent(1.0), 2.0);
        assert_eq!(psf_shape_from_exponent(5.0), 32.0);
    }

    #[test]
    fn f_numbers_come_from_the_set() {
        let cfg = BlurSamplerConfig::default();
        let mut rng = SeededRng::new(3);
        for _ in 0..200 {
            let n = sample_f_number(&cfg, &mut rng).unwrap();
            assert!(cfg.f_numbers.contains(&n));
        }
    }

    #[test]
    fn uniform_disparity_fixture() {
        let fds = interpolate_fds(1.0, 8.0, 5, 1.0).unwrap();
        let expected = [1.0, 1.0 / 0.78125, 1.0 / 0.5625, 1.0 / 0.34375, 8.0];
        for (a, b) in fds.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn log_limit_fixture() {
        let fds = interpolate_fds(1.0, 8.0, 5, 0.0).unwrap();
        let expected = [1.0, 1.6818, 2.8284, 4.7568, 8.0];
        for (a, b) in fds.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn two_points_are_the_endpoints() {
        for k in [0.0, 0.3, 1.0] {
            assert_eq!(interpolate_fds(0.7, 9.1, 2, k).unwrap(), vec![0.7, 9.1]);
        }
    }

    #[test]
    fn interpolation_rejects_bad_inputs() {
        assert!(interpolate_fds(2.0, 1.0, 5, 0.5).is_err());
        assert!(interpolate_fds(0.0, 1.0, 5, 0.5).is_err());
        assert!(interpolate_fds(1.0, 2.0, 1, 0.5).is_err());
        assert!(interpolate_fds(1.0, 2.0, 3, 1.5).is_err());
    }

    #[test]
    fn percentile_mode_needs_depth() {
        let cfg = FdSamplerConfig {
            mode: FdMode::Percentile,
            ..Default::default()
        };
        let mut rng = SeededRng::new(0);
        assert!(sample_fd_bounds(None, &cfg, &mut rng).is_err());
        let few = DepthMap::constant(4, 4, 2.0).unwrap();
        assert!(sample_fd_bounds(Some(&few), &cfg, &mut rng).is_err());
    }

    #[test]
    fn percentile_linear_interpolation() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
        assert!((percentile(&v, 50.0).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn forks_are_independent_and_reproducible() {
        let base = SeededRng::new(42);
        let mut a = base.fork(1);
        let mut b = base.fork(1);
        let mut c = base.fork(2);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: FdSamplerConfig = serde_json::from_str(r#"{"mode":"automatic","stack_size":9}"#).unwrap();
        assert_eq!(cfg.mode, FdMode::Automatic);
        assert_eq!(cfg.stack_size, 9);
        assert_eq!(cfg.mix_ratio, (1.0, 4.0));
    }
}
