//! Focus-stack synthesis, Lidar depth ground truth, and the numerical checks
//! that tie them together.
//!
//! - [`optics`]: thin-lens circle of confusion and the generalized PSF family.
//! - [`synth`]: spatially varying defocus synthesis of focus stacks from RGBD.
//! - [`randomization`]: seeded samplers for PSF shape, aperture and focus distances.
//! - [`attention`]: forward reference of per-pixel stack attention and collapse.
//! - [`lidar`]: ICP, scan aggregation with density filtering, z-buffer projection.
//! - [`metrics`]: depth metrics and training losses.
//! - [`dfo`]: classical depth-from-focus estimator used as a round-trip check.
//! - [`sim`]: deterministic synthetic scenes used by tests and demos.

pub mod attention;
pub mod dfo;
pub mod error;
pub mod io;
pub mod lidar;
pub mod metrics;
pub mod optics;
pub mod randomization;
pub mod raster;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
