//! File formats: PFM depth maps, 8-bit PNG images, binary PLY point clouds.
//!
//! All writers produce byte-identical output for identical input and go
//! through [`write_atomic`], so a failed run never leaves a half-written file.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub mod pfm;
pub mod ply;
pub mod png;

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
