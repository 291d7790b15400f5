//! Output directories, content hashes and the provenance block every
//! artifact carries.
//!
//! Binary outputs (PNG, PFM) cannot hold free-form metadata, so each command
//! writes a manifest JSON next to them with the provenance and the SHA-256
//! of every file it produced. PLY outputs also carry the provenance in
//! header comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use focuskit_core::io::write_atomic;

pub const TOOL_VERSION: &str = concat!("focuskit ", env!("CARGO_PKG_VERSION"));
pub const OUT_DIR_ENV: &str = "FOCUSKIT_OUT_DIR";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: Option<u64>,
    /// SHA-256 of the command's resolved configuration as compact JSON with
    /// sorted keys.
    pub config_hash: String,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: Option<u64>) -> Result<Self> {
        // a Value round trip sorts object keys
        let canonical = serde_json::to_vec(&serde_json::to_value(config)?)?;
        Ok(Provenance {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config_hash: sha256_hex(&canonical),
        })
    }

    pub fn ply_comments(&self) -> Vec<String> {
        let mut out = vec![format!("tool_version {}", self.tool_version)];
        if let Some(s) = self.seed {
            out.push(format!("seed {s}"));
        }
        out.push(format!("config_hash {}", self.config_hash));
        out
    }
}

/// An input file identified by content, so configs hash the same wherever
/// the inputs live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub name: String,
    pub sha256: String,
}

pub fn read_input(path: &Path) -> Result<(Vec<u8>, InputRef)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let sha256 = sha256_hex(&bytes);
    Ok((bytes, InputRef { name, sha256 }))
}

/// Files written by one command run.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    /// Writes `name` holding provenance, config, results and the hashes of
    /// everything written so far.
    pub fn finish<C: Serialize, R: Serialize>(
        mut self,
        name: &str,
        provenance: &Provenance,
        config: &C,
        results: &R,
    ) -> Result<PathBuf> {
        let manifest = Manifest {
            provenance,
            config,
            results,
            files: &self.files.clone(),
        };
        self.write_json(name, &manifest)
    }
}

#[derive(Serialize)]
struct Manifest<'a, C, R> {
    provenance: &'a Provenance,
    config: &'a C,
    results: &'a R,
    files: &'a BTreeMap<String, String>,
}
