//! One function per subcommand. Each resolves its configuration, writes its
//! outputs through an [`OutputSet`](crate::artifact::OutputSet) and finishes with a manifest.

use anyhow::Result;
use serde::Serialize;

use crate::artifact::{InputRef, Provenance};

pub mod evaluate;
pub mod lidar;
pub mod simulate;
pub mod stack;

/// The hashed configuration of one run: the command, its inputs by content
/// and its parsed flags (paths excluded).
#[derive(Debug, Serialize)]
pub struct JobConfig<'a, A> {
    pub command: &'static str,
    pub inputs: Vec<InputRef>,
    pub args: &'a A,
}

impl<'a, A: Serialize> JobConfig<'a, A> {
    pub fn new(command: &'static str, inputs: Vec<InputRef>, args: &'a A) -> Self {
        JobConfig { command, inputs, args }
    }

    pub fn provenance(&self, seed: Option<u64>) -> Result<Provenance> {
        Provenance::new(self, seed)
    }
}
