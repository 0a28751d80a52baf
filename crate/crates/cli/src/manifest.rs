use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use clp_core::ClpError;

pub const MANIFEST_FORMAT: &str = "clp manifest v1";
pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command. Holds no timestamps or output
/// paths, so a rerun into another directory yields an identical manifest.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub format: &'static str,
    pub command: &'static str,
    pub cli_version: &'static str,
    pub core_version: &'static str,
    pub file_format_version: u32,
    pub parallel_build: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: &'a C,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    /// Files whose contents vary between identical runs.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nondeterministic: Vec<String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'static str, seed: Option<u64>, config: &'a C) -> Self {
        Self {
            format: MANIFEST_FORMAT,
            command,
            cli_version: env!("CARGO_PKG_VERSION"),
            core_version: clp_core::VERSION,
            file_format_version: clp_core::io::FORMAT_VERSION,
            parallel_build: cfg!(feature = "parallel"),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            nondeterministic: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), ClpError> {
        let bytes = fs::read(path)?;
        let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<(), ClpError> {
        clp_core::io::write_string(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(self)?)
    }
}
