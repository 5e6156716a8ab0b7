//! Atomic file output and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command. `parameters` holds resolved flag
/// values keyed by flag name, so defaults filled in from the scenario are
/// pinned as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_path: String,
    pub parameters: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Input(format!("failed to read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("failed to parse {}: {e}", path.display())))
    }
}

/// Collects output files for one run and writes each one atomically.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Renders into memory, then swaps the finished file into place.
    pub fn write(
        &mut self,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>) -> ttslat_core::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let mut bytes = Vec::new();
        render(&mut bytes).map_err(|e| CliError::Internal(format!("rendering {name}: {e}")))?;
        if !bytes.ends_with(b"\n") {
            bytes.push(b'\n');
        }
        let path = self.persist(name, &bytes)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.output_paths = self.written.clone();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        self.persist(MANIFEST_FILE, text.as_bytes())?;
        Ok(())
    }

    fn persist(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.dir.join(name);
        let fail = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", target.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(fail)?;
        tmp.write_all(bytes).map_err(fail)?;
        tmp.as_file().sync_all().map_err(fail)?;
        tmp.persist(&target).map_err(|e| fail(e.error))?;
        Ok(target)
    }
}
