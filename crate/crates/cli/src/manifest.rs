use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use nel_core::Result;

/// Provenance record written next to every set of output files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    pub passed: Option<bool>,
}

impl RunManifest {
    pub fn new(command: &str, config: String, seed: Option<u64>, threads: usize) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            passed: None,
        }
    }

    /// Writes `contents` to `path` and records it.
    pub fn write_output(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, contents)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(mut self, started: Instant, path: &Path) -> Result<()> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// `dir/stem.manifest.json` for an output file `dir/stem.ext`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
