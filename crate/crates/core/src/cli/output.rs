use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::model::CHECKPOINT_FORMAT;

pub const MANIFEST_FORMAT: &str = "demandcast-manifest/v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub name: String,
    pub sha256: String,
}

/// Written next to every command's artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub checkpoint_format: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub artifacts: Vec<ArtifactDigest>,
}

impl Manifest {
    pub fn new(command: &str, config_sha256: String, seed: Option<u64>) -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: CHECKPOINT_FORMAT.to_string(),
            config_sha256,
            seed,
            artifacts: Vec::new(),
        }
    }
}

/// Artifacts are written into a hidden directory under `out` and moved into
/// place only by [`Staging::finish`]; dropping an unfinished staging area
/// deletes everything written so far.
#[derive(Debug)]
pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
    files: Vec<String>,
    created_out: bool,
    finished: bool,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self, CliError> {
        let created_out = !out.exists();
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let dir = out.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            files: Vec::new(),
            created_out,
            finished: false,
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    /// Staged path for `name`, registered as an artifact.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| io_err(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)
            .map_err(|e| CliError::new("format", e.to_string()))?;
        w.write_all(b"\n").map_err(|e| io_err(Path::new(name), e))?;
        w.flush().map_err(|e| io_err(Path::new(name), e))
    }

    /// Hashes the artifacts into `manifest`, writes it and moves everything
    /// into the output directory.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Vec<PathBuf>, CliError> {
        let mut names = self.files.clone();
        names.sort();
        for name in &names {
            let path = self.dir.join(name);
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            manifest.artifacts.push(ArtifactDigest {
                name: name.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        self.write_json(MANIFEST_FILE, &manifest)?;
        names.push(MANIFEST_FILE.to_string());
        let mut placed = Vec::with_capacity(names.len());
        for name in &names {
            let to = self.out.join(name);
            fs::rename(self.dir.join(name), &to).map_err(|e| io_err(&to, e))?;
            placed.push(to);
        }
        fs::remove_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        self.finished = true;
        Ok(placed)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.dir);
            if self.created_out {
                // only succeeds if nothing else was put there
                let _ = fs::remove_dir(&self.out);
            }
        }
    }
}
