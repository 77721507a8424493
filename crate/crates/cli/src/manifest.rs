//! On-disk stage manifests and run directories.
//!
//! Every stage writes `<out>/run.json` (the parameters it was started with)
//! before any sample, one `record.json` per sample next to that sample's
//! rasters, and `<out>/manifest.json` last. Paths inside manifests are
//! relative to the directory holding the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fovx_core::io::write_atomic;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_FILE: &str = "run.json";
pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest<R> {
    pub schema_version: u32,
    pub stage: String,
    /// Upstream stage directory, relative to this manifest.
    pub input: Option<String>,
    pub params: serde_json::Value,
    pub summary: serde_json::Value,
    pub records: Vec<R>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunInfo {
    schema_version: u32,
    stage: String,
    input: Option<String>,
    params: serde_json::Value,
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::internal)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, &to_json_bytes(value)?).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Relative path from `base` to `target`, with forward slashes.
pub fn relative(target: &Path, base: &Path) -> CliResult<String> {
    let target = absolute(target)?;
    let base = absolute(base)?;
    let rel = pathdiff::diff_paths(&target, &base)
        .ok_or_else(|| CliError::input(format!("cannot relate {} to {}", target.display(), base.display())))?;
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

/// Reads a stage manifest and checks its schema and stage name.
pub fn load_manifest<R: DeserializeOwned>(dir: &Path, stage: &str) -> CliResult<Manifest<R>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(CliError::input(format!("{} has no {MANIFEST_FILE}; did the {stage} stage finish?", dir.display())));
    }
    let m: Manifest<R> = read_json(&path)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(CliError::input(format!(
            "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            m.schema_version
        )));
    }
    if m.stage != stage {
        return Err(CliError::input(format!("{}: expected a {stage} manifest, found {}", path.display(), m.stage)));
    }
    Ok(m)
}

/// Output directory of a stage run.
pub struct RunDir {
    pub root: PathBuf,
    stage: String,
    input: Option<String>,
    params: serde_json::Value,
    resume: bool,
}

impl RunDir {
    /// Prepares `root`. A non-empty directory is refused unless `resume` is
    /// set and its `run.json` matches this stage, input and parameters.
    pub fn open(root: &Path, stage: &str, input: Option<&Path>, params: serde_json::Value, resume: bool) -> CliResult<Self> {
        let occupied = root.exists() && fs::read_dir(root).map_err(|e| CliError::io(root, e))?.next().is_some();
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let input = input.map(|p| relative(p, root)).transpose()?;
        let info = RunInfo { schema_version: SCHEMA_VERSION, stage: stage.into(), input: input.clone(), params: params.clone() };
        let run_path = root.join(RUN_FILE);
        if occupied {
            if !resume {
                return Err(CliError::input(format!(
                    "output directory {} is not empty; pass --resume to continue an interrupted run",
                    root.display()
                )));
            }
            if !run_path.exists() {
                return Err(CliError::input(format!("{} holds no {RUN_FILE}; refusing to resume", root.display())));
            }
            let previous: RunInfo = read_json(&run_path)?;
            if previous != info {
                return Err(CliError::input(format!(
                    "{} was started with different parameters; refusing to mix runs",
                    root.display()
                )));
            }
        } else {
            write_json(&run_path, &info)?;
        }
        Ok(Self { root: root.to_path_buf(), stage: stage.into(), input, params, resume })
    }

    pub fn sample_dir(&self, group: &str, id: &str) -> CliResult<PathBuf> {
        let dir = self.root.join(group).join(id);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }

    /// A finished record from an interrupted run, when resuming.
    pub fn existing_record<R: DeserializeOwned>(&self, dir: &Path) -> CliResult<Option<R>> {
        let path = dir.join(RECORD_FILE);
        if self.resume && path.exists() {
            return read_json(&path).map(Some);
        }
        Ok(None)
    }

    pub fn write_record<R: Serialize>(&self, dir: &Path, record: &R) -> CliResult<()> {
        write_json(&dir.join(RECORD_FILE), record)
    }

    /// Path of `p` relative to the run directory.
    pub fn rel(&self, p: &Path) -> CliResult<String> {
        relative(p, &self.root)
    }

    pub fn finish<R: Serialize>(self, summary: serde_json::Value, records: Vec<R>) -> CliResult<Manifest<R>> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            stage: self.stage,
            input: self.input,
            params: self.params,
            summary,
            records,
        };
        write_json(&self.root.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}
