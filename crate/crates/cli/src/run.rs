//! Run directories, manifests and input bookkeeping.

use std::fs;
use std::path::{Path, PathBuf};

use fmdt_core::net::Checkpoint;
use fmdt_core::{Dataset, FmError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "fmdt-manifest-1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug)]
pub enum CliError {
    /// The configuration is malformed or references missing files.
    Schema(String),
    /// A module operation failed.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<FmError> for CliError {
    fn from(e: FmError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

pub fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Config field for inputs, file name for outputs.
    pub name: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub version: String,
    /// The resolved configuration: absolute paths, seeds filled in.
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| schema(format!("manifest {}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| schema(format!("manifest field `{}`: {}", e.path(), e.inner())))
    }
}

/// Reads the files a command depends on and records their hashes.
#[derive(Debug, Default)]
pub struct Inputs {
    pub records: Vec<FileHash>,
}

impl Inputs {
    pub fn read(&mut self, field: &str, path: &Path) -> Result<Vec<u8>, CliError> {
        if !path.is_file() {
            return Err(schema(format!("{field}: file {} does not exist", path.display())));
        }
        let bytes = fs::read(path).map_err(|e| runtime(format!("{field}: {e}")))?;
        self.records.push(FileHash {
            name: field.to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn dataset(&mut self, field: &str, path: &Path) -> Result<Dataset, CliError> {
        let bytes = self.read(field, path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::read_fmdt1(&bytes[..], name).map_err(|e| runtime(format!("{field}: {e}")))
    }

    pub fn checkpoint(&mut self, field: &str, path: &Path) -> Result<Checkpoint, CliError> {
        let bytes = self.read(field, path)?;
        let text = String::from_utf8(bytes).map_err(|e| runtime(format!("{field}: {e}")))?;
        Checkpoint::from_json(&text).map_err(|e| runtime(format!("{field}: {e}")))
    }
}

/// Files produced by a command, written only once the command succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }

    pub fn with_writer<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> fmdt_core::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }
}

/// `<out>/<command>-<8 hex digits of the config hash>`, with `-1`, `-2`, ...
/// appended when that directory already exists.
pub fn create_run_dir(out: &Path, command: &str, config: &serde_json::Value) -> Result<PathBuf, CliError> {
    let canonical = serde_json::to_string(&serde_json::json!({ "command": command, "config": config }))
        .map_err(runtime)?;
    let tag = &sha256_hex(canonical.as_bytes())[..8];
    fs::create_dir_all(out).map_err(|e| runtime(format!("--out {}: {e}", out.display())))?;
    let base = format!("{command}-{tag}");
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(runtime(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

pub fn write_run(dir: &Path, outputs: &Outputs, manifest: &mut Manifest) -> Result<(), CliError> {
    for (name, bytes) in &outputs.files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        manifest.outputs.push(FileHash {
            name: name.clone(),
            path: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let mut text = serde_json::to_string_pretty(manifest).map_err(runtime)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Makes a relative path absolute against `base`.
pub fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}
