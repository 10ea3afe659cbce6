//! Local model zoo: a JSON list of named, versioned bundle entries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::{bundle_digest, load_bundle, TrainerError};

pub const ZOO_ENV: &str = "EASYASR_ZOO";
pub const DEFAULT_ZOO_FILE: &str = "zoo.json";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("zoo file {path} is malformed: {reason}")]
    Malformed { path: String, reason: String },
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("model {name}{} not found in zoo", .version.map(|v| format!(" version {v}")).unwrap_or_default())]
    NotFound { name: String, version: Option<u32> },
    #[error("invalid model name {0:?}: use letters, digits, '.', '_' or '-'")]
    BadName(String),
}

fn io_err(path: &Path, source: std::io::Error) -> RegistryError {
    RegistryError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEntry {
    pub name: String,
    pub version: u32,
    pub bundle_path: PathBuf,
    pub cer: Option<f64>,
    pub created_at: String,
    /// Bundle content digest taken at registration.
    pub digest: String,
}

/// Zoo location: `$EASYASR_ZOO`, else `./zoo.json`.
pub fn default_zoo_path() -> PathBuf {
    std::env::var_os(ZOO_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ZOO_FILE))
}

/// All entries; a missing zoo file is an empty zoo.
pub fn list_entries(zoo_file: &Path) -> Result<Vec<ZooEntry>, RegistryError> {
    match std::fs::read(zoo_file) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| RegistryError::Malformed {
            path: zoo_file.display().to_string(),
            reason: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(io_err(zoo_file, e)),
    }
}

fn write_atomically(zoo_file: &Path, entries: &[ZooEntry]) -> Result<(), RegistryError> {
    let dir = zoo_file.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let file_name = zoo_file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    let json = serde_json::to_string_pretty(entries).expect("entries serialize");
    std::fs::write(&tmp, json).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, zoo_file).map_err(|e| io_err(zoo_file, e))
}

fn verify(bundle: &Path) -> Result<(String, Option<f64>), RegistryError> {
    let invalid = |e: TrainerError| RegistryError::InvalidBundle(e.to_string());
    let loaded = load_bundle(bundle).map_err(invalid)?;
    let digest = bundle_digest(bundle).map_err(invalid)?;
    Ok((digest, loaded.manifest.cer))
}

/// Appends `bundle` under `name` with the next free version number.
pub fn register(zoo_file: &Path, name: &str, bundle: &Path) -> Result<ZooEntry, RegistryError> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
        return Err(RegistryError::BadName(name.to_string()));
    }
    let (digest, cer) = verify(bundle)?;
    let bundle_path = std::fs::canonicalize(bundle).map_err(|e| io_err(bundle, e))?;
    let mut entries = list_entries(zoo_file)?;
    let version = entries
        .iter()
        .filter(|e| e.name == name)
        .map(|e| e.version)
        .max()
        .unwrap_or(0)
        + 1;
    let entry = ZooEntry {
        name: name.to_string(),
        version,
        bundle_path,
        cer,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        digest,
    };
    entries.push(entry.clone());
    write_atomically(zoo_file, &entries)?;
    Ok(entry)
}

/// Bundle path for `name` at `version`, or the latest version when omitted.
/// The bundle is verified against the digest recorded at registration.
pub fn resolve(zoo_file: &Path, name: &str, version: Option<u32>) -> Result<PathBuf, RegistryError> {
    let entries = list_entries(zoo_file)?;
    let entry = entries
        .iter()
        .filter(|e| e.name == name && version.is_none_or(|v| e.version == v))
        .max_by_key(|e| e.version)
        .ok_or_else(|| RegistryError::NotFound {
            name: name.to_string(),
            version,
        })?;
    let (digest, _) = verify(&entry.bundle_path)?;
    if digest != entry.digest {
        return Err(RegistryError::InvalidBundle(format!(
            "{} changed since it was registered",
            entry.bundle_path.display()
        )));
    }
    Ok(entry.bundle_path.clone())
}
