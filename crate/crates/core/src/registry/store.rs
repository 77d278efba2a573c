//! One-directory JSON document store.
//!
//! ```text
//! catalog/{manufacturer}--{model}.json
//! plugins/{id}.plugin        verbatim descriptor
//! plugins/{id}.sha256        digest recorded at install
//! registrations/{uid}.json
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::service::{CatalogEntry, RegistrationRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
    #[error("name {0:?} is not storable (allowed: A-Z a-z 0-9 . _ -)")]
    BadName(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn is_storable_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

fn checked(name: &str) -> Result<&str, StoreError> {
    if is_storable_name(name) {
        Ok(name)
    } else {
        Err(StoreError::BadName(name.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let root = root.into();
        for sub in ["catalog", "plugins", "registrations"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir, source })?;
        }
        Ok(Store { root })
    }

    /// A store view over an existing directory; nothing is created.
    pub fn existing(root: impl Into<PathBuf>) -> Store {
        Store { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog_path(&self, entry: &CatalogEntry) -> Result<PathBuf, StoreError> {
        let name = format!("{}--{}.json", checked(&entry.manufacturer)?, checked(&entry.model)?);
        Ok(self.root.join("catalog").join(name))
    }

    pub fn plugin_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("plugins").join(format!("{}.plugin", checked(id)?)))
    }

    fn digest_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("plugins").join(format!("{}.sha256", checked(id)?)))
    }

    pub fn record_path(&self, uid: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("registrations").join(format!("{}.json", checked(uid)?)))
    }

    pub fn put_catalog(&self, entry: &CatalogEntry) -> Result<(), StoreError> {
        write_json(&self.catalog_path(entry)?, entry)
    }

    pub fn catalog(&self) -> Result<Vec<CatalogEntry>, StoreError> {
        read_all(&self.root.join("catalog"), "json")
    }

    /// Stores the descriptor bytes and their digest; returns the digest.
    pub fn put_plugin(&self, id: &str, bytes: &[u8]) -> Result<String, StoreError> {
        let digest = sha256_hex(bytes);
        write_atomic(&self.plugin_path(id)?, bytes)?;
        write_atomic(&self.digest_path(id)?, format!("{digest}\n").as_bytes())?;
        Ok(digest)
    }

    /// Current stored bytes and the digest recorded when they were installed.
    pub fn plugin(&self, id: &str) -> Result<Option<(Vec<u8>, String)>, StoreError> {
        let (path, dpath) = (self.plugin_path(id)?, self.digest_path(id)?);
        let Some(bytes) = read_optional(&path)? else { return Ok(None) };
        let digest = match read_optional(&dpath)? {
            Some(d) => String::from_utf8_lossy(&d).trim().to_string(),
            None => sha256_hex(&bytes),
        };
        Ok(Some((bytes, digest)))
    }

    pub fn put_record(&self, record: &RegistrationRecord) -> Result<(), StoreError> {
        write_json(&self.record_path(&record.profile.identity.uid)?, record)
    }

    pub fn records(&self) -> Result<Vec<RegistrationRecord>, StoreError> {
        read_all(&self.root.join("registrations"), "json")
    }
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, StoreError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(StoreError::Io { path: path.into(), source }),
    }
}

pub(crate) fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store documents serialize");
    bytes.push(b'\n');
    bytes
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    write_atomic(path, &to_json_bytes(value))
}

/// Skips the write when the file already holds these bytes.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if read_optional(path)?.as_deref() == Some(bytes) {
        return Ok(());
    }
    let io_err = |source| StoreError::Io { path: path.into(), source };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn read_all<T: DeserializeOwned>(dir: &Path, ext: &str) -> Result<Vec<T>, StoreError> {
    let entries = fs::read_dir(dir).map_err(|source| StoreError::Io { path: dir.into(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let bytes = fs::read(&path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
            serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt { path, source })
        })
        .collect()
}
