// SPDX-License-Identifier: Apache-2.0

//! Write-once, on-disk blob store.
//!
//! Each entry is a pair of files named after the SHA-256 of its key:
//! `<h>.blob` holds the bytes and `<h>.key` the key itself. Both are written
//! through a temporary file and renamed into place, blob first, so a crash
//! can leave at most an orphaned `.blob`, which is discarded on open.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use layerci_core::protocol::{valid_key, MAX_BLOB_SIZE};
use layerci_core::Digest;

#[derive(Debug, thiserror::Error)]
pub enum BlobError {
    #[error("invalid key {0:?}")]
    BadKey(String),
    #[error("key {key:?} is outside namespace {namespace:?}")]
    Namespace { key: String, namespace: String },
    #[error("blob of {0} bytes exceeds the size limit")]
    Oversize(u64),
    #[error("key {0:?} already holds different bytes")]
    Conflict(String),
    #[error("corrupt blob store at {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BlobError + '_ {
    move |source| BlobError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug)]
pub struct BlobStore {
    root: PathBuf,
    namespace: String,
    /// key → file stem; the lock also serializes puts.
    index: Mutex<BTreeMap<String, String>>,
}

fn write_atomic(path: &Path, data: &[u8]) -> Result<(), BlobError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(data).map_err(io_err(&tmp))?;
    f.sync_data().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl BlobStore {
    /// Opens (creating if needed) the store at `root`. Keys must start with
    /// `namespace`.
    pub fn open(root: impl Into<PathBuf>, namespace: &str) -> Result<BlobStore, BlobError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let mut index = BTreeMap::new();
        let corrupt = |path: &Path, message: String| BlobError::Corrupt { path: path.to_path_buf(), message };
        for entry in fs::read_dir(&root).map_err(io_err(&root))? {
            let entry = entry.map_err(io_err(&root))?;
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some((stem, ext)) = name.rsplit_once('.') else {
                return Err(corrupt(&path, "unexpected file".into()));
            };
            match ext {
                "key" => {
                    let key = fs::read_to_string(&path).map_err(io_err(&path))?;
                    if !valid_key(&key) || Digest::of(key.as_bytes()).to_hex() != stem {
                        return Err(corrupt(&path, "key file does not match its name".into()));
                    }
                    if !root.join(format!("{stem}.blob")).is_file() {
                        return Err(corrupt(&path, "key without blob".into()));
                    }
                    index.insert(key, stem.to_owned());
                }
                "blob" => {}
                "tmp" => {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
                _ => return Err(corrupt(&path, "unexpected file".into())),
            }
        }
        for entry in fs::read_dir(&root).map_err(io_err(&root))? {
            let path = entry.map_err(io_err(&root))?.path();
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if path.extension().is_some_and(|e| e == "blob") && !index.values().any(|s| *s == stem) {
                log::warn!("discarding incomplete blob {}", path.display());
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        Ok(BlobStore { root, namespace: namespace.to_owned(), index: Mutex::new(index) })
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn check_key(&self, key: &str) -> Result<(), BlobError> {
        if !valid_key(key) {
            return Err(BlobError::BadKey(key.into()));
        }
        if !key.starts_with(&self.namespace) {
            return Err(BlobError::Namespace { key: key.into(), namespace: self.namespace.clone() });
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<Option<Vec<u8>>, BlobError> {
        self.check_key(key)?;
        let index = self.index.lock().expect("blob index lock");
        match index.get(key) {
            Some(stem) => {
                let path = self.root.join(format!("{stem}.blob"));
                fs::read(&path).map(Some).map_err(io_err(&path))
            }
            None => Ok(None),
        }
    }

    /// Stores `data` under `key`. Storing identical bytes again is accepted.
    pub fn put(&self, key: &str, data: &[u8]) -> Result<(), BlobError> {
        self.check_key(key)?;
        if data.len() as u64 > MAX_BLOB_SIZE {
            return Err(BlobError::Oversize(data.len() as u64));
        }
        let mut index = self.index.lock().expect("blob index lock");
        let stem = Digest::of(key.as_bytes()).to_hex();
        let blob = self.root.join(format!("{stem}.blob"));
        if index.contains_key(key) {
            let existing = fs::read(&blob).map_err(io_err(&blob))?;
            return if existing == data { Ok(()) } else { Err(BlobError::Conflict(key.into())) };
        }
        write_atomic(&blob, data)?;
        write_atomic(&self.root.join(format!("{stem}.key")), key.as_bytes())?;
        index.insert(key.to_owned(), stem);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("blob index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every `(key, SHA-256 of bytes)` pair, sorted by key.
    pub fn dump(&self) -> Result<Vec<(String, Digest)>, BlobError> {
        let keys: Vec<String> = self.index.lock().expect("blob index lock").keys().cloned().collect();
        let mut out = Vec::new();
        for k in keys {
            if let Some(data) = self.get(&k)? {
                out.push((k, Digest::of(&data)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_once_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let s = BlobStore::open(dir.path(), "ss/").unwrap();
        assert_eq!(s.get("ss/a").unwrap(), None);
        s.put("ss/a", b"one").unwrap();
        s.put("ss/a", b"one").unwrap();
        assert!(matches!(s.put("ss/a", b"two"), Err(BlobError::Conflict(_))));
        assert!(matches!(s.put("dl/a", b"x"), Err(BlobError::Namespace { .. })));
        assert!(matches!(s.put("ss/a b", b"x"), Err(BlobError::BadKey(_))));
        let dump = s.dump().unwrap();
        drop(s);
        let s = BlobStore::open(dir.path(), "ss/").unwrap();
        assert_eq!(s.get("ss/a").unwrap().unwrap(), b"one");
        assert_eq!(s.dump().unwrap(), dump);
    }

    #[test]
    fn corrupt_store_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("junk"), "x").unwrap();
        assert!(matches!(BlobStore::open(dir.path(), "ss/"), Err(BlobError::Corrupt { .. })));
    }

    #[test]
    fn orphan_blob_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("abc.blob"), "x").unwrap();
        let s = BlobStore::open(dir.path(), "ss/").unwrap();
        assert!(s.is_empty());
        assert!(!dir.path().join("abc.blob").exists());
    }
}
