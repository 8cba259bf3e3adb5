// SPDX-License-Identifier: Apache-2.0

//! Source snapshots keyed by `(project, revision)`.
//!
//! [`DirStore`] keeps each snapshot as a plain directory tree at
//! `<root>/<project>/<revision>/`. Revisions are opaque and immutable: a
//! revision may be published again only with identical contents.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use layerci_core::digest::tree_digest;
use layerci_core::manifest::is_relative_path;
use layerci_core::Digest;

/// Relative path (with `/` separators) → file contents.
pub type Tree = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    /// Resolved snapshot identifier recorded in the workspace state.
    pub id: String,
    pub files: Tree,
}

impl Snapshot {
    pub fn digest(&self) -> Digest {
        digest_of(&self.files)
    }
}

pub fn digest_of(tree: &Tree) -> Digest {
    tree_digest(tree.iter().map(|(p, d)| (p.as_str(), d.as_slice())))
}

/// Whether any file has a line consisting solely of `COMPILE_FAIL`.
pub fn has_compile_fail(tree: &Tree) -> bool {
    tree.values().any(|data| {
        String::from_utf8_lossy(data).lines().any(|l| l.trim() == "COMPILE_FAIL")
    })
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no snapshot of project {project:?} at revision {revision:?}")]
    MissingSnapshot { project: String, revision: String },
    #[error("revision {revision:?} of {project:?} already exists with different contents")]
    Conflict { project: String, revision: String },
    #[error("{path}: {message}")]
    BadTree { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Reads every regular file below `dir`. Symlinks and non-UTF-8 names are rejected.
pub fn read_tree(dir: &Path) -> Result<Tree, StoreError> {
    let mut tree = Tree::new();
    for entry in walkdir::WalkDir::new(dir).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(|e| StoreError::BadTree {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        let ft = entry.file_type();
        if ft.is_dir() {
            continue;
        }
        if !ft.is_file() {
            return Err(StoreError::BadTree {
                path: entry.path().to_path_buf(),
                message: "only regular files are supported".into(),
            });
        }
        let rel = entry.path().strip_prefix(dir).expect("walkdir yields children of dir");
        let rel = rel
            .to_str()
            .ok_or_else(|| StoreError::BadTree {
                path: entry.path().to_path_buf(),
                message: "file name is not UTF-8".into(),
            })?
            .replace(std::path::MAIN_SEPARATOR, "/");
        let data = fs::read(entry.path()).map_err(io_err(entry.path()))?;
        tree.insert(rel, data);
    }
    Ok(tree)
}

/// Writes `tree` below `dir`, creating directories as needed.
pub fn write_tree(dir: &Path, tree: &Tree) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (rel, data) in tree {
        if !is_relative_path(rel) {
            return Err(StoreError::BadTree { path: dir.join(rel), message: "unsafe path".into() });
        }
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, data).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Self-delimiting serialization of a tree: per file, in path order,
/// `<path-len> <data-len>\n<path><data>`.
pub fn encode_tree(tree: &Tree) -> Vec<u8> {
    let mut out = Vec::new();
    for (path, data) in tree {
        out.extend_from_slice(format!("{} {}\n", path.len(), data.len()).as_bytes());
        out.extend_from_slice(path.as_bytes());
        out.extend_from_slice(data);
    }
    out
}

pub fn decode_tree(mut bytes: &[u8]) -> Option<Tree> {
    let mut tree = Tree::new();
    while !bytes.is_empty() {
        let nl = bytes.iter().position(|b| *b == b'\n')?;
        let header = std::str::from_utf8(&bytes[..nl]).ok()?;
        let (plen, dlen) = header.split_once(' ')?;
        let (plen, dlen): (usize, usize) = (plen.parse().ok()?, dlen.parse().ok()?);
        bytes = &bytes[nl + 1..];
        if bytes.len() < plen.checked_add(dlen)? {
            return None;
        }
        let path = std::str::from_utf8(&bytes[..plen]).ok()?.to_owned();
        let data = bytes[plen..plen + dlen].to_vec();
        bytes = &bytes[plen + dlen..];
        if tree.insert(path, data).is_some() {
            return None;
        }
    }
    Some(tree)
}

pub trait SourceStore {
    fn fetch(&self, project: &str, revision: &str) -> Result<Snapshot, StoreError>;
}

/// Snapshot directories under `<root>/<project>/<revision>/`.
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, project: &str, revision: &str) -> Option<PathBuf> {
        let safe = |s: &str| is_relative_path(s) && !s.contains('/');
        (safe(project) && safe(revision)).then(|| self.root.join(project).join(revision))
    }

    /// Stores `files` as `revision` of `project`. Re-publishing identical
    /// contents is a no-op.
    pub fn publish(&self, project: &str, revision: &str, files: &Tree) -> Result<(), StoreError> {
        let dir = self.dir(project, revision).ok_or_else(|| StoreError::BadTree {
            path: self.root.clone(),
            message: format!("invalid project/revision {project:?}/{revision:?}"),
        })?;
        if dir.exists() {
            return if read_tree(&dir)? == *files {
                Ok(())
            } else {
                Err(StoreError::Conflict { project: project.into(), revision: revision.into() })
            };
        }
        let tmp = self.root.join(project).join(format!(".{revision}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        write_tree(&tmp, files)?;
        fs::rename(&tmp, &dir).map_err(io_err(&dir))
    }
}

impl SourceStore for DirStore {
    fn fetch(&self, project: &str, revision: &str) -> Result<Snapshot, StoreError> {
        let missing =
            || StoreError::MissingSnapshot { project: project.into(), revision: revision.into() };
        let dir = self.dir(project, revision).ok_or_else(missing)?;
        if !dir.is_dir() {
            return Err(missing());
        }
        Ok(Snapshot { id: revision.to_owned(), files: read_tree(&dir)? })
    }
}

/// A store backed by a function, for tests and in-memory fixtures.
pub struct FnStore<F>(pub F);

impl<F> SourceStore for FnStore<F>
where
    F: Fn(&str, &str) -> Option<Snapshot>,
{
    fn fetch(&self, project: &str, revision: &str) -> Result<Snapshot, StoreError> {
        (self.0)(project, revision).ok_or_else(|| StoreError::MissingSnapshot {
            project: project.into(),
            revision: revision.into(),
        })
    }
}
