// SPDX-License-Identifier: Apache-2.0

//! Materializing a pinned manifest into a workspace directory.
//!
//! The workspace root holds one directory per project plus
//! [`STATE_FILE`], which records what the last sync wrote. Paths recorded
//! there are owned by the sync and may be replaced; any other existing,
//! non-empty directory at a project path is foreign and is never touched.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use layerci_core::manifest::{Manifest, WorkspaceEntry, WorkspaceState};
use layerci_core::taskgraph::SourceInfo;

use crate::store::{self, read_tree, write_tree, SourceStore, StoreError, Tree};

pub const STATE_FILE: &str = ".layerci-sync.json";

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("workspace root {path} is not writable: {source}")]
    Unwritable { path: PathBuf, source: io::Error },
    #[error("{path} already exists and was not created by a sync; refusing to overwrite")]
    ForeignFiles { path: PathBuf },
    #[error("project paths {outer:?} and {inner:?} overlap")]
    NestedPaths { outer: String, inner: String },
    #[error("sync state {path} is unreadable: {message}")]
    CorruptState { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SyncError + '_ {
    move |source| SyncError::Io { path: path.to_path_buf(), source }
}

/// Reads the state left by the previous sync of `root`, if any.
pub fn load_state(root: &Path) -> Result<Option<WorkspaceState>, SyncError> {
    let path = root.join(STATE_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| SyncError::CorruptState { path, message: e.to_string() }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(SyncError::Io { path, source: e }),
    }
}

fn check_nesting(m: &Manifest) -> Result<(), SyncError> {
    let mut paths: Vec<&str> = m.projects.iter().map(|p| p.path.as_str()).collect();
    paths.sort();
    for pair in paths.windows(2) {
        if pair[1].strip_prefix(pair[0]).is_some_and(|rest| rest.starts_with('/')) {
            return Err(SyncError::NestedPaths { outer: pair[0].into(), inner: pair[1].into() });
        }
    }
    Ok(())
}

fn is_empty_dir(path: &Path) -> io::Result<bool> {
    Ok(path.is_dir() && fs::read_dir(path)?.next().is_none())
}

/// Checks out every project of `m` under `root` and returns the resulting state.
///
/// All snapshots are fetched before anything is written, so a missing
/// snapshot leaves the workspace untouched. Projects whose checked-out
/// tree already matches are skipped.
pub fn sync_workspace(
    m: &Manifest,
    store: &dyn SourceStore,
    root: &Path,
) -> Result<WorkspaceState, SyncError> {
    check_nesting(m)?;
    let mut snapshots = BTreeMap::new();
    for p in &m.projects {
        snapshots.insert(p.name.as_str(), (p, store.fetch(&p.name, &p.revision)?));
    }

    fs::create_dir_all(root).map_err(|source| SyncError::Unwritable { path: root.into(), source })?;
    let previous = load_state(root)?;
    let owned = |path: &str| {
        previous.as_ref().is_some_and(|s| s.entries.iter().any(|e| e.path == path))
    };

    let mut entries = Vec::new();
    for (p, snap) in snapshots.values() {
        let target = root.join(&p.path);
        let digest = snap.digest();
        if target.exists() {
            if owned(&p.path) {
                let on_disk = read_tree(&target)?;
                if store::digest_of(&on_disk) != digest {
                    fs::remove_dir_all(&target).map_err(io_err(&target))?;
                    write_tree(&target, &snap.files)?;
                }
            } else if is_empty_dir(&target).map_err(io_err(&target))? {
                write_tree(&target, &snap.files)?;
            } else {
                return Err(SyncError::ForeignFiles { path: target });
            }
        } else {
            write_tree(&target, &snap.files)?;
        }
        log::debug!("synced {} at {} -> {}", p.name, snap.id, p.path);
        entries.push(WorkspaceEntry {
            name: p.name.clone(),
            path: p.path.clone(),
            snapshot_id: snap.id.clone(),
            digest,
        });
    }

    if let Some(prev) = &previous {
        for e in &prev.entries {
            if !m.projects.iter().any(|p| p.path == e.path) {
                let stale = root.join(&e.path);
                if stale.exists() {
                    fs::remove_dir_all(&stale).map_err(io_err(&stale))?;
                }
            }
        }
    }

    let state = WorkspaceState::new(root.display().to_string(), entries);
    let state_path = root.join(STATE_FILE);
    let json = layerci_core::canonical_json(&state);
    fs::write(&state_path, json)
        .map_err(|source| SyncError::Unwritable { path: state_path.clone(), source })?;
    Ok(state)
}

/// The files of each project as currently checked out, by project name.
pub fn workspace_trees(ws: &WorkspaceState) -> Result<BTreeMap<String, Tree>, SyncError> {
    let root = Path::new(&ws.root);
    let mut out = BTreeMap::new();
    for e in &ws.entries {
        out.insert(e.name.clone(), read_tree(&root.join(&e.path))?);
    }
    Ok(out)
}

/// Digest and sentinel status of each project as currently checked out.
pub fn scan_sources(ws: &WorkspaceState) -> Result<BTreeMap<String, SourceInfo>, SyncError> {
    Ok(workspace_trees(ws)?
        .into_iter()
        .map(|(name, tree)| {
            let info = SourceInfo { digest: store::digest_of(&tree), compile_fails: store::has_compile_fail(&tree) };
            (name, info)
        })
        .collect())
}
