// SPDX-License-Identifier: Apache-2.0

//! Helpers shared by the integration tests: the fixture store, synced
//! workspaces, builds and throwaway cache services.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use layerci::cache::{serve, CacheEndpoints, CacheService};
use layerci::executor::{execute_build, BuildError, BuildOutcome, LocalState, TreeArchives};
use layerci::layers::{image_graph, load_layers};
use layerci::pipeline::{copy_store, CiConfig, CiContext};
use layerci::store::DirStore;
use layerci::sync::{sync_workspace, workspace_trees};
use layerci_core::manifest::{parse_manifest, WorkspaceState};
use layerci_core::taskgraph::TaskGraph;

pub const IMAGE: &str = "core-image-minimal";

pub fn fixture_store() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/store")
}

pub fn fixture_manifest() -> PathBuf {
    fixture_store().join("manifest/kirkstone/manifest.xml")
}

/// Syncs the fixture manifest into `root`.
pub fn sync_fixture(root: &Path) -> WorkspaceState {
    sync_from(&fixture_store(), root)
}

pub fn sync_from(store: &Path, root: &Path) -> WorkspaceState {
    let text = std::fs::read_to_string(store.join("manifest/kirkstone/manifest.xml")).unwrap();
    let m = parse_manifest(&text).unwrap();
    sync_workspace(&m, &DirStore::new(store), root).unwrap()
}

pub fn fixture_graph(ws: &WorkspaceState) -> TaskGraph {
    let layers = load_layers(ws).unwrap();
    image_graph(ws, &layers.set, IMAGE).unwrap()
}

/// Builds the image of `ws` with local state in `local_dir`.
pub fn build(
    ws: &WorkspaceState,
    local_dir: &Path,
    cache: Option<&CacheEndpoints>,
    jobs: usize,
) -> Result<BuildOutcome, BuildError> {
    let g = fixture_graph(ws);
    let local = LocalState::open(local_dir).unwrap();
    let trees = workspace_trees(ws).unwrap();
    let archives = TreeArchives::new(trees.values());
    execute_build(&g, cache, &local, &archives, jobs)
}

/// A cache service on ephemeral loopback ports.
pub fn start_cache(data_dir: &Path) -> CacheService {
    let cfg = CacheEndpoints { host: "127.0.0.1".into(), hashserv_port: 0, downloads_port: 0, sstate_port: 0 };
    serve(&cfg, data_dir).unwrap()
}

/// A CI context over a private copy of the fixture store.
pub fn ci_context(dir: &Path, cache: Option<CacheEndpoints>) -> CiContext {
    let store = dir.join("store");
    copy_store(&fixture_store(), &store).unwrap();
    let mut cfg = CiConfig::new(store, dir.join("work"));
    cfg.cache = cache;
    CiContext::open(cfg).unwrap()
}
