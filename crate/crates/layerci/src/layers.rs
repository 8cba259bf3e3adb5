// SPDX-License-Identifier: Apache-2.0

//! Layer discovery in a synced workspace and task-graph assembly.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use layerci_core::layer::{Layer, LayerError, LayerFiles, LayerSet};
use layerci_core::manifest::WorkspaceState;
use layerci_core::taskgraph::{self, GraphError, TaskGraph};

use crate::sync::{scan_sources, SyncError};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("project {project:?} at {path} looks like a layer but has no conf/layer.conf")]
    MissingConf { project: String, path: PathBuf },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no image recipe named {0:?} in any layer")]
    UnknownImage(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sync(#[from] SyncError),
}

/// The layer set together with the project each layer was loaded from.
#[derive(Debug, Clone)]
pub struct LoadedLayers {
    pub set: LayerSet,
    /// layer name → project name
    pub origin: BTreeMap<String, String>,
}

fn collect(dir: &Path, ext: &str, recursive: bool, rel_base: &str) -> Result<Vec<(String, String)>, LoadError> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let walker = walkdir::WalkDir::new(dir).min_depth(1).max_depth(if recursive { usize::MAX } else { 1 });
    for entry in walker.sort_by_file_name() {
        let entry = entry.map_err(|e| LoadError::Io {
            path: dir.to_path_buf(),
            source: e.into_io_error().unwrap_or_else(|| io::Error::other("walk error")),
        })?;
        if !entry.file_type().is_file() || entry.path().extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("child of dir");
        let rel = format!("{rel_base}/{}", rel.to_string_lossy().replace(std::path::MAIN_SEPARATOR, "/"));
        let text = fs::read_to_string(entry.path())
            .map_err(|source| LoadError::Io { path: entry.path().to_path_buf(), source })?;
        out.push((rel, text));
    }
    Ok(out)
}

/// Finds every layer in the workspace and parses its recipes and images.
///
/// A project is a layer if it has `conf/layer.conf`. A project named
/// `meta-*`, or one with a `recipes/` directory, but without the conf
/// file is an error rather than silently ignored.
pub fn load_layers(ws: &WorkspaceState) -> Result<LoadedLayers, LoadError> {
    let root = Path::new(&ws.root);
    let mut layers = Vec::new();
    let mut origin = BTreeMap::new();
    for e in &ws.entries {
        let dir = root.join(&e.path);
        let conf = dir.join("conf/layer.conf");
        if !conf.is_file() {
            if e.name.starts_with("meta-") || dir.join("recipes").is_dir() {
                return Err(LoadError::MissingConf { project: e.name.clone(), path: dir });
            }
            continue;
        }
        let conf_text =
            fs::read_to_string(&conf).map_err(|source| LoadError::Io { path: conf.clone(), source })?;
        let files = LayerFiles {
            conf_path: format!("{}/conf/layer.conf", e.path),
            conf_text,
            recipes: collect(&dir.join("recipes"), "recipe", true, &format!("{}/recipes", e.path))?,
            images: collect(&dir.join("images"), "image", false, &format!("{}/images", e.path))?,
        };
        let layer = Layer::from_files(files)?;
        origin.insert(layer.name.clone(), e.name.clone());
        layers.push(layer);
    }
    Ok(LoadedLayers { set: LayerSet::new(layers)?, origin })
}

/// Task graph for building image `image` from the checked-out workspace.
pub fn image_graph(ws: &WorkspaceState, layers: &LayerSet, image: &str) -> Result<TaskGraph, LoadError> {
    let img = layers.image(image).ok_or_else(|| LoadError::UnknownImage(image.into()))?;
    let sources = scan_sources(ws)?;
    Ok(taskgraph::build_task_graph(&img.value, layers, &sources)?)
}

/// Task graph for building `recipes` (with their build-time dependencies).
pub fn recipe_graph(ws: &WorkspaceState, layers: &LayerSet, recipes: &[String]) -> Result<TaskGraph, LoadError> {
    let sources = scan_sources(ws)?;
    Ok(taskgraph::build_recipe_graph(recipes, layers, &sources)?)
}
